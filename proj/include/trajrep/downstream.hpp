#pragma once

#include <vector>

#include "trajrep/match.hpp"
#include "trajrep/pretrain.hpp"

namespace trajrep {

// --- metric formulas ---

double mae(const std::vector<double>& pred, const std::vector<double>& truth);
double rmse(const std::vector<double>& pred, const std::vector<double>& truth);
// Mean absolute percentage error; ground-truth values under 0.5 minutes are
// skipped.
double mape(const std::vector<double>& pred, const std::vector<double>& truth);

struct F1Scores {
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
};
// Single-label multi-class scores; a class with no support and no predictions
// contributes 0 to the macro average.
F1Scores f1_scores(const std::vector<int>& pred, const std::vector<int>& truth, int num_classes);

struct BinaryMetrics {
  double precision = 0.0, recall = 0.0, f1 = 0.0, accuracy = 0.0;
};
BinaryMetrics binary_metrics(const std::vector<int>& pred, const std::vector<int>& truth);

// --- fine-tuning ---

struct FinetuneOptions {
  int epochs = 10;
  int batch_size = 32;
  double lr = 1e-4;
  bool head_only = false;
};

// Travel-time toks carry only the journey's start time: every timestamp is
// replaced by the first one before encoding, so predictions cannot read
// duration off the clock.
PretrainDataset start_time_only(const PretrainDataset& data, double utc_offset_s = 0.0);

// Mean-squared-error fine-tuning of the representation plus the travel-time
// head on minutes. Applies start_time_only internally.
void finetune_tte(Model& model, const PretrainDataset& data, const std::vector<double>& minutes,
                  const std::vector<int>& train_rows, const FinetuneOptions& opts);
std::vector<double> predict_tte(Model& model, const PretrainDataset& data,
                                const std::vector<int>& rows);

// Cross-entropy fine-tuning of the classification head.
void finetune_cls(Model& model, const PretrainDataset& data, const std::vector<int>& labels,
                  const std::vector<int>& train_rows, const FinetuneOptions& opts);
std::vector<int> predict_cls(Model& model, const PretrainDataset& data,
                             const std::vector<int>& rows);

// --- most-similar-trajectory search ---

struct SimBenchmark {
  // query i's true match is positives entry i; the search database is
  // positives followed by negatives
  PretrainDataset queries;
  PretrainDataset positives;
  PretrainDataset negatives;
};

struct SimBenchParams {
  int num_queries = 200;
  int num_negatives = 5000;
  double downsample_keep = 0.5;    // interior-point keep probability
  double min_change_rate = 0.3;
  double max_change_rate = 0.5;
};

// Builds query/positive pairs by endpoint-preserving downsampling and
// re-matching; accepts a variant iff its road change rate lands in the
// configured band. Throws std::runtime_error (reporting the acceptance rate)
// when the corpus cannot fill the requested counts.
SimBenchmark build_sim_benchmark(const std::vector<GpsTrajectory>& corpus, const MapMatcher& matcher,
                                 const GridSpec& spec, const SimBenchParams& params,
                                 std::uint64_t seed, double utc_offset_s = 0.0);

struct SimMetrics {
  double mr = 0.0, hr1 = 0.0, hr5 = 0.0;
};

// Rank of each query's positive in the database under descending cosine of
// encode() representations; rank = 1 + number of strictly better entries.
SimMetrics eval_similarity(Model& model, const SimBenchmark& bench);

// Rank helper shared with tests: ranks[i] for query vector i against the
// database, truth at database index i.
std::vector<int> cosine_ranks(const std::vector<std::vector<double>>& queries,
                              const std::vector<std::vector<double>>& database);

}  // namespace trajrep
