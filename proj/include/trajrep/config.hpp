#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace trajrep {

// One flat bag of hyperparameters and paths for a run. Loaded from a
// key = value file, overridable per key from the command line.
struct RunConfig {
  // model dimensions; hidden_dim must stay at 2 * embed_dim
  int embed_dim = 128;   // d
  int hidden_dim = 256;  // h
  int gat_layers = 3;
  int road_layers = 4;
  int grid_layers = 2;
  int interactor_layers = 2;
  int road_heads = 4;
  int grid_heads = 4;
  int interactor_heads = 2;
  double dropout = 0.1;

  // pretraining
  double mask_ratio = 0.2;
  int mask_span = 2;
  double temperature = 0.07;  // initial contrastive temperature
  int batch_size = 128;
  int epochs = 30;
  double learning_rate = 2e-4;

  // data
  double grid_cell_m = 100.0;
  double min_length_m = 1000.0;  // ingestion drop threshold
  double split_train = 0.6;
  double split_val = 0.2;
  double split_test = 0.2;
  double utc_offset_s = 0.0;

  // synthetic world overrides
  int synth_rows = 10;
  int synth_cols = 10;
  int synth_trajectories = 1000;
  double synth_noise_m = 10.0;
  int synth_classes = 4;

  std::uint64_t seed = 42;
  std::string data_dir = "data";

  // Throws std::invalid_argument on violated invariants
  // (hidden_dim != 2 * embed_dim, nonpositive counts, bad split ratios).
  void validate() const;

  // Canonical key = value form, keys sorted; parse(serialize(c)) == c.
  std::string serialize() const;
  static RunConfig parse(const std::map<std::string, std::string>& kv);
  std::map<std::string, std::string> to_map() const;

  // FNV-1a over the canonical serialization, hex-encoded.
  std::string hash() const;
};

// key = value per line; '#' comments and blank lines ignored.
std::map<std::string, std::string> read_config_file(const std::string& path);
std::map<std::string, std::string> read_config_string(const std::string& text);

// Deterministic split assignment: 0 train, 1 val, 2 test, by FNV-1a of the
// trajectory id against the configured ratios.
int split_of(const std::string& traj_id, const RunConfig& cfg);

}  // namespace trajrep
