#pragma once

#include <functional>
#include <string>
#include <vector>

#include "trajrep/io.hpp"
#include "trajrep/model.hpp"

namespace trajrep {

// Aligned dual expressions: entry i of grid and road describes the same
// journey.
struct PretrainDataset {
  std::vector<std::string> ids;
  std::vector<std::vector<GridToken>> grid;
  std::vector<std::vector<RoadToken>> road;

  std::size_t size() const { return ids.size(); }
};

// Symmetric in-batch contrastive loss over cosine similarities with a scalar
// temperature: mean of the grid-to-road and road-to-grid directions.
Var contrastive_loss(Tape& t, Var vg, Var vr, Var temp);

struct LossParts {
  double l_cl = 0.0, l_mlm = 0.0, l_total = 0.0;
};

// One optimizer step on the given batch rows. Deterministic per
// (model params, batch, step index): masking and dropout derive their seeds
// from the config seed and the step index.
LossParts pretrain_step(Model& model, const PretrainDataset& data, const std::vector<int>& batch,
                        long step);

// Full loop: buckets train rows by length, shuffles batch order per epoch,
// reports one LossRow per step.
std::vector<LossRow> pretrain(Model& model, const PretrainDataset& data,
                              const std::vector<int>& train_rows, int epochs,
                              const std::function<void(const LossRow&)>& on_step = {});

// Deterministic length-bucketed batches for one epoch.
std::vector<std::vector<int>> make_batches(const Model& model, const PretrainDataset& data,
                                           const std::vector<int>& rows, int batch_size,
                                           std::uint64_t shuffle_seed);

// Fraction of masked tokens whose vocabulary argmax equals the true id,
// without training, using the step-0 mask seeds.
double masked_recovery_accuracy(Model& model, const PretrainDataset& data,
                                const std::vector<int>& rows);

// In-batch retrieval: fraction of rows whose grid summary's nearest road
// summary (cosine) is its own pair. Full variant only.
double inbatch_hr1(Model& model, const PretrainDataset& data, const std::vector<int>& rows);

}  // namespace trajrep
