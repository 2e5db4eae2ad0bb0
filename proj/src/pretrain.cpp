#include "trajrep/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <stdexcept>

namespace trajrep {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Masked positions as flat rows of a packed batch, plus their vocabulary
// targets.
struct MaskLayout {
  std::vector<MaskPlan> plans;
  std::vector<int> rows;
  std::vector<int> targets;
};

template <typename Token, typename TargetOf>
MaskLayout plan_batch_masks(const Model& model, const std::vector<std::vector<Token>>& seqs,
                            const std::vector<int>& data_rows, long step, TargetOf target_of) {
  const RunConfig& cfg = model.config();
  MaskLayout ml;
  int stride = 1;
  for (const auto& s : seqs) stride = std::max(stride, static_cast<int>(s.size()) + 1);
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    const std::uint64_t seed =
        mix(mix(cfg.seed, static_cast<std::uint64_t>(step)),
            static_cast<std::uint64_t>(data_rows[s]));
    MaskPlan plan = plan_mask(static_cast<int>(seq.size()), cfg.mask_ratio, cfg.mask_span, seed);
    for (int pos : plan.positions) {
      ml.rows.push_back(static_cast<int>(s) * stride + 1 + pos);
      ml.targets.push_back(target_of(seq[static_cast<std::size_t>(pos)]));
    }
    ml.plans.push_back(std::move(plan));
  }
  return ml;
}

}  // namespace

Var contrastive_loss(Tape& t, Var vg, Var vr, Var temp) {
  const Tensor& g = t.val(vg);
  if (g.ndim() != 2 || t.val(vr).ndim() != 2 || t.val(vr).dim(0) != g.dim(0)) {
    throw std::invalid_argument("contrastive_loss: want matching [N,d] summaries");
  }
  const int n = g.dim(0);
  Var sims = t.matmul_nt(t.l2_normalize_rows(vg), t.l2_normalize_rows(vr));
  Var logits = t.scale_var(sims, t.reciprocal(temp));
  std::vector<int> diag(static_cast<std::size_t>(n));
  std::iota(diag.begin(), diag.end(), 0);
  Var fwd = t.cross_entropy(logits, diag);
  Var bwd = t.cross_entropy(t.transpose(logits), diag);
  return t.scale(t.add(fwd, bwd), 0.5);
}

LossParts pretrain_step(Model& model, const PretrainDataset& data, const std::vector<int>& batch,
                        long step) {
  const RunConfig& cfg = model.config();
  if (batch.empty()) throw std::invalid_argument("pretrain_step: empty batch");
  Tape t;
  ParamBinding p(t, model.params);
  std::mt19937_64 drop_rng(mix(cfg.seed, 0xd09ull + static_cast<std::uint64_t>(step)));
  std::mt19937_64* rng = cfg.dropout > 0.0 ? &drop_rng : nullptr;

  std::vector<std::vector<GridToken>> gb;
  std::vector<std::vector<RoadToken>> rb;
  for (int r : batch) {
    if (r < 0 || r >= static_cast<int>(data.size())) {
      throw std::out_of_range("pretrain_step: row " + std::to_string(r));
    }
    if (model.variant() != Variant::road_only) gb.push_back(data.grid[static_cast<std::size_t>(r)]);
    if (model.variant() != Variant::grid_only) rb.push_back(data.road[static_cast<std::size_t>(r)]);
  }

  Var l_cl{-1}, l_mlm{-1};
  if (model.variant() == Variant::full) {
    Var grid_tab = model.grid_table(p);
    Var road_tab = model.road_table(p);
    EncoderOut g = model.grid_forward(p, gb, grid_tab, nullptr, rng);
    EncoderOut r1 = model.road_forward(p, rb, road_tab, nullptr, rng);
    l_cl = contrastive_loss(t, g.summary, r1.summary, model.temperature(p));
    auto ml = plan_batch_masks(model, rb, batch, step,
                               [](const RoadToken& tok) { return tok.segment_id; });
    if (!ml.rows.empty()) {
      EncoderOut r2 = model.road_forward(p, rb, road_tab, &ml.plans, rng);
      EncoderOut zm = model.interact(p, r2, g, rng);
      l_mlm = t.cross_entropy(model.mlm_logits(p, zm.z, ml.rows), ml.targets);
    }
  } else if (model.variant() == Variant::road_only) {
    auto ml = plan_batch_masks(model, rb, batch, step,
                               [](const RoadToken& tok) { return tok.segment_id; });
    if (!ml.rows.empty()) {
      EncoderOut r = model.road_forward(p, rb, model.road_table(p), &ml.plans, rng);
      l_mlm = t.cross_entropy(model.mlm_logits(p, r.z, ml.rows), ml.targets);
    }
  } else {  // grid_only
    auto ml = plan_batch_masks(model, gb, batch, step,
                               [](const GridToken& tok) { return tok.cell_id; });
    if (!ml.rows.empty()) {
      EncoderOut g = model.grid_forward(p, gb, model.grid_table(p), &ml.plans, rng);
      l_mlm = t.cross_entropy(model.mlm_logits(p, g.z, ml.rows), ml.targets);
    }
  }

  LossParts parts;
  Var total{-1};
  if (l_cl.i >= 0) {
    parts.l_cl = t.val(l_cl)[0];
    total = l_cl;
  }
  if (l_mlm.i >= 0) {
    parts.l_mlm = t.val(l_mlm)[0];
    total = total.i >= 0 ? t.add(total, l_mlm) : l_mlm;
  }
  if (total.i < 0) return parts;  // nothing to learn from (all sequences too short to mask)
  parts.l_total = t.val(total)[0];
  t.backward(total);
  AdamConfig opt;
  opt.lr = cfg.learning_rate;
  model.params.apply_gradients(p, opt);
  return parts;
}

std::vector<std::vector<int>> make_batches(const Model& model, const PretrainDataset& data,
                                           const std::vector<int>& rows, int batch_size,
                                           std::uint64_t shuffle_seed) {
  std::vector<int> order = rows;
  // Length-bucketing: sorting by sequence length keeps padding small; ties
  // break on the row index for determinism.
  auto len_of = [&](int r) {
    return model.variant() == Variant::grid_only
               ? static_cast<int>(data.grid[static_cast<std::size_t>(r)].size())
               : static_cast<int>(data.road[static_cast<std::size_t>(r)].size());
  };
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const int la = len_of(a), lb = len_of(b);
    return la != lb ? la < lb : a < b;
  });
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t j = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(j));
  }
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

std::vector<LossRow> pretrain(Model& model, const PretrainDataset& data,
                              const std::vector<int>& train_rows, int epochs,
                              const std::function<void(const LossRow&)>& on_step) {
  std::vector<LossRow> trace;
  long step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto batches = make_batches(model, data, train_rows, model.config().batch_size,
                                      mix(model.config().seed, 0xbacca + static_cast<std::uint64_t>(epoch)));
    for (const auto& batch : batches) {
      const auto t0 = std::chrono::steady_clock::now();
      const LossParts parts = pretrain_step(model, data, batch, step);
      const auto t1 = std::chrono::steady_clock::now();
      LossRow row;
      row.step = step++;
      row.epoch = epoch;
      row.l_cl = parts.l_cl;
      row.l_mlm = parts.l_mlm;
      row.l_total = parts.l_total;
      row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      trace.push_back(row);
      if (on_step) on_step(row);
    }
  }
  return trace;
}

double masked_recovery_accuracy(Model& model, const PretrainDataset& data,
                                const std::vector<int>& rows) {
  Tape t;
  ParamBinding p(t, model.params);
  std::vector<std::vector<GridToken>> gb;
  std::vector<std::vector<RoadToken>> rb;
  for (int r : rows) {
    if (model.variant() != Variant::road_only) gb.push_back(data.grid[static_cast<std::size_t>(r)]);
    if (model.variant() != Variant::grid_only) rb.push_back(data.road[static_cast<std::size_t>(r)]);
  }
  Var logits{-1};
  std::vector<int> targets;
  if (model.variant() == Variant::grid_only) {
    auto ml = plan_batch_masks(model, gb, rows, 0,
                               [](const GridToken& tok) { return tok.cell_id; });
    if (ml.rows.empty()) return 0.0;
    EncoderOut g = model.grid_forward(p, gb, model.grid_table(p), &ml.plans);
    logits = model.mlm_logits(p, g.z, ml.rows);
    targets = ml.targets;
  } else {
    auto ml = plan_batch_masks(model, rb, rows, 0,
                               [](const RoadToken& tok) { return tok.segment_id; });
    if (ml.rows.empty()) return 0.0;
    EncoderOut r = model.road_forward(p, rb, model.road_table(p), &ml.plans);
    if (model.variant() == Variant::full) {
      EncoderOut g = model.grid_forward(p, gb, model.grid_table(p));
      EncoderOut zm = model.interact(p, r, g);
      logits = model.mlm_logits(p, zm.z, ml.rows);
    } else {
      logits = model.mlm_logits(p, r.z, ml.rows);
    }
    targets = ml.targets;
  }
  const Tensor& lv = t.val(logits);
  int hits = 0;
  for (int i = 0; i < lv.dim(0); ++i) {
    int arg = 0;
    for (int j = 1; j < lv.dim(1); ++j) {
      if (lv.at(i, j) > lv.at(i, arg)) arg = j;
    }
    if (arg == targets[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / lv.dim(0);
}

double inbatch_hr1(Model& model, const PretrainDataset& data, const std::vector<int>& rows) {
  if (model.variant() != Variant::full) {
    throw std::logic_error("inbatch_hr1: needs both encoders");
  }
  Tape t;
  ParamBinding p(t, model.params);
  std::vector<std::vector<GridToken>> gb;
  std::vector<std::vector<RoadToken>> rb;
  for (int r : rows) {
    gb.push_back(data.grid[static_cast<std::size_t>(r)]);
    rb.push_back(data.road[static_cast<std::size_t>(r)]);
  }
  EncoderOut g = model.grid_forward(p, gb, model.grid_table(p));
  EncoderOut r = model.road_forward(p, rb, model.road_table(p));
  Var sims = t.matmul_nt(t.l2_normalize_rows(g.summary), t.l2_normalize_rows(r.summary));
  const Tensor& s = t.val(sims);
  int hits = 0;
  for (int i = 0; i < s.dim(0); ++i) {
    int arg = 0;
    for (int j = 1; j < s.dim(1); ++j) {
      if (s.at(i, j) > s.at(i, arg)) arg = j;
    }
    if (arg == i) ++hits;
  }
  return static_cast<double>(hits) / s.dim(0);
}

}  // namespace trajrep
