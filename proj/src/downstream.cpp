#include "trajrep/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace trajrep {

namespace {

void check_sizes(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw std::invalid_argument("metrics: prediction/truth size mismatch");
  }
}

}  // namespace

double mae(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_sizes(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_sizes(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  }
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double mape(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_sizes(pred, truth);
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] < 0.5) continue;
    s += std::abs(pred[i] - truth[i]) / truth[i];
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mape: no ground-truth value >= 0.5 minutes");
  return s / n;
}

F1Scores f1_scores(const std::vector<int>& pred, const std::vector<int>& truth, int num_classes) {
  if (pred.size() != truth.size() || pred.empty() || num_classes < 2) {
    throw std::invalid_argument("f1_scores: bad inputs");
  }
  std::vector<long> tp(static_cast<std::size_t>(num_classes), 0),
      fp(static_cast<std::size_t>(num_classes), 0), fn(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= num_classes || truth[i] < 0 || truth[i] >= num_classes) {
      throw std::out_of_range("f1_scores: label outside class range");
    }
    if (pred[i] == truth[i]) {
      ++tp[static_cast<std::size_t>(pred[i])];
    } else {
      ++fp[static_cast<std::size_t>(pred[i])];
      ++fn[static_cast<std::size_t>(truth[i])];
    }
  }
  long tp_sum = 0, fp_sum = 0, fn_sum = 0;
  double macro = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    const auto cs = static_cast<std::size_t>(c);
    tp_sum += tp[cs];
    fp_sum += fp[cs];
    fn_sum += fn[cs];
    const double denom = 2.0 * tp[cs] + fp[cs] + fn[cs];
    macro += denom > 0.0 ? 2.0 * tp[cs] / denom : 0.0;  // absent class scores 0
  }
  F1Scores out;
  const double micro_denom = 2.0 * tp_sum + fp_sum + fn_sum;
  out.micro_f1 = micro_denom > 0.0 ? 2.0 * tp_sum / micro_denom : 0.0;
  out.macro_f1 = macro / num_classes;
  return out;
}

BinaryMetrics binary_metrics(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw std::invalid_argument("binary_metrics: size mismatch");
  }
  long tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != 0 && pred[i] != 1) throw std::out_of_range("binary_metrics: non-binary label");
    if (pred[i] == 1 && truth[i] == 1) ++tp;
    else if (pred[i] == 1) ++fp;
    else if (truth[i] == 1) ++fn;
    else ++tn;
  }
  BinaryMetrics m;
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                      : 0.0;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(pred.size());
  return m;
}

PretrainDataset start_time_only(const PretrainDataset& data, double utc_offset_s) {
  PretrainDataset out = data;
  for (auto& seq : out.grid) {
    if (seq.empty()) continue;
    const double t0 = seq.front().t;
    for (auto& tok : seq) {
      tok.t = t0;
      tok.anchor.t = t0;
    }
  }
  for (auto& seq : out.road) {
    if (seq.empty()) continue;
    const double t0 = seq.front().t;
    for (auto& tok : seq) {
      tok.t = t0;
      fill_time_fields(tok, utc_offset_s);
    }
  }
  return out;
}

namespace {

// Shared fine-tuning driver; builds the scalar loss from the head outputs.
template <typename MakeLoss>
void finetune_loop(Model& model, const PretrainDataset& data, const std::vector<int>& train_rows,
                   const FinetuneOptions& opts, bool tte, MakeLoss make_loss) {
  AdamConfig adam;
  adam.lr = opts.lr;
  // Frozen-encoder mode: representations are computed once and only the head
  // trains on them.
  std::vector<std::vector<double>> frozen;
  if (opts.head_only) {
    for (int r : train_rows) {
      frozen.push_back(model.encode(data.grid[static_cast<std::size_t>(r)],
                                    data.road[static_cast<std::size_t>(r)]));
    }
  }
  long step = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    auto batches = make_batches(model, data, train_rows, opts.batch_size,
                                model.config().seed + 0x5eedull + static_cast<std::uint64_t>(epoch));
    for (const auto& batch : batches) {
      Tape t;
      ParamBinding p(t, model.params);
      Var reps{-1};
      if (opts.head_only) {
        const int d = model.config().embed_dim;
        Tensor m({static_cast<int>(batch.size()), d});
        for (std::size_t i = 0; i < batch.size(); ++i) {
          // map back from dataset row to its position in train_rows
          const auto it = std::find(train_rows.begin(), train_rows.end(), batch[i]);
          const auto& v = frozen[static_cast<std::size_t>(it - train_rows.begin())];
          for (int c = 0; c < d; ++c) m.at(static_cast<int>(i), c) = v[static_cast<std::size_t>(c)];
        }
        reps = t.constant(std::move(m));
      } else {
        std::vector<std::vector<GridToken>> gb;
        std::vector<std::vector<RoadToken>> rb;
        for (int r : batch) {
          gb.push_back(data.grid[static_cast<std::size_t>(r)]);
          rb.push_back(data.road[static_cast<std::size_t>(r)]);
        }
        reps = model.represent(p, gb, rb);
      }
      Var out = tte ? model.tte_head(p, reps) : model.cls_head(p, reps);
      Var loss = make_loss(t, out, batch);
      t.backward(loss);
      model.params.apply_gradients(p, adam);
      ++step;
    }
  }
}

}  // namespace

void finetune_tte(Model& model, const PretrainDataset& data, const std::vector<double>& minutes,
                  const std::vector<int>& train_rows, const FinetuneOptions& opts) {
  if (minutes.size() != data.size()) {
    throw std::invalid_argument("finetune_tte: label count mismatch");
  }
  const PretrainDataset masked_time = start_time_only(data, model.config().utc_offset_s);
  finetune_loop(model, masked_time, train_rows, opts, true,
                [&](Tape& t, Var out, const std::vector<int>& batch) {
                  Tensor y({static_cast<int>(batch.size()), 1});
                  for (std::size_t i = 0; i < batch.size(); ++i) {
                    y.at(static_cast<int>(i), 0) = minutes[static_cast<std::size_t>(batch[i])];
                  }
                  Var diff = t.sub(out, t.constant(std::move(y)));
                  return t.mean(t.mul(diff, diff));
                });
}

std::vector<double> predict_tte(Model& model, const PretrainDataset& data,
                                const std::vector<int>& rows) {
  const PretrainDataset masked_time = start_time_only(data, model.config().utc_offset_s);
  std::vector<double> preds;
  for (int r : rows) {
    Tape t;
    ParamBinding p(t, model.params);
    Var rep = model.represent(p, {masked_time.grid[static_cast<std::size_t>(r)]},
                              {masked_time.road[static_cast<std::size_t>(r)]});
    preds.push_back(t.val(model.tte_head(p, rep)).at(0, 0));
  }
  return preds;
}

void finetune_cls(Model& model, const PretrainDataset& data, const std::vector<int>& labels,
                  const std::vector<int>& train_rows, const FinetuneOptions& opts) {
  if (labels.size() != data.size()) {
    throw std::invalid_argument("finetune_cls: label count mismatch");
  }
  const int num_classes = model.params.value(model.params.handle("cls.b")).numel();
  for (int r : train_rows) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= num_classes) {
      throw std::out_of_range("finetune_cls: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(num_classes) + ")");
    }
  }
  finetune_loop(model, data, train_rows, opts, false,
                [&](Tape& t, Var out, const std::vector<int>& batch) {
                  std::vector<int> y;
                  for (int r : batch) y.push_back(labels[static_cast<std::size_t>(r)]);
                  return t.cross_entropy(out, y);
                });
}

std::vector<int> predict_cls(Model& model, const PretrainDataset& data,
                             const std::vector<int>& rows) {
  std::vector<int> preds;
  for (int r : rows) {
    Tape t;
    ParamBinding p(t, model.params);
    Var rep = model.represent(p, {data.grid[static_cast<std::size_t>(r)]},
                              {data.road[static_cast<std::size_t>(r)]});
    const Tensor& logits = t.val(model.cls_head(p, rep));
    int arg = 0;
    for (int c = 1; c < logits.dim(1); ++c) {
      if (logits.at(0, c) > logits.at(0, arg)) arg = c;
    }
    preds.push_back(arg);
  }
  return preds;
}

SimBenchmark build_sim_benchmark(const std::vector<GpsTrajectory>& corpus,
                                 const MapMatcher& matcher, const GridSpec& spec,
                                 const SimBenchParams& params, std::uint64_t seed,
                                 double utc_offset_s) {
  if (params.num_queries < 1 || params.num_negatives < 0) {
    throw std::invalid_argument("build_sim_benchmark: bad sizes");
  }
  std::mt19937_64 rng(seed);
  std::vector<int> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  auto expressions = [&](const GpsTrajectory& gps, std::vector<GridToken>& grid,
                         std::vector<RoadToken>& road) {
    road = matcher.match_tokens(gps, utc_offset_s);
    grid = to_grid_trajectory(gps, spec);
  };

  SimBenchmark bench;
  int tried = 0;
  std::vector<int> used;
  std::bernoulli_distribution keep(params.downsample_keep);
  for (int idx : order) {
    if (static_cast<int>(bench.queries.size()) >= params.num_queries) break;
    const GpsTrajectory& orig = corpus[static_cast<std::size_t>(idx)];
    if (orig.points.size() < 4) continue;
    ++tried;
    std::vector<GridToken> qg;
    std::vector<RoadToken> qr;
    try {
      expressions(orig, qg, qr);
    } catch (const std::runtime_error&) {
      continue;
    } catch (const std::out_of_range&) {
      continue;
    }
    std::vector<int> orig_path;
    for (const auto& tok : qr) orig_path.push_back(tok.segment_id);
    // A plain point downsample usually map-matches back to the identical
    // route, so most attempts also truncate a random fraction of the journey
    // from one end; the actual change rate is always verified against the
    // band before acceptance.
    bool accepted = false;
    for (int attempt = 0; attempt < 10 && !accepted; ++attempt) {
      std::vector<GpsPoint> pts = orig.points;
      if (attempt > 0) {
        std::uniform_real_distribution<double> frac(params.min_change_rate,
                                                    params.max_change_rate);
        const auto cut = static_cast<std::size_t>(frac(rng) * static_cast<double>(pts.size()));
        if (cut + 4 > pts.size()) continue;
        if (rng() % 2 == 0) {
          pts.erase(pts.begin(), pts.begin() + static_cast<std::ptrdiff_t>(cut));
        } else {
          pts.erase(pts.end() - static_cast<std::ptrdiff_t>(cut), pts.end());
        }
      }
      GpsTrajectory variant;
      variant.id = orig.id + "#v";
      variant.points.push_back(pts.front());
      for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
        if (keep(rng)) variant.points.push_back(pts[i]);
      }
      variant.points.push_back(pts.back());
      std::vector<GridToken> pg;
      std::vector<RoadToken> pr;
      try {
        expressions(variant, pg, pr);
      } catch (const std::runtime_error&) {
        continue;  // unmatchable variant; try another attempt
      } catch (const std::out_of_range&) {
        continue;  // wandered off the configured grid
      }
      std::vector<int> var_path;
      for (const auto& tok : pr) var_path.push_back(tok.segment_id);
      const double rate = change_rate(orig_path, var_path);
      if (rate < params.min_change_rate || rate > params.max_change_rate) continue;
      bench.queries.ids.push_back(orig.id);
      bench.queries.grid.push_back(qg);
      bench.queries.road.push_back(qr);
      bench.positives.ids.push_back(variant.id);
      bench.positives.grid.push_back(std::move(pg));
      bench.positives.road.push_back(std::move(pr));
      used.push_back(idx);
      accepted = true;
    }
  }
  if (static_cast<int>(bench.queries.size()) < params.num_queries) {
    throw std::runtime_error(
        "build_sim_benchmark: only " + std::to_string(bench.queries.size()) + " of " +
        std::to_string(params.num_queries) + " queries accepted (" + std::to_string(tried) +
        " candidates tried); corpus too small or change-rate band too tight");
  }
  std::sort(used.begin(), used.end());
  std::vector<int> pool;
  for (int idx : order) {
    if (!std::binary_search(used.begin(), used.end(), idx)) pool.push_back(idx);
  }
  if (static_cast<int>(pool.size()) < params.num_negatives) {
    throw std::runtime_error("build_sim_benchmark: " + std::to_string(pool.size()) +
                             " negatives available, " + std::to_string(params.num_negatives) +
                             " requested");
  }
  for (int i = 0; i < params.num_negatives; ++i) {
    const GpsTrajectory& neg = corpus[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)])];
    std::vector<GridToken> g;
    std::vector<RoadToken> r;
    expressions(neg, g, r);
    bench.negatives.ids.push_back(neg.id);
    bench.negatives.grid.push_back(std::move(g));
    bench.negatives.road.push_back(std::move(r));
  }
  return bench;
}

std::vector<int> cosine_ranks(const std::vector<std::vector<double>>& queries,
                              const std::vector<std::vector<double>>& database) {
  auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ab += a[i] * b[i];
      aa += a[i] * a[i];
      bb += b[i] * b[i];
    }
    const double d = std::sqrt(aa) * std::sqrt(bb);
    if (d == 0.0) throw std::domain_error("cosine_ranks: zero representation");
    return ab / d;
  };
  std::vector<int> ranks;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const double truth = cos(queries[q], database[q]);
    int better = 0;
    for (std::size_t j = 0; j < database.size(); ++j) {
      if (j != q && cos(queries[q], database[j]) > truth) ++better;
    }
    ranks.push_back(1 + better);
  }
  return ranks;
}

SimMetrics eval_similarity(Model& model, const SimBenchmark& bench) {
  const std::size_t nq = bench.queries.size();
  if (nq == 0 || bench.positives.size() != nq) {
    throw std::invalid_argument("eval_similarity: malformed benchmark");
  }
  auto encode_all = [&](const PretrainDataset& ds) {
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(model.encode(ds.grid[i], ds.road[i]));
    return out;
  };
  auto qv = encode_all(bench.queries);
  auto db = encode_all(bench.positives);
  for (auto& v : encode_all(bench.negatives)) db.push_back(std::move(v));
  const auto ranks = cosine_ranks(qv, db);
  SimMetrics m;
  for (int r : ranks) {
    m.mr += r;
    if (r <= 1) m.hr1 += 1.0;
    if (r <= 5) m.hr5 += 1.0;
  }
  m.mr /= static_cast<double>(nq);
  m.hr1 /= static_cast<double>(nq);
  m.hr5 /= static_cast<double>(nq);
  return m;
}

}  // namespace trajrep
