// Command-line surface for the dual-expression trajectory representation
// pipeline: synthetic-world generation, ingestion, pretraining, fine-tuning,
// similarity benchmarking, encoding, and gradient checking.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "trajrep/checkpoint.hpp"
#include "trajrep/downstream.hpp"
#include "trajrep/io.hpp"
#include "trajrep/match.hpp"
#include "trajrep/pretrain.hpp"
#include "trajrep/synth.hpp"

namespace fs = std::filesystem;
using namespace trajrep;
using nlohmann::json;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& overrides) {
  std::map<std::string, std::string> kv;
  if (!config_path.empty()) kv = read_config_file(config_path);
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("--set expects key=value, got: " + ov);
    }
    kv[ov.substr(0, eq)] = ov.substr(eq + 1);
  }
  RunConfig cfg = RunConfig::parse(kv);
  cfg.validate();
  return cfg;
}

// Everything a model run needs, loaded from an ingested data directory.
struct DataBundle {
  RoadNetwork net;
  GridSpec spec;
  std::vector<std::int64_t> flow;
  PretrainDataset data;
  std::vector<double> minutes;              // travel time per row (or -1)
  std::vector<int> labels;                  // class per row (or -1)
  std::vector<int> train_rows, val_rows, test_rows;
  std::vector<GpsTrajectory> gps;           // aligned with data rows
};

GridSpec load_grid_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j = json::parse(in);
  GridSpec spec;
  spec.origin_lon = j.at("origin_lon").get<double>();
  spec.origin_lat = j.at("origin_lat").get<double>();
  spec.cell_m = j.at("cell_m").get<double>();
  spec.rows = j.at("rows").get<int>();
  spec.cols = j.at("cols").get<int>();
  return spec;
}

void save_grid_spec(const std::string& path, const GridSpec& spec) {
  std::ofstream out(path);
  out.precision(17);
  json j{{"origin_lon", spec.origin_lon}, {"origin_lat", spec.origin_lat},
         {"cell_m", spec.cell_m},         {"rows", spec.rows},
         {"cols", spec.cols}};
  out << j.dump(2) << "\n";
}

std::vector<std::string> load_id_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

DataBundle load_bundle(const std::string& dir) {
  DataBundle b;
  b.net = load_network(dir + "/segments.csv", dir + "/edges.csv");
  b.spec = load_grid_spec(dir + "/grid.json");
  {
    std::ifstream in(dir + "/flow.json");
    if (!in) throw std::runtime_error("cannot open " + dir + "/flow.json");
    b.flow = json::parse(in).get<std::vector<std::int64_t>>();
  }
  auto grid_cache = load_grid_cache(dir + "/grid_cache.jsonl");
  auto road_cache = load_road_cache(dir + "/road_cache.jsonl");
  auto gps = load_gps_file(dir + "/world.jsonl");
  std::map<std::string, const GpsTrajectory*> by_id;
  for (const auto& t : gps) by_id[t.id] = &t;
  std::map<std::string, int> split_of_id;
  int which = 0;
  for (const char* name : {"train_ids.txt", "val_ids.txt", "test_ids.txt"}) {
    for (const auto& id : load_id_list(dir + "/" + name)) split_of_id[id] = which;
    ++which;
  }
  for (auto& [id, toks] : grid_cache) {
    auto rit = road_cache.find(id);
    auto sit = split_of_id.find(id);
    if (rit == road_cache.end() || sit == split_of_id.end()) continue;
    const int row = static_cast<int>(b.data.size());
    b.data.ids.push_back(id);
    b.data.grid.push_back(std::move(toks));
    b.data.road.push_back(std::move(rit->second));
    const GpsTrajectory* t = by_id.count(id) ? by_id.at(id) : nullptr;
    b.minutes.push_back(t && t->travel_time ? *t->travel_time : -1.0);
    b.labels.push_back(t && t->label ? *t->label : -1);
    b.gps.push_back(t ? *t : GpsTrajectory{});
    (sit->second == 0 ? b.train_rows : sit->second == 1 ? b.val_rows : b.test_rows).push_back(row);
  }
  if (b.data.size() == 0) throw std::runtime_error("no usable trajectories in " + dir);
  return b;
}

Model load_model(const std::string& ckpt_path, const DataBundle& b) {
  Variant variant = Variant::full;
  RunConfig cfg = peek_checkpoint(ckpt_path, variant);
  Model model(cfg, b.spec, b.net, b.flow, variant);
  load_checkpoint(ckpt_path, model);
  return model;
}

// Removes files this command was going to produce; called on failure so no
// partial artifact survives.
void cleanup(const std::vector<std::string>& paths) {
  for (const auto& p : paths) {
    std::error_code ec;
    fs::remove(p, ec);
  }
}

int cmd_synth(const RunConfig& cfg, const std::string& out_dir) {
  SynthConfig scfg;
  scfg.lattice_rows = cfg.synth_rows;
  scfg.lattice_cols = cfg.synth_cols;
  scfg.num_trajectories = cfg.synth_trajectories;
  scfg.noise_sigma_m = cfg.synth_noise_m;
  scfg.num_classes = cfg.synth_classes;
  auto world = synth_world(scfg, cfg.seed);
  fs::create_directories(out_dir);
  save_gps_file(out_dir + "/world.jsonl", world.trajectories);
  save_network(out_dir + "/segments.csv", out_dir + "/edges.csv", world.net);
  std::cout << "wrote " << world.trajectories.size() << " trajectories over "
            << world.net.size() << " segments to " << out_dir << "\n";
  return 0;
}

int cmd_ingest(const RunConfig& cfg, const std::string& dir) {
  const std::vector<std::string> outputs = {
      dir + "/grid.json",        dir + "/flow.json",       dir + "/grid_cache.jsonl",
      dir + "/road_cache.jsonl", dir + "/train_ids.txt",   dir + "/val_ids.txt",
      dir + "/test_ids.txt"};
  try {
    auto gps = load_gps_file(dir + "/world.jsonl");
    auto net = load_network(dir + "/segments.csv", dir + "/edges.csv");
    // length filter
    std::size_t before = gps.size();
    std::erase_if(gps, [&](const GpsTrajectory& t) { return t.path_length_m() < cfg.min_length_m; });
    std::cout << "length filter (< " << cfg.min_length_m << " m): kept " << gps.size() << " of "
              << before << "\n";
    if (gps.empty()) throw std::runtime_error("every trajectory was filtered out");
    // grid over the data extent plus a margin
    double lon_lo = 1e300, lon_hi = -1e300, lat_lo = 1e300, lat_hi = -1e300;
    auto grow = [&](const GpsPoint& p) {
      lon_lo = std::min(lon_lo, p.lon); lon_hi = std::max(lon_hi, p.lon);
      lat_lo = std::min(lat_lo, p.lat); lat_hi = std::max(lat_hi, p.lat);
    };
    for (const auto& t : gps) for (const auto& p : t.points) grow(p);
    for (const auto& s : net.segments) for (const auto& p : s.polyline) grow(p);
    GridSpec spec;
    spec.cell_m = cfg.grid_cell_m;
    LocalProjection ext{lon_lo, lat_lo};
    double x_hi = 0, y_hi = 0;
    ext.to_meters(lon_hi, lat_hi, x_hi, y_hi);
    const double margin = cfg.grid_cell_m;
    ext.to_lonlat(-margin, -margin, spec.origin_lon, spec.origin_lat);
    spec.cols = static_cast<int>((x_hi + 2 * margin) / cfg.grid_cell_m) + 1;
    spec.rows = static_cast<int>((y_hi + 2 * margin) / cfg.grid_cell_m) + 1;

    MapMatcher matcher(net);
    std::map<std::string, std::vector<GridToken>> grid_cache;
    std::map<std::string, std::vector<RoadToken>> road_cache;
    std::vector<std::string> splits[3];
    int dropped = 0;
    for (const auto& t : gps) {
      try {
        auto road = matcher.match_tokens(t, cfg.utc_offset_s);
        auto grid = to_grid_trajectory(t, spec);
        grid_cache[t.id] = std::move(grid);
        road_cache[t.id] = std::move(road);
        splits[split_of(t.id, cfg)].push_back(t.id);
      } catch (const std::runtime_error& e) {
        ++dropped;  // unmatchable under the configured radius
      }
    }
    if (dropped > 0) std::cout << "dropped " << dropped << " unmatchable trajectories\n";
    if (grid_cache.empty()) throw std::runtime_error("no trajectory survived matching");
    // traffic flow over the training split only
    std::vector<std::vector<GridToken>> train_grid;
    for (const auto& id : splits[0]) train_grid.push_back(grid_cache.at(id));
    auto flow = traffic_flow(train_grid, spec);

    save_grid_spec(dir + "/grid.json", spec);
    {
      std::ofstream out(dir + "/flow.json");
      out << json(flow).dump() << "\n";
    }
    save_grid_cache(dir + "/grid_cache.jsonl", grid_cache);
    save_road_cache(dir + "/road_cache.jsonl", road_cache);
    const char* names[3] = {"train_ids.txt", "val_ids.txt", "test_ids.txt"};
    for (int s = 0; s < 3; ++s) {
      std::ofstream out(dir + "/" + names[s]);
      for (const auto& id : splits[s]) out << id << "\n";
    }
    std::cout << "grid " << spec.rows << "x" << spec.cols << "; splits " << splits[0].size() << "/"
              << splits[1].size() << "/" << splits[2].size() << "\n";
    return 0;
  } catch (...) {
    cleanup(outputs);
    throw;
  }
}

int cmd_pretrain(const RunConfig& cfg, const std::string& dir, const std::string& ckpt_out,
                 const std::string& loss_csv, const std::string& variant_name) {
  try {
    DataBundle b = load_bundle(dir);
    Model model(cfg, b.spec, b.net, b.flow, variant_from_string(variant_name));
    std::vector<LossRow> rows = pretrain(model, b.data, b.train_rows, cfg.epochs);
    save_checkpoint(ckpt_out, model);
    if (!loss_csv.empty()) save_loss_csv(loss_csv, rows);
    if (!rows.empty()) {
      std::cout << "final losses: cl=" << rows.back().l_cl << " mlm=" << rows.back().l_mlm << "\n";
    }
    return 0;
  } catch (...) {
    cleanup({ckpt_out, loss_csv});
    throw;
  }
}

int cmd_finetune(const RunConfig& cfg, const std::string& dir, const std::string& ckpt_in,
                 const std::string& ckpt_out, const std::string& metrics_out, bool tte,
                 int epochs, bool head_only) {
  try {
    DataBundle b = load_bundle(dir);
    Model model = load_model(ckpt_in, b);
    FinetuneOptions opts;
    opts.epochs = epochs;
    opts.head_only = head_only;
    std::map<std::string, double> metrics;
    if (tte) {
      for (int r : b.train_rows) {
        if (b.minutes[static_cast<std::size_t>(r)] < 0) {
          throw std::runtime_error("trajectory " + b.data.ids[static_cast<std::size_t>(r)] +
                                   " has no travel time");
        }
      }
      finetune_tte(model, b.data, b.minutes, b.train_rows, opts);
      auto preds = predict_tte(model, b.data, b.test_rows);
      std::vector<double> truth;
      for (int r : b.test_rows) truth.push_back(b.minutes[static_cast<std::size_t>(r)]);
      metrics["mae"] = mae(preds, truth);
      metrics["mape"] = mape(preds, truth);
      metrics["rmse"] = rmse(preds, truth);
    } else {
      int num_classes = 0;
      for (int r : b.train_rows) {
        if (b.labels[static_cast<std::size_t>(r)] < 0) {
          throw std::runtime_error("trajectory " + b.data.ids[static_cast<std::size_t>(r)] +
                                   " has no class label");
        }
        num_classes = std::max(num_classes, b.labels[static_cast<std::size_t>(r)] + 1);
      }
      finetune_cls(model, b.data, b.labels, b.train_rows, opts);
      auto preds = predict_cls(model, b.data, b.test_rows);
      std::vector<int> truth;
      for (int r : b.test_rows) truth.push_back(b.labels[static_cast<std::size_t>(r)]);
      if (num_classes <= 2) {
        auto m = binary_metrics(preds, truth);
        metrics["f1"] = m.f1;
        metrics["accuracy"] = m.accuracy;
        metrics["precision"] = m.precision;
      } else {
        auto m = f1_scores(preds, truth, num_classes);
        metrics["micro_f1"] = m.micro_f1;
        metrics["macro_f1"] = m.macro_f1;
      }
    }
    save_checkpoint(ckpt_out, model);
    save_metrics(metrics_out, tte ? "travel_time" : "classification", metrics, cfg.hash(),
                 cfg.seed);
    for (const auto& [k, v] : metrics) std::cout << k << " = " << v << "\n";
    return 0;
  } catch (...) {
    cleanup({ckpt_out, metrics_out});
    throw;
  }
}

int cmd_bench_sim(const RunConfig& cfg, const std::string& dir, const std::string& out_dir,
                  int queries, int negatives) {
  const std::vector<std::string> outputs = {
      out_dir + "/queries_grid.jsonl", out_dir + "/queries_road.jsonl",
      out_dir + "/positives_grid.jsonl", out_dir + "/positives_road.jsonl",
      out_dir + "/negatives_grid.jsonl", out_dir + "/negatives_road.jsonl",
      out_dir + "/order.txt"};
  try {
    DataBundle b = load_bundle(dir);
    std::vector<GpsTrajectory> corpus;
    for (int r : b.test_rows) corpus.push_back(b.gps[static_cast<std::size_t>(r)]);
    MapMatcher matcher(b.net);
    SimBenchParams params;
    params.num_queries = queries;
    params.num_negatives = negatives;
    SimBenchmark bench =
        build_sim_benchmark(corpus, matcher, b.spec, params, cfg.seed, cfg.utc_offset_s);
    fs::create_directories(out_dir);
    auto dump = [&](const PretrainDataset& ds, const std::string& stem) {
      std::map<std::string, std::vector<GridToken>> g;
      std::map<std::string, std::vector<RoadToken>> r;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        g[ds.ids[i]] = ds.grid[i];
        r[ds.ids[i]] = ds.road[i];
      }
      save_grid_cache(out_dir + "/" + stem + "_grid.jsonl", g);
      save_road_cache(out_dir + "/" + stem + "_road.jsonl", r);
    };
    dump(bench.queries, "queries");
    dump(bench.positives, "positives");
    dump(bench.negatives, "negatives");
    // query order pins the query->positive pairing
    std::ofstream order(out_dir + "/order.txt");
    for (const auto& id : bench.queries.ids) order << id << "\n";
    std::cout << "benchmark: " << bench.queries.size() << " queries, " << bench.negatives.size()
              << " negatives\n";
    return 0;
  } catch (...) {
    cleanup(outputs);
    throw;
  }
}

SimBenchmark load_bench(const std::string& bench_dir) {
  SimBenchmark bench;
  auto fill = [&](PretrainDataset& ds, const std::string& stem,
                  const std::vector<std::string>* order) {
    auto g = load_grid_cache(bench_dir + "/" + stem + "_grid.jsonl");
    auto r = load_road_cache(bench_dir + "/" + stem + "_road.jsonl");
    std::vector<std::string> ids;
    if (order) {
      ids = *order;
    } else {
      for (const auto& [id, toks] : g) ids.push_back(id);
    }
    for (const auto& id : ids) {
      ds.ids.push_back(id);
      ds.grid.push_back(g.at(id));
      ds.road.push_back(r.at(id));
    }
  };
  const auto order = load_id_list(bench_dir + "/order.txt");
  std::vector<std::string> pos_order;
  for (const auto& id : order) pos_order.push_back(id + "#v");
  fill(bench.queries, "queries", &order);
  fill(bench.positives, "positives", &pos_order);
  fill(bench.negatives, "negatives", nullptr);
  return bench;
}

int cmd_eval_sim(const RunConfig& cfg, const std::string& dir, const std::string& ckpt,
                 const std::string& bench_dir, const std::string& metrics_out) {
  try {
    DataBundle b = load_bundle(dir);
    Model model = load_model(ckpt, b);
    SimBenchmark bench = load_bench(bench_dir);
    SimMetrics m = eval_similarity(model, bench);
    save_metrics(metrics_out, "similarity", {{"mr", m.mr}, {"hr1", m.hr1}, {"hr5", m.hr5}},
                 cfg.hash(), cfg.seed);
    std::cout << "mr = " << m.mr << ", hr@1 = " << m.hr1 << ", hr@5 = " << m.hr5 << "\n";
    return 0;
  } catch (...) {
    cleanup({metrics_out});
    throw;
  }
}

int cmd_encode(const std::string& dir, const std::string& ckpt, const std::string& split,
               const std::string& out_path) {
  try {
    DataBundle b = load_bundle(dir);
    Model model = load_model(ckpt, b);
    const std::vector<int>* rows = split == "train" ? &b.train_rows
                                   : split == "val" ? &b.val_rows
                                                    : &b.test_rows;
    std::vector<std::pair<std::string, std::vector<double>>> vecs;
    for (int r : *rows) {
      vecs.emplace_back(b.data.ids[static_cast<std::size_t>(r)],
                        model.encode(b.data.grid[static_cast<std::size_t>(r)],
                                     b.data.road[static_cast<std::size_t>(r)]));
    }
    std::sort(vecs.begin(), vecs.end(),
              [](const auto& a, const auto& b2) { return a.first < b2.first; });
    save_vectors(out_path, vecs);
    std::cout << "encoded " << vecs.size() << " trajectories\n";
    return 0;
  } catch (...) {
    cleanup({out_path});
    throw;
  }
}

// Finite-difference sweep over one representative parameter from every group,
// through the full two-forward training loss on a 2-trajectory batch.
int cmd_gradcheck(std::uint64_t seed) {
  SynthConfig scfg;
  scfg.lattice_rows = 4;
  scfg.lattice_cols = 4;
  scfg.num_trajectories = 8;
  scfg.min_route_edges = 6;
  scfg.max_route_edges = 8;
  scfg.noise_sigma_m = 0.0;
  auto world = synth_world(scfg, seed);
  GridSpec spec;
  spec.cell_m = 200.0;
  LocalProjection proj{0.0, 0.0};
  proj.to_lonlat(-200.0, -200.0, spec.origin_lon, spec.origin_lat);
  spec.rows = spec.cols = static_cast<int>((3 * scfg.spacing_m + 400.0) / spec.cell_m) + 1;
  MapMatcher matcher(world.net);
  PretrainDataset ds;
  for (const auto& t : world.trajectories) {
    ds.ids.push_back(t.id);
    ds.road.push_back(matcher.match_tokens(t));
    ds.grid.push_back(to_grid_trajectory(t, spec));
  }
  auto flow = traffic_flow({ds.grid.begin(), ds.grid.end()}, spec);
  RunConfig cfg;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 16;
  cfg.road_heads = cfg.grid_heads = 2;
  cfg.interactor_heads = 2;
  cfg.dropout = 0.0;
  cfg.mask_ratio = 0.4;
  cfg.seed = seed;
  Model model(cfg, spec, world.net, flow);
  const std::vector<int> batch{0, 1};

  // Builds the full two-forward training loss (contrastive + masked
  // reconstruction through the interactor) on a fresh tape.
  auto build_loss = [&](Tape& t, ParamBinding& p) {
    std::vector<std::vector<GridToken>> gb{ds.grid[0], ds.grid[1]};
    std::vector<std::vector<RoadToken>> rb{ds.road[0], ds.road[1]};
    Var grid_tab = model.grid_table(p);
    Var road_tab = model.road_table(p);
    EncoderOut g = model.grid_forward(p, gb, grid_tab);
    EncoderOut r1 = model.road_forward(p, rb, road_tab);
    Var l = contrastive_loss(t, g.summary, r1.summary, model.temperature(p));
    std::vector<MaskPlan> plans;
    std::vector<int> mrows, targets;
    int stride = 1;
    for (const auto& s : rb) stride = std::max(stride, static_cast<int>(s.size()) + 1);
    for (std::size_t s = 0; s < rb.size(); ++s) {
      MaskPlan plan = plan_mask(static_cast<int>(rb[s].size()), cfg.mask_ratio, cfg.mask_span,
                                cfg.seed + s);
      for (int pos : plan.positions) {
        mrows.push_back(static_cast<int>(s) * stride + 1 + pos);
        targets.push_back(rb[s][static_cast<std::size_t>(pos)].segment_id);
      }
      plans.push_back(std::move(plan));
    }
    if (mrows.empty()) throw std::runtime_error("gradcheck: no tokens were masked");
    EncoderOut r2 = model.road_forward(p, rb, road_tab, &plans);
    EncoderOut zm = model.interact(p, r2, g);
    return t.add(l, t.cross_entropy(model.mlm_logits(p, zm.z, mrows), targets));
  };

  // analytic gradients once
  std::map<std::string, Tensor> grads;
  {
    Tape t;
    ParamBinding p(t, model.params);
    Var l = build_loss(t, p);
    t.backward(l);
    for (int h = 0; h < model.params.size(); ++h) {
      Tensor gr = p.param_grad(h);
      if (gr.numel() > 0) grads[model.params.name(h)] = std::move(gr);
    }
  }
  auto scalar_loss = [&]() {
    Tape t;
    ParamBinding p(t, model.params);
    Var l = build_loss(t, p);
    return t.val(l)[0];
  };
  double worst = 0.0;
  std::string worst_name;
  std::mt19937_64 pick(seed);
  for (int h = 0; h < model.params.size(); ++h) {
    const std::string& name = model.params.name(h);
    auto it = grads.find(name);
    if (it == grads.end()) continue;  // not reached by the pretraining loss (downstream heads)
    Tensor& value = model.params.value(h);
    std::vector<int> entries;
    for (int k = 0; k < std::min(3, value.numel()); ++k) {
      entries.push_back(static_cast<int>(pick() % static_cast<std::uint64_t>(value.numel())));
    }
    const double err = finite_diff_check(value, it->second, scalar_loss, entries);
    if (!std::isfinite(err)) {
      std::cerr << "FAIL: non-finite gradient comparison for " << name << "\n";
      return 1;
    }
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  }
  std::cout << "checked " << grads.size() << " parameter tensors; max relative error = " << worst
            << " (" << worst_name << ")\n";
  if (worst > 1e-4) {
    std::cerr << "FAIL: gradient mismatch\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-expression trajectory representation pipeline"};
  app.require_subcommand(1);
  std::string config_path, data_dir = "data", out, ckpt, ckpt_out, bench_dir, split = "test";
  std::string variant = "full", loss_csv, metrics_out = "metrics.json";
  std::vector<std::string> overrides;
  int epochs_ft = 10, queries = 200, negatives = 5000;
  bool head_only = false;
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--set", overrides, "override config entries (key=value)")->take_all();

  auto* synth = app.add_subcommand("synth", "generate a synthetic world");
  synth->add_option("--out", data_dir, "output directory");
  auto* ingest = app.add_subcommand("ingest", "filter, match, grid-map, and split");
  ingest->add_option("--data", data_dir, "data directory (expects world.jsonl + network CSVs)");
  auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining");
  pre->add_option("--data", data_dir);
  pre->add_option("--out", ckpt_out, "checkpoint output")->required();
  pre->add_option("--loss-csv", loss_csv, "per-step loss trace");
  pre->add_option("--variant", variant, "full | grid_only | road_only");
  auto* ftt = app.add_subcommand("finetune-tte", "travel time estimation");
  auto* ftc = app.add_subcommand("finetune-cls", "trajectory classification");
  for (auto* cmd : {ftt, ftc}) {
    cmd->add_option("--data", data_dir);
    cmd->add_option("--ckpt", ckpt, "pretrained checkpoint")->required();
    cmd->add_option("--out", ckpt_out, "fine-tuned checkpoint")->required();
    cmd->add_option("--metrics", metrics_out, "metrics JSON output");
    cmd->add_option("--epochs", epochs_ft, "fine-tuning epochs");
    cmd->add_flag("--head-only", head_only, "freeze the encoders");
  }
  auto* bsim = app.add_subcommand("bench-sim", "build the similarity benchmark");
  bsim->add_option("--data", data_dir);
  bsim->add_option("--out", out, "benchmark directory")->required();
  bsim->add_option("--queries", queries);
  bsim->add_option("--negatives", negatives);
  auto* esim = app.add_subcommand("eval-sim", "evaluate most-similar search");
  esim->add_option("--data", data_dir);
  esim->add_option("--ckpt", ckpt)->required();
  esim->add_option("--bench", bench_dir)->required();
  esim->add_option("--metrics", metrics_out);
  auto* enc = app.add_subcommand("encode", "write representations for a split");
  enc->add_option("--data", data_dir);
  enc->add_option("--ckpt", ckpt)->required();
  enc->add_option("--split", split, "train | val | test");
  enc->add_option("--out", out, "vectors output")->required();
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  for (auto* cmd : {synth, ingest, pre, ftt, ftc, bsim, esim, enc, gc}) cmd->fallthrough();

  CLI11_PARSE(app, argc, argv);
  Timer timer;
  int rc = 1;
  try {
    RunConfig cfg = resolve_config(config_path, overrides);
    if (synth->parsed()) rc = cmd_synth(cfg, data_dir);
    else if (ingest->parsed()) rc = cmd_ingest(cfg, data_dir);
    else if (pre->parsed()) rc = cmd_pretrain(cfg, data_dir, ckpt_out, loss_csv, variant);
    else if (ftt->parsed())
      rc = cmd_finetune(cfg, data_dir, ckpt, ckpt_out, metrics_out, true, epochs_ft, head_only);
    else if (ftc->parsed())
      rc = cmd_finetune(cfg, data_dir, ckpt, ckpt_out, metrics_out, false, epochs_ft, head_only);
    else if (bsim->parsed()) rc = cmd_bench_sim(cfg, data_dir, out, queries, negatives);
    else if (esim->parsed()) rc = cmd_eval_sim(cfg, data_dir, ckpt, bench_dir, metrics_out);
    else if (enc->parsed()) rc = cmd_encode(data_dir, ckpt, split, out);
    else if (gc->parsed()) rc = cmd_gradcheck(cfg.seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    rc = 1;
  }
  std::cout << "wall clock: " << timer.seconds() << " s\n";
  return rc;
}
