// Evaluation-metric oracles (hand arithmetic and brute-force re-derivations),
// the travel-time time-leak guard, similarity ranking, and the benchmark
// builder's acceptance contract.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "trajrep/downstream.hpp"
#include "trajrep/synth.hpp"

using namespace trajrep;

namespace {

struct Fixture {
  SynthWorld world;
  GridSpec spec;
  std::vector<std::int64_t> flow;
  PretrainDataset ds;
  RunConfig cfg;

  explicit Fixture(std::uint64_t seed = 31, int trajs = 60) {
    SynthConfig scfg;
    scfg.lattice_rows = 5;
    scfg.lattice_cols = 5;
    scfg.num_trajectories = trajs;
    scfg.min_route_edges = 5;
    scfg.max_route_edges = 9;
    scfg.noise_sigma_m = 0.0;
    world = synth_world(scfg, seed);
    spec.cell_m = 150.0;
    LocalProjection proj{0.0, 0.0};
    proj.to_lonlat(-200.0, -200.0, spec.origin_lon, spec.origin_lat);
    spec.rows = spec.cols = static_cast<int>((4 * scfg.spacing_m + 400.0) / spec.cell_m) + 1;
    MapMatcher matcher(world.net);
    for (const auto& t : world.trajectories) {
      ds.ids.push_back(t.id);
      ds.road.push_back(matcher.match_tokens(t));
      ds.grid.push_back(to_grid_trajectory(t, spec));
    }
    flow = traffic_flow(ds.grid, spec);
    cfg.embed_dim = 8;
    cfg.hidden_dim = 16;
    cfg.road_heads = cfg.grid_heads = cfg.interactor_heads = 2;
    cfg.dropout = 0.0;
    cfg.seed = seed;
  }

  Model make(Variant v = Variant::full) const { return Model(cfg, spec, world.net, flow, v); }
};

}  // namespace

TEST_CASE("regression metrics by hand") {
  const std::vector<double> pred{2.0, 4.0};
  const std::vector<double> truth{1.0, 5.0};
  CHECK(mae(pred, truth) == doctest::Approx(1.0));
  CHECK(rmse(pred, truth) == doctest::Approx(1.0));
  // |2-1|/1 = 1 and |4-5|/5 = 0.2, mean 0.6
  CHECK(mape(pred, truth) == doctest::Approx(0.6));

  // near-zero truths are excluded from the percentage error
  CHECK(mape({2.0, 7.0}, {1.0, 0.1}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(mape({1.0}, {0.0}), std::invalid_argument);
  CHECK_THROWS_AS(mae({1.0}, {1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(mae({}, {}), std::invalid_argument);

  CHECK(mae({3.5}, {3.5}) == 0.0);
  CHECK(rmse({0.0, 0.0}, {3.0, 4.0}) == doctest::Approx(std::sqrt(12.5)));
}

TEST_CASE("classification metrics by hand") {
  // binary confusion: TP 3, FP 1, FN 1, TN 5
  std::vector<int> truth{1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
  std::vector<int> pred{1, 1, 1, 0, 1, 0, 0, 0, 0, 0};
  BinaryMetrics m = binary_metrics(pred, truth);
  CHECK(m.precision == doctest::Approx(0.75));
  CHECK(m.recall == doctest::Approx(0.75));
  CHECK(m.f1 == doctest::Approx(0.75));
  CHECK(m.accuracy == doctest::Approx(0.8));

  // multi-class: micro F1 equals accuracy for single-label problems
  std::vector<int> t3{0, 0, 1, 1, 2, 2};
  std::vector<int> p3{0, 1, 1, 1, 2, 0};
  F1Scores f = f1_scores(p3, t3, 3);
  CHECK(f.micro_f1 == doctest::Approx(4.0 / 6.0));
  // class 0: P 1/2, R 1/2, F1 1/2; class 1: P 2/3, R 1, F1 4/5; class 2: P 1, R 1/2, F1 2/3
  CHECK(f.macro_f1 == doctest::Approx((0.5 + 0.8 + 2.0 / 3.0) / 3.0));

  // an absent class contributes zero to the macro average
  F1Scores g = f1_scores({0, 0}, {0, 0}, 2);
  CHECK(g.macro_f1 == doctest::Approx(0.5));
  CHECK(g.micro_f1 == doctest::Approx(1.0));

  // perfect prediction
  F1Scores h = f1_scores({2, 0, 1}, {2, 0, 1}, 3);
  CHECK(h.micro_f1 == doctest::Approx(1.0));
  CHECK(h.macro_f1 == doctest::Approx(1.0));
}

TEST_CASE("metrics agree with a brute-force re-derivation on random data") {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> val(0.5, 50.0);
  std::uniform_int_distribution<int> lab(0, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 100;
    std::vector<double> pred(n), truth(n);
    std::vector<int> cp(n), ct(n);
    for (int i = 0; i < n; ++i) {
      pred[i] = val(rng);
      truth[i] = val(rng);
      cp[i] = lab(rng);
      ct[i] = lab(rng);
    }
    double s_ae = 0.0, s_se = 0.0, s_pe = 0.0;
    for (int i = 0; i < n; ++i) {
      s_ae += std::abs(pred[i] - truth[i]);
      s_se += (pred[i] - truth[i]) * (pred[i] - truth[i]);
      s_pe += std::abs(pred[i] - truth[i]) / truth[i];
    }
    CHECK(std::abs(mae(pred, truth) - s_ae / n) < 1e-12);
    CHECK(std::abs(rmse(pred, truth) - std::sqrt(s_se / n)) < 1e-12);
    CHECK(std::abs(mape(pred, truth) - s_pe / n) < 1e-12);

    double tp = 0, fp = 0, fn = 0, macro = 0;
    for (int c = 0; c < 5; ++c) {
      double ctp = 0, cfp = 0, cfn = 0;
      for (int i = 0; i < n; ++i) {
        if (cp[i] == c && ct[i] == c) ctp += 1;
        if (cp[i] == c && ct[i] != c) cfp += 1;
        if (cp[i] != c && ct[i] == c) cfn += 1;
      }
      tp += ctp;
      fp += cfp;
      fn += cfn;
      macro += (2 * ctp + cfp + cfn) > 0 ? 2 * ctp / (2 * ctp + cfp + cfn) : 0.0;
    }
    F1Scores f = f1_scores(cp, ct, 5);
    CHECK(std::abs(f.micro_f1 - 2 * tp / (2 * tp + fp + fn)) < 1e-12);
    CHECK(std::abs(f.macro_f1 - macro / 5) < 1e-12);
  }
}

TEST_CASE("cosine ranking") {
  SUBCASE("the aligned entry ranks first when vectors match exactly") {
    std::vector<std::vector<double>> q{{1, 0}, {0, 1}};
    std::vector<std::vector<double>> db{{2, 0}, {0, 3}, {1, 1}};
    auto ranks = cosine_ranks(q, db);
    CHECK(ranks == std::vector<int>{1, 1});
  }
  SUBCASE("rank counts strictly better entries") {
    std::vector<std::vector<double>> q{{1, 0}};
    std::vector<std::vector<double>> db{{1, 1}, {1, 0}, {1, 0.1}};
    // truth index 0 (cos .707) is beaten by db[1] (1.0) and db[2] (.995)
    CHECK(cosine_ranks(q, db) == std::vector<int>{3});
  }
  SUBCASE("a zero vector is rejected") {
    CHECK_THROWS_AS(cosine_ranks({{0.0, 0.0}}, {{1.0, 0.0}}), std::domain_error);
  }
  SUBCASE("random unit vectors rank uniformly: mean rank near (|D|+1)/2") {
    std::mt19937_64 rng(777);
    std::normal_distribution<double> g;
    double total = 0.0;
    const int dbsize = 101, queries = 400;
    for (int trial = 0; trial < queries; ++trial) {
      std::vector<std::vector<double>> db(dbsize, std::vector<double>(8));
      for (auto& v : db)
        for (double& x : v) x = g(rng);
      std::vector<std::vector<double>> q{db[0]};
      for (double& x : q[0]) x = g(rng);  // query unrelated to truth
      total += cosine_ranks(q, db)[0];
    }
    CHECK(total / queries == doctest::Approx(51.0).epsilon(0.1));
  }
}

TEST_CASE("travel-time inputs carry only the start time") {
  Fixture fx;
  PretrainDataset stripped = start_time_only(fx.ds);
  REQUIRE(stripped.size() == fx.ds.size());
  for (std::size_t i = 0; i < stripped.size(); ++i) {
    const double t0 = fx.ds.road[i].front().t;
    for (const auto& tok : stripped.road[i]) CHECK(tok.t == t0);
    for (const auto& tok : stripped.grid[i]) {
      CHECK(tok.t == fx.ds.grid[i].front().t);
    }
    // minute/day fields are re-derived from the start time
    CHECK(stripped.road[i].back().minute_of_day == stripped.road[i].front().minute_of_day);
  }

  // guard is exact: predictions ignore every non-initial timestamp
  Model m = fx.make();
  PretrainDataset shifted = fx.ds;
  for (std::size_t i = 0; i < shifted.size(); ++i) {
    for (std::size_t j = 1; j < shifted.road[i].size(); ++j) shifted.road[i][j].t += 7200.0;
    for (std::size_t j = 1; j < shifted.grid[i].size(); ++j) shifted.grid[i][j].t += 7200.0;
  }
  auto base = predict_tte(m, fx.ds, {0, 1, 2});
  auto moved = predict_tte(m, shifted, {0, 1, 2});
  REQUIRE(base.size() == moved.size());
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(base[i] == moved[i]);
}

TEST_CASE("fine-tuning heads fit a small training set") {
  Fixture fx(33, 40);
  std::vector<int> rows;
  for (int i = 0; i < 40; ++i) rows.push_back(i);

  SUBCASE("travel time moves toward the labels") {
    Model m = fx.make();
    std::vector<double> minutes;
    for (const auto& t : fx.world.trajectories) minutes.push_back(*t.travel_time);
    const double before = mae(predict_tte(m, fx.ds, rows), minutes);
    FinetuneOptions opts;
    opts.epochs = 30;
    opts.lr = 1e-3;
    finetune_tte(m, fx.ds, minutes, rows, opts);
    const double after = mae(predict_tte(m, fx.ds, rows), minutes);
    CHECK(after < before);
    CHECK(after < 1.5);
  }
  SUBCASE("classification fits its training labels") {
    Model m = fx.make();
    std::vector<int> labels;
    for (const auto& t : fx.world.trajectories) labels.push_back(*t.label);
    FinetuneOptions opts;
    opts.epochs = 40;
    opts.lr = 1e-3;
    finetune_cls(m, fx.ds, labels, rows, opts);
    auto preds = predict_cls(m, fx.ds, rows);
    int correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[rows[i]];
    CHECK(static_cast<double>(correct) / preds.size() > 0.7);
  }
  SUBCASE("head-only training leaves the encoders untouched") {
    Model m = fx.make();
    std::vector<double> minutes;
    for (const auto& t : fx.world.trajectories) minutes.push_back(*t.travel_time);
    Tensor conv_before = m.params.value(m.params.handle("grid.conv1.k"));
    FinetuneOptions opts;
    opts.epochs = 3;
    opts.head_only = true;
    finetune_tte(m, fx.ds, minutes, rows, opts);
    const Tensor& conv_after = m.params.value(m.params.handle("grid.conv1.k"));
    for (int i = 0; i < conv_before.numel(); ++i) CHECK(conv_before[i] == conv_after[i]);
    // but the head did move
    bool head_moved = false;
    const Tensor& w = m.params.value(m.params.handle("tte.w1"));
    Model fresh = fx.make();
    const Tensor& w0 = fresh.params.value(fresh.params.handle("tte.w1"));
    for (int i = 0; i < w.numel(); ++i) head_moved = head_moved || w[i] != w0[i];
    CHECK(head_moved);
  }
  SUBCASE("labels outside the head's range are rejected") {
    Model m = fx.make();
    std::vector<int> labels(fx.ds.size(), 99);
    CHECK_THROWS_AS(finetune_cls(m, fx.ds, labels, rows, FinetuneOptions{}),
                    std::out_of_range);
  }
}

TEST_CASE("similarity benchmark construction") {
  Fixture fx(35, 120);
  MapMatcher matcher(fx.world.net);
  SimBenchParams params;
  params.num_queries = 15;
  params.num_negatives = 40;
  SimBenchmark bench = build_sim_benchmark(fx.world.trajectories, matcher, fx.spec, params, 9);

  REQUIRE(bench.queries.size() == 15);
  REQUIRE(bench.positives.size() == 15);
  REQUIRE(bench.negatives.size() == 40);

  std::set<std::string> query_ids(bench.queries.ids.begin(), bench.queries.ids.end());
  for (std::size_t i = 0; i < bench.queries.size(); ++i) {
    // pairing convention and change-rate band
    CHECK(bench.positives.ids[i] == bench.queries.ids[i] + "#v");
    std::vector<int> a, b;
    for (const auto& tok : bench.queries.road[i]) a.push_back(tok.segment_id);
    for (const auto& tok : bench.positives.road[i]) b.push_back(tok.segment_id);
    const double rate = change_rate(a, b);
    CHECK(rate >= params.min_change_rate);
    CHECK(rate <= params.max_change_rate);
  }
  // negatives never reuse a query
  for (const auto& id : bench.negatives.ids) CHECK(query_ids.count(id) == 0);

  // deterministic per seed
  SimBenchmark again = build_sim_benchmark(fx.world.trajectories, matcher, fx.spec, params, 9);
  CHECK(again.queries.ids == bench.queries.ids);
  CHECK(again.negatives.ids == bench.negatives.ids);
  SimBenchmark other = build_sim_benchmark(fx.world.trajectories, matcher, fx.spec, params, 10);
  CHECK(other.queries.ids != bench.queries.ids);

  // an impossible request reports the acceptance counts
  SimBenchParams greedy;
  greedy.num_queries = 1000;
  CHECK_THROWS_AS(build_sim_benchmark(fx.world.trajectories, matcher, fx.spec, greedy, 9),
                  std::runtime_error);

  // end-to-end evaluation produces sane numbers
  Model m = fx.make();
  SimMetrics sm = eval_similarity(m, bench);
  CHECK(sm.mr >= 1.0);
  CHECK(sm.mr <= 55.0);
  CHECK(sm.hr1 >= 0.0);
  CHECK(sm.hr1 <= 1.0);
  CHECK(sm.hr5 >= sm.hr1);
}
