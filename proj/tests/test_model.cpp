// Behavioral contracts of the two encoders and the cross-attention fusion:
// shapes, determinism, padding invariance, permutation equivariance of the
// graph attention table, the road-type bias hook, masking semantics, and
// finite-difference spot checks of the end-to-end gradients.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "trajrep/match.hpp"
#include "trajrep/model.hpp"
#include "trajrep/pretrain.hpp"
#include "trajrep/synth.hpp"

using namespace trajrep;

namespace {

struct Fixture {
  SynthWorld world;
  GridSpec spec;
  std::vector<std::int64_t> flow;
  PretrainDataset ds;
  RunConfig cfg;

  explicit Fixture(std::uint64_t seed = 7, int trajs = 12) {
    SynthConfig scfg;
    scfg.lattice_rows = 4;
    scfg.lattice_cols = 4;
    scfg.num_trajectories = trajs;
    scfg.min_route_edges = 4;
    scfg.max_route_edges = 7;
    scfg.noise_sigma_m = 0.0;
    world = synth_world(scfg, seed);
    spec.cell_m = 150.0;
    LocalProjection proj{0.0, 0.0};
    proj.to_lonlat(-200.0, -200.0, spec.origin_lon, spec.origin_lat);
    spec.rows = spec.cols = static_cast<int>((3 * scfg.spacing_m + 400.0) / spec.cell_m) + 1;
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

Tensor eval_road_table(Model& m) {
  Tape t;
  ParamBinding p(t, m.params);
  return t.val(m.road_table(p));
}

Tensor eval_grid_summary(Model& m, const std::vector<std::vector<GridToken>>& batch) {
  Tape t;
  ParamBinding p(t, m.params);
  return t.val(m.grid_forward(p, batch, m.grid_table(p)).summary);
}

Tensor eval_road_summary(Model& m, const std::vector<std::vector<RoadToken>>& batch,
                         const std::vector<MaskPlan>* masks = nullptr) {
  Tape t;
  ParamBinding p(t, m.params);
  return t.val(m.road_forward(p, batch, m.road_table(p), masks).summary);
}

}  // namespace

TEST_CASE("encoder outputs have the documented packed shapes") {
  Fixture fx;
  Model m = fx.make();
  std::vector<std::vector<GridToken>> gb{fx.ds.grid[0], fx.ds.grid[1], fx.ds.grid[2]};
  std::vector<std::vector<RoadToken>> rb{fx.ds.road[0], fx.ds.road[1], fx.ds.road[2]};
  int glen = 0, rlen = 0;
  for (const auto& s : gb) glen = std::max(glen, static_cast<int>(s.size()));
  for (const auto& s : rb) rlen = std::max(rlen, static_cast<int>(s.size()));

  Tape t;
  ParamBinding p(t, m.params);
  EncoderOut g = m.grid_forward(p, gb, m.grid_table(p));
  EncoderOut r = m.road_forward(p, rb, m.road_table(p));
  CHECK(g.batch == 3);
  CHECK(g.stride == glen + 1);
  CHECK(t.val(g.z).dim(0) == 3 * (glen + 1));
  CHECK(t.val(g.z).dim(1) == fx.cfg.embed_dim);
  CHECK(t.val(g.summary).dim(0) == 3);
  CHECK(t.val(g.summary).dim(1) == fx.cfg.embed_dim);
  CHECK(r.stride == rlen + 1);
  CHECK(static_cast<int>(r.valid.size()) == 3 * (rlen + 1));

  EncoderOut fused = m.interact(p, r, g);
  CHECK(fused.batch == 3);
  CHECK(fused.stride == r.stride);
  CHECK(t.val(fused.summary).dim(0) == 3);
  CHECK(t.val(fused.summary).dim(1) == fx.cfg.embed_dim);

  // padding rows are flagged invalid, real rows valid
  for (int s = 0; s < 3; ++s) {
    const int len = static_cast<int>(rb[static_cast<std::size_t>(s)].size());
    for (int i = 0; i <= rlen; ++i) {
      const bool live = i == 0 || i <= len;
      CHECK(r.valid[static_cast<std::size_t>(s * (rlen + 1) + i)] == (live ? 1 : 0));
    }
  }
}

TEST_CASE("forward passes are deterministic") {
  Fixture fx;
  Model m = fx.make();
  std::vector<std::vector<GridToken>> gb{fx.ds.grid[0], fx.ds.grid[1]};
  Tensor a = eval_grid_summary(m, gb);
  Tensor b = eval_grid_summary(m, gb);
  REQUIRE(a.numel() == b.numel());
  for (int i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);

  auto e1 = m.encode(fx.ds.grid[0], fx.ds.road[0]);
  auto e2 = m.encode(fx.ds.grid[0], fx.ds.road[0]);
  CHECK(e1 == e2);
  CHECK(static_cast<int>(e1.size()) == fx.cfg.embed_dim);
  for (double v : e1) CHECK(std::isfinite(v));
}

TEST_CASE("summary is invariant to how much padding a batch forces") {
  Fixture fx;
  // pick rows of different lengths so batching forces padding on the shorter
  std::size_t shorter = 0, longer = 0;
  for (std::size_t i = 0; i < fx.ds.size(); ++i) {
    if (fx.ds.road[i].size() < fx.ds.road[shorter].size()) shorter = i;
    if (fx.ds.road[i].size() > fx.ds.road[longer].size()) longer = i;
  }
  REQUIRE(fx.ds.road[shorter].size() < fx.ds.road[longer].size());
  Model m = fx.make();

  Tensor alone_g = eval_grid_summary(m, {fx.ds.grid[shorter]});
  Tensor batch_g = eval_grid_summary(m, {fx.ds.grid[shorter], fx.ds.grid[longer]});
  Tensor alone_r = eval_road_summary(m, {fx.ds.road[shorter]});
  Tensor batch_r = eval_road_summary(m, {fx.ds.road[shorter], fx.ds.road[longer]});
  for (int c = 0; c < fx.cfg.embed_dim; ++c) {
    CHECK(std::abs(alone_g.at(0, c) - batch_g.at(0, c)) < 1e-9);
    CHECK(std::abs(alone_r.at(0, c) - batch_r.at(0, c)) < 1e-9);
  }

  // full fused representation too
  {
    Tape t;
    ParamBinding p(t, m.params);
    Var alone = m.represent(p, {fx.ds.grid[shorter]}, {fx.ds.road[shorter]});
    Var both = m.represent(p, {fx.ds.grid[shorter], fx.ds.grid[longer]},
                           {fx.ds.road[shorter], fx.ds.road[longer]});
    for (int c = 0; c < fx.cfg.embed_dim; ++c) {
      CHECK(std::abs(t.val(alone).at(0, c) - t.val(both).at(0, c)) < 1e-9);
    }
  }
}

TEST_CASE("batch order permutes the output rows and nothing else") {
  Fixture fx;
  Model m = fx.make();
  std::vector<std::vector<RoadToken>> fwd{fx.ds.road[0], fx.ds.road[1], fx.ds.road[2]};
  std::vector<std::vector<RoadToken>> rev{fx.ds.road[2], fx.ds.road[1], fx.ds.road[0]};
  Tensor a = eval_road_summary(m, fwd);
  Tensor b = eval_road_summary(m, rev);
  for (int c = 0; c < fx.cfg.embed_dim; ++c) {
    CHECK(std::abs(a.at(0, c) - b.at(2, c)) < 1e-9);
    CHECK(std::abs(a.at(1, c) - b.at(1, c)) < 1e-9);
    CHECK(std::abs(a.at(2, c) - b.at(0, c)) < 1e-9);
  }
}

TEST_CASE("graph attention table is equivariant to segment relabeling") {
  Fixture fx;
  Model m = fx.make();
  Tensor base = eval_road_table(m);

  // relabel every segment by a fixed permutation and rebuild the network
  const int n = fx.world.net.size();
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(123);
  std::shuffle(perm.begin(), perm.end(), rng);
  RoadNetwork permuted;
  permuted.segments.resize(static_cast<std::size_t>(n));
  permuted.successors.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    RoadSegment s = fx.world.net.segments[static_cast<std::size_t>(i)];
    s.id = perm[static_cast<std::size_t>(i)];
    permuted.segments[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = s;
    auto& succ = permuted.successors[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    for (int j : fx.world.net.successors[static_cast<std::size_t>(i)]) {
      succ.push_back(perm[static_cast<std::size_t>(j)]);
    }
    std::sort(succ.begin(), succ.end());
  }
  Model mp(fx.cfg, fx.spec, permuted, fx.flow);  // same seed -> same parameters
  Tensor moved = eval_road_table(mp);
  REQUIRE(moved.dim(0) == base.dim(0));
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < base.dim(1); ++c) {
      CHECK(std::abs(base.at(i, c) - moved.at(perm[static_cast<std::size_t>(i)], c)) < 1e-9);
    }
  }
}

TEST_CASE("zeroed road-type attention equals disabling the bias") {
  Fixture fx;
  Model m = fx.make();
  const int h = m.params.handle("road.type.wq");
  Tensor& wq = m.params.value(h);
  for (int i = 0; i < wq.numel(); ++i) wq[i] = 0.0;
  std::vector<std::vector<RoadToken>> rb{fx.ds.road[0], fx.ds.road[1]};

  Tensor with_bias = eval_road_summary(m, rb);
  m.use_type_bias = false;
  Tensor without = eval_road_summary(m, rb);
  for (int i = 0; i < with_bias.numel(); ++i) {
    CHECK(std::abs(with_bias[i] - without[i]) < 1e-9);
  }

  // sanity: with non-zero parameters the bias actually does something
  Model m2 = fx.make();
  Tensor on = eval_road_summary(m2, rb);
  m2.use_type_bias = false;
  Tensor off = eval_road_summary(m2, rb);
  double diff = 0.0;
  for (int i = 0; i < on.numel(); ++i) diff = std::max(diff, std::abs(on[i] - off[i]));
  CHECK(diff > 1e-12);
}

TEST_CASE("masking semantics") {
  Fixture fx;
  Model m = fx.make();
  std::vector<std::vector<RoadToken>> rb{fx.ds.road[0], fx.ds.road[1]};

  SUBCASE("all-empty mask plans are a no-op") {
    std::vector<MaskPlan> plans(2);
    Tensor a = eval_road_summary(m, rb);
    Tensor b = eval_road_summary(m, rb, &plans);
    for (int i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
  }
  SUBCASE("a real mask changes the output") {
    std::vector<MaskPlan> plans(2);
    plans[0].positions = {0, 1};
    Tensor a = eval_road_summary(m, rb);
    Tensor b = eval_road_summary(m, rb, &plans);
    double diff = 0.0;
    for (int i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    CHECK(diff > 1e-12);
  }
  SUBCASE("mask position outside the sequence throws") {
    std::vector<MaskPlan> plans(2);
    plans[1].positions = {static_cast<int>(rb[1].size())};
    Tape t;
    ParamBinding p(t, m.params);
    CHECK_THROWS_AS(m.road_forward(p, rb, m.road_table(p), &plans), std::invalid_argument);
  }
}

TEST_CASE("grid image and road feature construction") {
  Fixture fx;
  Tensor img = build_grid_image(fx.spec, fx.flow);
  REQUIRE(img.ndim() == 3);
  CHECK(img.dim(0) == fx.spec.rows);
  CHECK(img.dim(1) == fx.spec.cols);
  CHECK(img.dim(2) == 3);
  for (int i = 0; i < img.numel(); ++i) {
    CHECK(img[i] >= 0.0);
    CHECK(img[i] <= 1.0);
  }
  // corner coordinates span the unit square
  CHECK(img.at(0, 0, 0) == doctest::Approx(0.0));
  CHECK(img.at(0, fx.spec.cols - 1, 0) == doctest::Approx(1.0));
  CHECK(img.at(fx.spec.rows - 1, 0, 1) == doctest::Approx(1.0));
  // flow channel is log-scaled against the busiest cell
  std::int64_t busiest = 0;
  int arg = 0;
  for (std::size_t i = 0; i < fx.flow.size(); ++i) {
    if (fx.flow[i] > busiest) {
      busiest = fx.flow[i];
      arg = static_cast<int>(i);
    }
  }
  REQUIRE(busiest > 0);
  CHECK(img.at(arg / fx.spec.cols, arg % fx.spec.cols, 2) == doctest::Approx(1.0));

  Tensor feats = build_road_features(fx.world.net);
  REQUIRE(feats.dim(0) == fx.world.net.size());
  REQUIRE(feats.dim(1) == 6 + kNumRoadTypes);
  for (int i = 0; i < feats.dim(0); ++i) {
    double onehot = 0.0;
    for (int c = 6; c < feats.dim(1); ++c) onehot += feats.at(i, c);
    CHECK(onehot == doctest::Approx(1.0));
    CHECK(feats.at(i, 6 + fx.world.net.segments[static_cast<std::size_t>(i)].road_type) ==
          doctest::Approx(1.0));
    for (int c = 0; c < 6; ++c) {
      CHECK(feats.at(i, c) >= 0.0);
      CHECK(feats.at(i, c) <= 1.0);
    }
  }
}

TEST_CASE("input validation") {
  Fixture fx;
  Model m = fx.make();
  Tape t;
  ParamBinding p(t, m.params);
  CHECK_THROWS_AS(m.grid_forward(p, {}, m.grid_table(p)), std::invalid_argument);
  CHECK_THROWS_AS(m.grid_forward(p, {{}}, m.grid_table(p)), std::invalid_argument);
  {
    std::vector<GridToken> bad(1);
    bad[0].cell_id = fx.spec.num_cells();
    CHECK_THROWS_AS(m.grid_forward(p, {bad}, m.grid_table(p)), std::out_of_range);
  }
  {
    std::vector<RoadToken> bad(1);
    bad[0].segment_id = fx.world.net.size();
    CHECK_THROWS_AS(m.road_forward(p, {bad}, m.road_table(p)), std::out_of_range);
  }
  {
    std::vector<RoadToken> bad(1);
    bad[0].minute_of_day = 1440;
    CHECK_THROWS_AS(m.road_forward(p, {bad}, m.road_table(p)), std::out_of_range);
  }
}

TEST_CASE("variants expose only their own encoder") {
  Fixture fx;
  Model go = fx.make(Variant::grid_only);
  Model ro = fx.make(Variant::road_only);
  CHECK(go.params.contains("grid.mask"));
  CHECK_FALSE(go.params.contains("road.in.w"));
  CHECK_FALSE(ro.params.contains("grid.conv1.k"));
  {
    Tape t;
    ParamBinding p(t, go.params);
    CHECK_THROWS_AS(go.road_forward(p, {fx.ds.road[0]}, Var{-1}), std::logic_error);
    // grid-only vocabulary is the cell count
    EncoderOut g = go.grid_forward(p, {fx.ds.grid[0]}, go.grid_table(p));
    Var logits = go.mlm_logits(p, g.z, {1});
    CHECK(t.val(logits).dim(1) == fx.spec.num_cells());
  }
  {
    Tape t;
    ParamBinding p(t, ro.params);
    CHECK_THROWS_AS(ro.grid_forward(p, {fx.ds.grid[0]}, Var{-1}), std::logic_error);
    EncoderOut r = ro.road_forward(p, {fx.ds.road[0]}, ro.road_table(p));
    Var logits = ro.mlm_logits(p, r.z, {1});
    CHECK(t.val(logits).dim(1) == fx.world.net.size());
  }
  // variant representations all have the configured width
  for (Variant v : {Variant::full, Variant::grid_only, Variant::road_only}) {
    Model m = fx.make(v);
    auto e = m.encode(fx.ds.grid[0], fx.ds.road[0]);
    CHECK(static_cast<int>(e.size()) == fx.cfg.embed_dim);
  }
}

TEST_CASE("analytic gradients match finite differences through both encoders") {
  Fixture fx;
  Model m = fx.make();
  std::vector<std::vector<GridToken>> gb{fx.ds.grid[0], fx.ds.grid[1]};
  std::vector<std::vector<RoadToken>> rb{fx.ds.road[0], fx.ds.road[1]};

  auto loss_value = [&]() {
    Tape t;
    ParamBinding p(t, m.params);
    EncoderOut g = m.grid_forward(p, gb, m.grid_table(p));
    EncoderOut r = m.road_forward(p, rb, m.road_table(p));
    EncoderOut z = m.interact(p, r, g);
    Var l = contrastive_loss(t, g.summary, r.summary, m.temperature(p));
    return t.val(t.add(l, t.mean(t.mul(z.summary, z.summary))))[0];
  };
  for (const char* name : {"grid.conv1.k", "grid.t2v.w2", "grid.fuse.w", "road.gat.l0.h1.a_src",
                           "road.eday", "road.etype", "road.type.wk", "inter.l0.att.wv",
                           "temp.log", "grid.cls"}) {
    CAPTURE(name);
    const int h = m.params.handle(name);
    Tensor analytic;
    {
      Tape t;
      ParamBinding p(t, m.params);
      EncoderOut g = m.grid_forward(p, gb, m.grid_table(p));
      EncoderOut r = m.road_forward(p, rb, m.road_table(p));
      EncoderOut z = m.interact(p, r, g);
      Var l = contrastive_loss(t, g.summary, r.summary, m.temperature(p));
      t.backward(t.add(l, t.mean(t.mul(z.summary, z.summary))));
      analytic = p.param_grad(h);
    }
    REQUIRE(analytic.numel() > 0);
    std::vector<int> entries;
    for (int k = 0; k < std::min(3, analytic.numel()); ++k) {
      entries.push_back((k * 7919) % analytic.numel());
    }
    const double err = finite_diff_check(m.params.value(h), analytic, loss_value, entries);
    CHECK(err < 1e-4);
  }
}
