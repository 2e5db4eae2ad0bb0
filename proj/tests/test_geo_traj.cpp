#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "trajrep/geo.hpp"
#include "trajrep/traj.hpp"

using namespace trajrep;

TEST_CASE("haversine") {
  GpsPoint a{12.5, 41.9, 0};
  CHECK(haversine(a, a) == 0.0);
  // one degree of longitude at the equator
  GpsPoint e0{0, 0, 0}, e1{1, 0, 0};
  const double pi = std::acos(-1.0);
  CHECK(std::abs(haversine(e0, e1) - pi * kEarthRadiusM / 180.0) < 0.1);
  CHECK(std::abs(haversine(e0, e1) - 111194.9) < 0.1);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lon(-170, 170), lat(-80, 80);
  for (int i = 0; i < 50; ++i) {
    GpsPoint p{lon(rng), lat(rng), 0}, q{lon(rng), lat(rng), 0};
    CHECK(haversine(p, q) == doctest::Approx(haversine(q, p)).epsilon(1e-12));
    CHECK(haversine(p, q) >= 0.0);
  }
}

TEST_CASE("azimuth conventions") {
  GpsPoint o{0, 0, 0};
  CHECK(azimuth(o, GpsPoint{0, 1, 0}) == doctest::Approx(0.0));
  CHECK(azimuth(o, GpsPoint{1, 0, 0}) == doctest::Approx(90.0));
  CHECK(azimuth(o, GpsPoint{0, -1, 0}) == doctest::Approx(180.0));
  CHECK(azimuth(o, o) == 0.0);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(-1, 1);
  for (int i = 0; i < 50; ++i) {
    const double r = azimuth(GpsPoint{d(rng), d(rng), 0}, GpsPoint{d(rng), d(rng), 0});
    CHECK(r >= 0.0);
    CHECK(r < 360.0);
  }
}

namespace {
GridSpec small_grid() {
  GridSpec spec;
  spec.cell_m = 100.0;
  spec.rows = 10;
  spec.cols = 10;
  return spec;
}

GpsPoint at_meters(const GridSpec& spec, double x, double y, double t) {
  GpsPoint p;
  p.t = t;
  spec.projection().to_lonlat(x, y, p.lon, p.lat);
  return p;
}
}  // namespace

TEST_CASE("to_grid_trajectory collapse and anchors") {
  GridSpec spec = small_grid();
  GpsTrajectory gps;
  gps.id = "t";
  gps.points = {at_meters(spec, 1, 1, 0)};
  auto single = to_grid_trajectory(gps, spec);
  REQUIRE(single.size() == 1);
  CHECK(single[0].cell_id == 0);
  CHECK(single[0].feat_d == 0.0);
  CHECK(single[0].feat_r == 0.0);

  // three points in one cell collapse to one token anchored at point 0
  gps.points = {at_meters(spec, 10, 10, 0), at_meters(spec, 50, 50, 10),
                at_meters(spec, 90, 20, 20)};
  auto one = to_grid_trajectory(gps, spec);
  REQUIRE(one.size() == 1);
  CHECK(one[0].anchor.t == 0.0);
  CHECK(one[0].t == 0.0);

  // eastward walk crossing cell borders: strictly increasing columns
  gps.points.clear();
  for (int i = 0; i < 12; ++i) gps.points.push_back(at_meters(spec, 30 + i * 80.0, 50, i * 10.0));
  auto walk = to_grid_trajectory(gps, spec);
  CHECK(walk.size() > 1);
  for (std::size_t i = 1; i < walk.size(); ++i) {
    CHECK(walk[i].cell_id % spec.cols > walk[i - 1].cell_id % spec.cols);
    CHECK(walk[i].feat_d > 0.0);
  }

  // anchors read back are a subsequence of the input points
  std::size_t cursor = 0;
  for (const auto& tok : walk) {
    while (cursor < gps.points.size() && gps.points[cursor].t != tok.anchor.t) ++cursor;
    CHECK(cursor < gps.points.size());
  }

  GpsTrajectory out;
  out.id = "oob";
  out.points = {at_meters(spec, -5, 50, 0)};
  CHECK_THROWS_AS(to_grid_trajectory(out, spec), std::out_of_range);
}

TEST_CASE("traffic_flow counts tokens") {
  GridSpec spec = small_grid();
  CHECK(traffic_flow({}, spec) == std::vector<std::int64_t>(100, 0));

  // one trajectory visiting cell 5 in two separate runs
  GpsTrajectory gps;
  gps.id = "t";
  gps.points = {at_meters(spec, 550, 50, 0), at_meters(spec, 650, 50, 10),
                at_meters(spec, 550, 50, 20)};
  auto toks = to_grid_trajectory(gps, spec);
  REQUIRE(toks.size() == 3);
  auto flow = traffic_flow({toks}, spec);
  CHECK(flow[5] == 2);
  std::int64_t total = 0;
  for (auto c : flow) total += c;
  CHECK(total == static_cast<std::int64_t>(toks.size()));
}

TEST_CASE("plan_mask spans") {
  auto plan = plan_mask(10, 0.2, 2, 42);
  CHECK(plan.positions.size() == 2);
  CHECK(plan.positions[1] == plan.positions[0] + 1);

  CHECK(plan_mask(10, 0.0, 2, 42).empty());
  CHECK(plan_mask(3, 0.2, 2, 42).empty());

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int len = 4 + static_cast<int>(rng() % 40);
    const int l = 2 + static_cast<int>(rng() % 3);
    auto p = plan_mask(len, 0.3, l, rng());
    CHECK(static_cast<int>(p.positions.size()) < len);
    // sorted unique, contiguous runs of exactly l
    std::set<int> uniq(p.positions.begin(), p.positions.end());
    CHECK(uniq.size() == p.positions.size());
    if (!p.positions.empty()) {
      CHECK(static_cast<int>(p.positions.size()) % l == 0);
      CHECK(p.positions.front() >= 0);
      CHECK(p.positions.back() < len);
    }
  }
  // determinism
  auto a = plan_mask(30, 0.2, 2, 99);
  auto b = plan_mask(30, 0.2, 2, 99);
  CHECK(a.positions == b.positions);
}

TEST_CASE("time fields") {
  RoadToken tok;
  // epoch_start 1704067200 is Monday 00:00 UTC
  tok.t = 1704067200.0 + 3600.0;
  fill_time_fields(tok, 0.0);
  CHECK(tok.minute_of_day == 60);
  CHECK(tok.day_of_week == 0);
  tok.t = 1704067200.0 + 2 * 86400.0 + 23 * 3600.0 + 59 * 60.0;
  fill_time_fields(tok, 0.0);
  CHECK(tok.minute_of_day == 1439);
  CHECK(tok.day_of_week == 2);
}

TEST_CASE("assign_road_times interpolation") {
  RoadNetwork net;
  net.segments.resize(3);
  for (int i = 0; i < 3; ++i) {
    net.segments[static_cast<std::size_t>(i)].id = i;
    net.segments[static_cast<std::size_t>(i)].road_type = i;
  }
  net.successors = {{1}, {2}, {}};
  GpsTrajectory gps;
  gps.points = {GpsPoint{0, 0, 100}, GpsPoint{0, 0, 130}, GpsPoint{0, 0, 200}};
  // points 0,1 on path position 0; point 2 on position 2; position 1 is a gap
  auto toks = assign_road_times({0, 1, 2}, {0, 0, 2}, gps, net);
  REQUIRE(toks.size() == 3);
  CHECK(toks[0].t == 100.0);  // first aligned point wins
  CHECK(toks[1].t == 150.0);  // midpoint interpolation
  CHECK(toks[2].t == 200.0);
  CHECK(toks[1].road_type == 1);
}

TEST_CASE("change_rate extremes") {
  std::vector<int> a{1, 2, 3, 4};
  CHECK(change_rate(a, a) == 0.0);
  CHECK(change_rate(a, {7, 8, 9}) == 1.0);
  CHECK(change_rate(a, {1, 2, 9, 4}) == doctest::Approx(0.25));
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    std::vector<int> u, v;
    for (std::size_t k = 0; k < 1 + rng() % 10; ++k) u.push_back(static_cast<int>(rng() % 5));
    for (std::size_t k = 0; k < 1 + rng() % 10; ++k) v.push_back(static_cast<int>(rng() % 5));
    const double r = change_rate(u, v);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
  }
}
