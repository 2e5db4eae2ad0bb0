#include "trajrep/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <random>
#include <stdexcept>

namespace trajrep {

namespace {

struct Lattice {
  int rows, cols;
  double spacing;
  int node(int r, int c) const { return r * cols + c; }
  int node_r(int n) const { return n / cols; }
  int node_c(int n) const { return n % cols; }
  double x(int n) const { return node_c(n) * spacing; }
  double y(int n) const { return node_r(n) * spacing; }
};

}  // namespace

SynthWorld synth_world(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.lattice_rows < 2 || cfg.lattice_cols < 2 || cfg.num_trajectories < 0 ||
      cfg.spacing_m <= 0.0 || cfg.sample_interval_s <= 0.0 || cfg.num_classes < 1 ||
      cfg.min_speed <= 0.0 || cfg.max_speed < cfg.min_speed) {
    throw std::invalid_argument("synth_world: invalid config");
  }
  std::mt19937_64 rng(seed);
  const Lattice lat{cfg.lattice_rows, cfg.lattice_cols, cfg.spacing_m};
  const LocalProjection proj{cfg.origin_lon, cfg.origin_lat};

  SynthWorld world;
  // Road types per street line, so neighboring segments share a type.
  std::uniform_int_distribution<int> type_dist(0, kNumRoadTypes - 1);
  std::vector<int> row_type(static_cast<std::size_t>(cfg.lattice_rows));
  std::vector<int> col_type(static_cast<std::size_t>(cfg.lattice_cols));
  for (int& t : row_type) t = type_dist(rng);
  for (int& t : col_type) t = type_dist(rng);

  // Directed segment per lattice edge direction.
  std::map<std::pair<int, int>, int> edge_seg;  // (from node, to node) -> id
  std::uniform_real_distribution<double> speed_dist(cfg.min_speed, cfg.max_speed);
  auto add_edge_pair = [&](int a, int b, int road_type) {
    const double speed = speed_dist(rng);
    for (auto [u, v] : {std::pair{a, b}, std::pair{b, a}}) {
      RoadSegment seg;
      seg.id = static_cast<int>(world.net.segments.size());
      GpsPoint p0, p1;
      proj.to_lonlat(lat.x(u), lat.y(u), p0.lon, p0.lat);
      proj.to_lonlat(lat.x(v), lat.y(v), p1.lon, p1.lat);
      seg.polyline = {p0, p1};
      seg.length_m = cfg.spacing_m;
      seg.road_type = road_type;
      seg.maxspeed = speed;
      seg.avg_travel_time = seg.length_m / speed;
      seg.direction = azimuth(p0, p1);
      edge_seg[{u, v}] = seg.id;
      world.net.segments.push_back(std::move(seg));
    }
  };
  for (int r = 0; r < cfg.lattice_rows; ++r) {
    for (int c = 0; c + 1 < cfg.lattice_cols; ++c) {
      add_edge_pair(lat.node(r, c), lat.node(r, c + 1), row_type[static_cast<std::size_t>(r)]);
    }
  }
  for (int c = 0; c < cfg.lattice_cols; ++c) {
    for (int r = 0; r + 1 < cfg.lattice_rows; ++r) {
      add_edge_pair(lat.node(r, c), lat.node(r + 1, c), col_type[static_cast<std::size_t>(c)]);
    }
  }
  // Successors: segments leaving my end node, immediate U-turns excluded.
  std::vector<std::pair<int, int>> nodes_of(world.net.segments.size());
  for (const auto& [uv, id] : edge_seg) nodes_of[static_cast<std::size_t>(id)] = uv;
  std::vector<std::vector<int>> leaving(static_cast<std::size_t>(cfg.lattice_rows * cfg.lattice_cols));
  for (const auto& [uv, id] : edge_seg) leaving[static_cast<std::size_t>(uv.first)].push_back(id);
  world.net.successors.resize(world.net.segments.size());
  for (const auto& [uv, id] : edge_seg) {
    for (int next : leaving[static_cast<std::size_t>(uv.second)]) {
      if (nodes_of[static_cast<std::size_t>(next)].second == uv.first) continue;  // reverse
      world.net.successors[static_cast<std::size_t>(id)].push_back(next);
    }
  }
  for (auto& s : world.net.successors) std::sort(s.begin(), s.end());
  auto preds = world.net.predecessors();
  for (auto& seg : world.net.segments) {
    seg.out_degree = static_cast<int>(world.net.successors[static_cast<std::size_t>(seg.id)].size());
    seg.in_degree = static_cast<int>(preds[static_cast<std::size_t>(seg.id)].size());
  }

  // Trajectories: shortest-path-biased walks between lattice nodes.
  const int num_nodes = cfg.lattice_rows * cfg.lattice_cols;
  std::uniform_int_distribution<int> node_dist(0, num_nodes - 1);
  std::uniform_real_distribution<double> bias_dist(1.0, 2.5);
  std::uniform_real_distribution<double> start_dist(0.0, 7.0 * 86400.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int ti = 0; ti < cfg.num_trajectories; ++ti) {
    int origin = node_dist(rng), dest = origin;
    for (int tries = 0; tries < 1000; ++tries) {
      dest = node_dist(rng);
      const int manhattan = std::abs(lat.node_r(dest) - lat.node_r(origin)) +
                            std::abs(lat.node_c(dest) - lat.node_c(origin));
      if (manhattan >= cfg.min_route_edges && manhattan <= cfg.max_route_edges) break;
    }
    // Per-trajectory perturbed edge weights give varied but plausible routes.
    std::map<std::pair<int, int>, double> weight;
    for (const auto& [uv, id] : edge_seg) weight[uv] = cfg.spacing_m * bias_dist(rng);
    std::vector<double> dist(static_cast<std::size_t>(num_nodes),
                             std::numeric_limits<double>::infinity());
    std::vector<int> parent(static_cast<std::size_t>(num_nodes), -1);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[static_cast<std::size_t>(origin)] = 0.0;
    pq.emplace(0.0, origin);
    while (!pq.empty()) {
      auto [d, u] = pq.top();
      pq.pop();
      if (d > dist[static_cast<std::size_t>(u)]) continue;
      const int r = lat.node_r(u), c = lat.node_c(u);
      const int nbrs[4] = {c + 1 < cfg.lattice_cols ? lat.node(r, c + 1) : -1,
                           c > 0 ? lat.node(r, c - 1) : -1,
                           r + 1 < cfg.lattice_rows ? lat.node(r + 1, c) : -1,
                           r > 0 ? lat.node(r - 1, c) : -1};
      for (int v : nbrs) {
        if (v < 0) continue;
        const double nd = d + weight[{u, v}];
        if (nd < dist[static_cast<std::size_t>(v)]) {
          dist[static_cast<std::size_t>(v)] = nd;
          parent[static_cast<std::size_t>(v)] = u;
          pq.emplace(nd, v);
        }
      }
    }
    std::vector<int> node_path;
    for (int cur = dest; cur != -1; cur = parent[static_cast<std::size_t>(cur)]) {
      node_path.push_back(cur);
    }
    std::reverse(node_path.begin(), node_path.end());
    if (node_path.size() < 2) continue;

    GpsTrajectory traj;
    traj.id = "synth-" + std::to_string(ti);
    const int qr = lat.node_r(origin) >= cfg.lattice_rows / 2 ? 1 : 0;
    const int qc = lat.node_c(origin) >= cfg.lattice_cols / 2 ? 1 : 0;
    traj.label = (qr * 2 + qc) % cfg.num_classes;
    for (std::size_t i = 0; i + 1 < node_path.size(); ++i) {
      traj.truth_path.push_back(edge_seg.at({node_path[i], node_path[i + 1]}));
    }
    // Travel time is deterministic in path length and per-segment maxspeed.
    std::vector<double> t_break{0.0};
    for (int seg_id : traj.truth_path) {
      const auto& seg = world.net.segments[static_cast<std::size_t>(seg_id)];
      t_break.push_back(t_break.back() + seg.length_m / seg.maxspeed);
    }
    const double duration = t_break.back();
    const double t0 = cfg.epoch_start + start_dist(rng);
    auto position_at = [&](double tau, double& x, double& y) {
      std::size_t k = 1;
      while (k + 1 < t_break.size() && t_break[k] < tau) ++k;
      const double f = (tau - t_break[k - 1]) / (t_break[k] - t_break[k - 1]);
      const int u = node_path[k - 1], v = node_path[k];
      x = lat.x(u) + f * (lat.x(v) - lat.x(u));
      y = lat.y(u) + f * (lat.y(v) - lat.y(u));
    };
    std::vector<double> sample_times;
    for (double tau = 0.0; tau < duration; tau += cfg.sample_interval_s) {
      sample_times.push_back(tau);
    }
    sample_times.push_back(duration);  // keep the exact destination point
    for (double tau : sample_times) {
      double x, y;
      position_at(std::min(tau, duration), x, y);
      x += cfg.noise_sigma_m * noise(rng);
      y += cfg.noise_sigma_m * noise(rng);
      GpsPoint p;
      proj.to_lonlat(x, y, p.lon, p.lat);
      p.t = t0 + tau;
      traj.points.push_back(p);
    }
    traj.travel_time = duration / 60.0;
    world.trajectories.push_back(std::move(traj));
  }
  return world;
}

}  // namespace trajrep
