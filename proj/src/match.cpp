#include "trajrep/match.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace trajrep {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

MapMatcher::MapMatcher(const RoadNetwork& net, MatchParams params)
    : net_(net), params_(params) {
  double min_lon = kInf, min_lat = kInf;
  for (const auto& seg : net.segments) {
    for (const auto& p : seg.polyline) {
      min_lon = std::min(min_lon, p.lon);
      min_lat = std::min(min_lat, p.lat);
    }
  }
  proj_ = LocalProjection{min_lon, min_lat};
  seg_xy_.resize(net.segments.size());
  for (std::size_t s = 0; s < net.segments.size(); ++s) {
    auto& xy = seg_xy_[s];
    xy.reserve(net.segments[s].polyline.size() * 2);
    for (const auto& p : net.segments[s].polyline) {
      double x, y;
      proj_.to_meters(p.lon, p.lat, x, y);
      xy.push_back(x);
      xy.push_back(y);
    }
  }
}

std::vector<MapMatcher::Candidate> MapMatcher::candidates_for(const GpsPoint& p) const {
  double px, py;
  proj_.to_meters(p.lon, p.lat, px, py);
  std::vector<Candidate> cands;
  for (int s = 0; s < net_.size(); ++s) {
    const auto& xy = seg_xy_[static_cast<std::size_t>(s)];
    double best = kInf, best_off = 0.0, walked = 0.0;
    for (std::size_t v = 0; v + 3 < xy.size(); v += 2) {
      double t;
      const double d =
          point_segment_distance(px, py, xy[v], xy[v + 1], xy[v + 2], xy[v + 3], t);
      const double piece = std::hypot(xy[v + 2] - xy[v], xy[v + 3] - xy[v + 1]);
      if (d < best) {
        best = d;
        best_off = walked + t * piece;
      }
      walked += piece;
    }
    if (best <= params_.radius_m) cands.push_back(Candidate{s, best_off, best});
  }
  std::sort(cands.begin(), cands.end(),
            [](const Candidate& a, const Candidate& b) { return a.dist_m < b.dist_m; });
  if (static_cast<int>(cands.size()) > params_.max_candidates) {
    cands.resize(static_cast<std::size_t>(params_.max_candidates));
  }
  return cands;
}

const MapMatcher::SpTree& MapMatcher::sp_tree(int source) const {
  auto it = sp_cache_.find(source);
  if (it != sp_cache_.end()) return it->second;
  SpTree tree;
  tree.dist.assign(net_.segments.size(), kInf);
  tree.parent.assign(net_.segments.size(), -1);
  // dist[j] = min over paths source -> ... -> j of the summed lengths of all
  // segments after the source, including j itself.
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  tree.dist[static_cast<std::size_t>(source)] = 0.0;
  pq.emplace(0.0, source);
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > tree.dist[static_cast<std::size_t>(u)]) continue;
    for (int v : net_.successors[static_cast<std::size_t>(u)]) {
      const double nd = d + net_.segments[static_cast<std::size_t>(v)].length_m;
      if (nd < tree.dist[static_cast<std::size_t>(v)]) {
        tree.dist[static_cast<std::size_t>(v)] = nd;
        tree.parent[static_cast<std::size_t>(v)] = u;
        pq.emplace(nd, v);
      }
    }
  }
  return sp_cache_.emplace(source, std::move(tree)).first->second;
}

double MapMatcher::route_distance(const Candidate& a, const Candidate& b) const {
  if (a.segment == b.segment) return std::abs(b.offset_m - a.offset_m);
  const SpTree& tree = sp_tree(a.segment);
  const double d = tree.dist[static_cast<std::size_t>(b.segment)];
  if (!std::isfinite(d)) return kInf;
  const double la = net_.segments[static_cast<std::size_t>(a.segment)].length_m;
  const double lb = net_.segments[static_cast<std::size_t>(b.segment)].length_m;
  return (la - a.offset_m) + (d - lb) + b.offset_m;
}

std::vector<int> MapMatcher::shortest_path(int from, int to) const {
  if (from == to) return {from};
  const SpTree& tree = sp_tree(from);
  if (!std::isfinite(tree.dist[static_cast<std::size_t>(to)])) return {};
  std::vector<int> path;
  for (int cur = to; cur != -1; cur = tree.parent[static_cast<std::size_t>(cur)]) {
    path.push_back(cur);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

MatchResult MapMatcher::match(const GpsTrajectory& gps) const {
  const int n = static_cast<int>(gps.points.size());
  std::vector<std::vector<Candidate>> cands(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    cands[static_cast<std::size_t>(i)] = candidates_for(gps.points[i]);
    if (cands[static_cast<std::size_t>(i)].empty()) {
      throw UnmatchablePointError("trajectory " + gps.id + ": point " + std::to_string(i) +
                                  " has no road segment within " +
                                  std::to_string(params_.radius_m) + " m");
    }
  }
  // Viterbi in log space.
  const double inv_2s2 = 1.0 / (2.0 * params_.sigma_m * params_.sigma_m);
  std::vector<std::vector<double>> score(static_cast<std::size_t>(n));
  std::vector<std::vector<int>> from(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& cs = cands[static_cast<std::size_t>(i)];
    score[static_cast<std::size_t>(i)].assign(cs.size(), -kInf);
    from[static_cast<std::size_t>(i)].assign(cs.size(), -1);
  }
  for (std::size_t c = 0; c < cands[0].size(); ++c) {
    score[0][c] = -cands[0][c].dist_m * cands[0][c].dist_m * inv_2s2;
  }
  for (int i = 1; i < n; ++i) {
    const double gc = haversine(gps.points[i - 1], gps.points[i]);
    const auto& prev = cands[static_cast<std::size_t>(i - 1)];
    const auto& cur = cands[static_cast<std::size_t>(i)];
    bool any = false;
    for (std::size_t c = 0; c < cur.size(); ++c) {
      const double emit = -cur[c].dist_m * cur[c].dist_m * inv_2s2;
      for (std::size_t p = 0; p < prev.size(); ++p) {
        if (score[static_cast<std::size_t>(i - 1)][p] == -kInf) continue;
        const double route = route_distance(prev[p], cur[c]);
        if (!std::isfinite(route)) continue;
        // The tiny segment-change penalty breaks exact ties (a point sitting
        // on an intersection touches several zero-distance segments) in favor
        // of staying on the current segment.
        const double trans = -std::abs(route - gc) / params_.beta_m -
                             (prev[p].segment == cur[c].segment ? 0.0 : 1e-9);
        const double s = score[static_cast<std::size_t>(i - 1)][p] + trans + emit;
        if (s > score[static_cast<std::size_t>(i)][c]) {
          score[static_cast<std::size_t>(i)][c] = s;
          from[static_cast<std::size_t>(i)][c] = static_cast<int>(p);
          any = true;
        }
      }
    }
    if (!any) {
      throw DisconnectedTrajectoryError("trajectory " + gps.id +
                                        ": no connected candidate path at point " +
                                        std::to_string(i));
    }
  }
  // Backtrack.
  std::vector<int> matched(static_cast<std::size_t>(n));
  std::vector<double> offset(static_cast<std::size_t>(n));
  int best = 0;
  for (std::size_t c = 1; c < cands[static_cast<std::size_t>(n - 1)].size(); ++c) {
    if (score[static_cast<std::size_t>(n - 1)][c] > score[static_cast<std::size_t>(n - 1)][best]) {
      best = static_cast<int>(c);
    }
  }
  for (int i = n - 1; i >= 0; --i) {
    matched[static_cast<std::size_t>(i)] = cands[static_cast<std::size_t>(i)][best].segment;
    offset[static_cast<std::size_t>(i)] = cands[static_cast<std::size_t>(i)][best].offset_m;
    best = from[static_cast<std::size_t>(i)][best];
  }
  // Collapse duplicates and path-complete so consecutive segments are
  // adjacent in A.
  MatchResult res;
  res.point_position.assign(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    const int seg = matched[static_cast<std::size_t>(i)];
    if (res.path.empty()) {
      res.path.push_back(seg);
    } else if (res.path.back() != seg) {
      std::vector<int> link = shortest_path(res.path.back(), seg);
      if (link.empty()) {
        throw DisconnectedTrajectoryError("trajectory " + gps.id + ": no path between segments " +
                                          std::to_string(res.path.back()) + " and " +
                                          std::to_string(seg));
      }
      res.path.insert(res.path.end(), link.begin() + 1, link.end());
    }
    res.point_position[static_cast<std::size_t>(i)] = static_cast<int>(res.path.size()) - 1;
  }
  // Trim end slivers: when a noisy endpoint overshoots an intersection, the
  // route gains a segment it "traverses" for only a few meters. A genuine end
  // segment is traversed well past the emission noise scale, so drop first or
  // last segments whose implied traversal is under 2 sigma.
  const double tau = 2.0 * params_.sigma_m;
  if (res.path.size() > 1) {
    double entry = net_.segments[static_cast<std::size_t>(res.path.front())].length_m;
    for (int i = 0; i < n && res.point_position[static_cast<std::size_t>(i)] == 0; ++i) {
      entry = std::min(entry, offset[static_cast<std::size_t>(i)]);
    }
    if (net_.segments[static_cast<std::size_t>(res.path.front())].length_m - entry < tau) {
      res.path.erase(res.path.begin());
      for (int& pos : res.point_position) pos = std::max(pos - 1, 0);
    }
  }
  if (res.path.size() > 1) {
    const int last = static_cast<int>(res.path.size()) - 1;
    double exit = 0.0;
    for (int i = n - 1; i >= 0 && res.point_position[static_cast<std::size_t>(i)] == last; --i) {
      exit = std::max(exit, offset[static_cast<std::size_t>(i)]);
    }
    if (exit < tau) {
      res.path.pop_back();
      for (int& pos : res.point_position) pos = std::min(pos, last - 1);
    }
  }
  return res;
}

std::vector<RoadToken> MapMatcher::match_tokens(const GpsTrajectory& gps,
                                                double utc_offset_s) const {
  const MatchResult res = match(gps);
  return assign_road_times(res.path, res.point_position, gps, net_, utc_offset_s);
}

}  // namespace trajrep
