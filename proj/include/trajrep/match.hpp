#pragma once

#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "trajrep/traj.hpp"

namespace trajrep {

struct MatchParams {
  double radius_m = 200.0;  // candidate search radius
  double sigma_m = 20.0;    // Gaussian emission stddev on point-segment distance
  double beta_m = 200.0;    // transition scale on |route - great-circle| gap
  int max_candidates = 8;
};

struct UnmatchablePointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DisconnectedTrajectoryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MatchResult {
  // Path-completed segment sequence; consecutive entries adjacent in A,
  // consecutive duplicates collapsed.
  std::vector<int> path;
  // For each GPS point, its index into path.
  std::vector<int> point_position;
};

// Viterbi map matching with Gaussian emissions and shortest-path-based
// transition probabilities. One instance per network; caches per-segment
// shortest-path trees across calls.
class MapMatcher {
 public:
  explicit MapMatcher(const RoadNetwork& net, MatchParams params = {});

  MatchResult match(const GpsTrajectory& gps) const;
  std::vector<RoadToken> match_tokens(const GpsTrajectory& gps, double utc_offset_s = 0.0) const;

  // Segment-to-segment shortest path, both endpoints included.
  // Empty if unreachable.
  std::vector<int> shortest_path(int from, int to) const;

 private:
  struct Candidate {
    int segment = -1;
    double offset_m = 0.0;  // distance from segment start to the projection
    double dist_m = 0.0;    // point-to-segment distance
  };
  struct SpTree {
    std::vector<double> dist;  // cumulative length including target segment
    std::vector<int> parent;
  };

  std::vector<Candidate> candidates_for(const GpsPoint& p) const;
  const SpTree& sp_tree(int source) const;
  double route_distance(const Candidate& a, const Candidate& b) const;

  const RoadNetwork& net_;
  MatchParams params_;
  LocalProjection proj_;
  // projected polylines, flattened (x, y) pairs per segment
  std::vector<std::vector<double>> seg_xy_;
  mutable std::unordered_map<int, SpTree> sp_cache_;
};

}  // namespace trajrep
