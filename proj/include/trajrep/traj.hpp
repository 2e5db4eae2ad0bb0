#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trajrep/geo.hpp"

namespace trajrep {

struct GpsTrajectory {
  std::string id;
  std::vector<GpsPoint> points;          // length >= 2, strictly increasing t
  std::optional<int> label;              // class index
  std::optional<double> travel_time;     // minutes
  std::vector<int> truth_path;           // ground-truth segment ids (synthetic only)

  double path_length_m() const;
};

// Regular grid over a lon/lat bounding box, cell ids row-major from the
// southwest corner: id = row * W + col.
struct GridSpec {
  double origin_lon = 0.0;  // southwest corner
  double origin_lat = 0.0;
  double cell_m = 100.0;
  int rows = 0;  // H
  int cols = 0;  // W
  int num_cells() const { return rows * cols; }
  // Throws std::out_of_range if the point is outside the grid.
  int cell_of(const GpsPoint& p) const;
  void cell_center(int cell, double& lon, double& lat) const;
  LocalProjection projection() const { return LocalProjection{origin_lon, origin_lat}; }
};

struct GridToken {
  int cell_id = 0;
  double t = 0.0;
  GpsPoint anchor;
  // (lon, lat, meters to previous anchor, azimuth degrees to previous anchor)
  double feat_x = 0.0, feat_y = 0.0, feat_d = 0.0, feat_r = 0.0;
};

inline constexpr int kNumRoadTypes = 8;

struct RoadSegment {
  int id = 0;
  std::vector<GpsPoint> polyline;  // untimed geometry, t ignored
  double length_m = 0.0;
  int road_type = 0;  // [0, 8)
  double maxspeed = 0.0;
  double avg_travel_time = 0.0;
  double direction = 0.0;
  int out_degree = 0;
  int in_degree = 0;
};

struct RoadNetwork {
  std::vector<RoadSegment> segments;
  // successors[i] = segments j with A[i, j] = 1
  std::vector<std::vector<int>> successors;

  int size() const { return static_cast<int>(segments.size()); }
  bool adjacent(int i, int j) const;
  std::vector<std::vector<int>> predecessors() const;
};

struct RoadToken {
  int segment_id = 0;
  double t = 0.0;
  int minute_of_day = 0;  // [0, 1440)
  int day_of_week = 0;    // [0, 7), 0 = Monday
  int road_type = 0;
};

struct MaskPlan {
  std::vector<int> positions;  // sorted, contiguous runs of span_len
  int span_len = 2;
  double ratio = 0.2;
  bool empty() const { return positions.empty(); }
};

// --- grid expression ---

// Consecutive points in the same cell collapse to one token anchored at the
// run's first point. First token has d = r = 0.
std::vector<GridToken> to_grid_trajectory(const GpsTrajectory& gps, const GridSpec& spec);

// Token visit counts per cell over the given (training) trajectories.
std::vector<std::int64_t> traffic_flow(const std::vector<std::vector<GridToken>>& grid_trajs,
                                       const GridSpec& spec);

// --- road expression ---

// Timestamp assignment for a matched segment path: a segment with aligned GPS
// points takes the first such point's time; gap segments interpolate linearly
// in index between timestamped neighbors. minute/day use utc_offset seconds.
std::vector<RoadToken> assign_road_times(const std::vector<int>& segment_path,
                                         const std::vector<int>& point_segment,
                                         const GpsTrajectory& gps, const RoadNetwork& net,
                                         double utc_offset_s = 0.0);

void fill_time_fields(RoadToken& tok, double utc_offset_s);

// --- masking ---

// Non-overlapping spans of span_len at uniform starts; |masked| =
// max(l, floor(ratio*len)) rounded down to a multiple of l and < len.
// Sequences shorter than l + 2 (or ratio <= 0) get an empty plan.
MaskPlan plan_mask(int len, double ratio, int span_len, std::uint64_t seed);

// Order-respecting change rate: 1 - |LCS(a, b)| / max(|a|, |b|). In [0, 1].
double change_rate(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace trajrep
