#include "trajrep/traj.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace trajrep {

double GpsTrajectory::path_length_m() const {
  double s = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) s += haversine(points[i - 1], points[i]);
  return s;
}

int GridSpec::cell_of(const GpsPoint& p) const {
  double x, y;
  projection().to_meters(p.lon, p.lat, x, y);
  const int col = static_cast<int>(std::floor(x / cell_m));
  const int row = static_cast<int>(std::floor(y / cell_m));
  if (col < 0 || col >= cols || row < 0 || row >= rows) {
    throw std::out_of_range("point (" + std::to_string(p.lon) + ", " + std::to_string(p.lat) +
                            ") outside grid of " + std::to_string(rows) + "x" +
                            std::to_string(cols) + " cells");
  }
  return row * cols + col;
}

void GridSpec::cell_center(int cell, double& lon, double& lat) const {
  const int row = cell / cols, col = cell % cols;
  projection().to_lonlat((col + 0.5) * cell_m, (row + 0.5) * cell_m, lon, lat);
}

bool RoadNetwork::adjacent(int i, int j) const {
  const auto& s = successors[static_cast<std::size_t>(i)];
  return std::find(s.begin(), s.end(), j) != s.end();
}

std::vector<std::vector<int>> RoadNetwork::predecessors() const {
  std::vector<std::vector<int>> pred(segments.size());
  for (std::size_t i = 0; i < successors.size(); ++i) {
    for (int j : successors[i]) pred[static_cast<std::size_t>(j)].push_back(static_cast<int>(i));
  }
  return pred;
}

std::vector<GridToken> to_grid_trajectory(const GpsTrajectory& gps, const GridSpec& spec) {
  std::vector<GridToken> out;
  const GpsPoint* prev_anchor = nullptr;
  for (std::size_t i = 0; i < gps.points.size(); ++i) {
    int cell;
    try {
      cell = spec.cell_of(gps.points[i]);
    } catch (const std::out_of_range& e) {
      throw std::out_of_range("trajectory " + gps.id + " point " + std::to_string(i) + ": " +
                              e.what());
    }
    if (!out.empty() && out.back().cell_id == cell) continue;  // collapse run
    GridToken tok;
    tok.cell_id = cell;
    tok.t = gps.points[i].t;
    tok.anchor = gps.points[i];
    tok.feat_x = gps.points[i].lon;
    tok.feat_y = gps.points[i].lat;
    if (prev_anchor) {
      tok.feat_d = haversine(*prev_anchor, gps.points[i]);
      tok.feat_r = azimuth(*prev_anchor, gps.points[i]);
    }
    out.push_back(tok);
    prev_anchor = &out.back().anchor;
  }
  return out;
}

std::vector<std::int64_t> traffic_flow(const std::vector<std::vector<GridToken>>& grid_trajs,
                                       const GridSpec& spec) {
  std::vector<std::int64_t> flow(static_cast<std::size_t>(spec.num_cells()), 0);
  for (const auto& traj : grid_trajs) {
    for (const auto& tok : traj) flow[static_cast<std::size_t>(tok.cell_id)] += 1;
  }
  return flow;
}

void fill_time_fields(RoadToken& tok, double utc_offset_s) {
  const double local = tok.t + utc_offset_s;
  double day_s = std::fmod(local, 86400.0);
  if (day_s < 0) day_s += 86400.0;
  tok.minute_of_day = std::min(1439, static_cast<int>(day_s / 60.0));
  const auto days = static_cast<std::int64_t>(std::floor(local / 86400.0));
  // 1970-01-01 was a Thursday; Monday = 0.
  tok.day_of_week = static_cast<int>(((days + 3) % 7 + 7) % 7);
}

std::vector<RoadToken> assign_road_times(const std::vector<int>& segment_path,
                                         const std::vector<int>& point_segment,
                                         const GpsTrajectory& gps, const RoadNetwork& net,
                                         double utc_offset_s) {
  if (segment_path.empty()) {
    throw std::invalid_argument("assign_road_times: empty segment path");
  }
  const int n = static_cast<int>(segment_path.size());
  std::vector<double> t(static_cast<std::size_t>(n),
                        std::numeric_limits<double>::quiet_NaN());
  // First aligned GPS point wins for each path position.
  for (std::size_t k = 0; k < point_segment.size(); ++k) {
    const int pos = point_segment[k];
    if (pos < 0 || pos >= n) continue;
    if (std::isnan(t[static_cast<std::size_t>(pos)])) {
      t[static_cast<std::size_t>(pos)] = gps.points[k].t;
    }
  }
  // Gap positions interpolate linearly in index between timestamped
  // neighbors; edges extrapolate to the nearest timestamp.
  int prev = -1;
  for (int i = 0; i < n; ++i) {
    if (std::isnan(t[static_cast<std::size_t>(i)])) continue;
    if (prev < 0) {
      for (int j = 0; j < i; ++j) t[static_cast<std::size_t>(j)] = t[static_cast<std::size_t>(i)];
    } else {
      for (int j = prev + 1; j < i; ++j) {
        const double f = static_cast<double>(j - prev) / (i - prev);
        t[static_cast<std::size_t>(j)] =
            t[static_cast<std::size_t>(prev)] +
            f * (t[static_cast<std::size_t>(i)] - t[static_cast<std::size_t>(prev)]);
      }
    }
    prev = i;
  }
  if (prev < 0) {
    for (int j = 0; j < n; ++j) t[static_cast<std::size_t>(j)] = gps.points.front().t;
  } else {
    for (int j = prev + 1; j < n; ++j) {
      t[static_cast<std::size_t>(j)] = t[static_cast<std::size_t>(prev)];
    }
  }
  std::vector<RoadToken> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    RoadToken tok;
    tok.segment_id = segment_path[static_cast<std::size_t>(i)];
    tok.t = t[static_cast<std::size_t>(i)];
    tok.road_type = net.segments[static_cast<std::size_t>(tok.segment_id)].road_type;
    fill_time_fields(tok, utc_offset_s);
    out.push_back(tok);
  }
  return out;
}

MaskPlan plan_mask(int len, double ratio, int span_len, std::uint64_t seed) {
  MaskPlan plan;
  plan.span_len = span_len;
  plan.ratio = ratio;
  if (ratio <= 0.0 || span_len < 1 || len < span_len + 2) return plan;
  int n_masked = std::max(span_len, static_cast<int>(std::floor(ratio * len)));
  n_masked = (n_masked / span_len) * span_len;
  while (n_masked >= len) n_masked -= span_len;
  if (n_masked <= 0) return plan;
  const int spans = n_masked / span_len;
  // Stars-and-bars placement: sorted draws from [0, len - spans*l] shifted by
  // k*l give non-overlapping spans at uniform starts.
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dist(0, len - spans * span_len);
  std::vector<int> u(static_cast<std::size_t>(spans));
  for (int& v : u) v = dist(rng);
  std::sort(u.begin(), u.end());
  for (int k = 0; k < spans; ++k) {
    const int start = u[static_cast<std::size_t>(k)] + k * span_len;
    for (int j = 0; j < span_len; ++j) plan.positions.push_back(start + j);
  }
  return plan;
}

double change_rate(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty() && b.empty()) return 0.0;
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return 1.0 - static_cast<double>(prev[m]) / static_cast<double>(std::max(n, m));
}

}  // namespace trajrep
