#pragma once

#include <map>
#include <string>
#include <vector>

#include "trajrep/traj.hpp"

namespace trajrep {

// --- GPS trajectory files: one JSON object per line ---
// {"id": ..., "label": ...?, "travel_time": ...?, "truth_path": [...]?,
//  "points": [[lon, lat, t], ...]}
std::vector<GpsTrajectory> load_gps_file(const std::string& path);
void save_gps_file(const std::string& path, const std::vector<GpsTrajectory>& trajs);

// --- road network: segments CSV (polyline as WKT LINESTRING) + edges CSV ---
RoadNetwork load_network(const std::string& segments_csv, const std::string& edges_csv);
void save_network(const std::string& segments_csv, const std::string& edges_csv,
                  const RoadNetwork& net);

// --- processed token caches: one JSON object per line, keyed by id ---
void save_grid_cache(const std::string& path,
                     const std::map<std::string, std::vector<GridToken>>& cache);
std::map<std::string, std::vector<GridToken>> load_grid_cache(const std::string& path);
void save_road_cache(const std::string& path,
                     const std::map<std::string, std::vector<RoadToken>>& cache);
std::map<std::string, std::vector<RoadToken>> load_road_cache(const std::string& path);

// --- run artifacts ---
struct LossRow {
  long step = 0;
  int epoch = 0;
  double l_cl = 0.0, l_mlm = 0.0, l_total = 0.0;
  double wall_ms = 0.0;
};
void save_loss_csv(const std::string& path, const std::vector<LossRow>& rows);
std::vector<LossRow> load_loss_csv(const std::string& path);

void save_metrics(const std::string& path, const std::string& task,
                  const std::map<std::string, double>& metrics, const std::string& config_hash,
                  std::uint64_t seed);

// id -> embedding vector, one JSON object per line: {"id": ..., "vec": [...]}
void save_vectors(const std::string& path,
                  const std::vector<std::pair<std::string, std::vector<double>>>& vecs);
std::vector<std::pair<std::string, std::vector<double>>> load_vectors(const std::string& path);

}  // namespace trajrep
