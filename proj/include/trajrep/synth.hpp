#pragma once

#include <cstdint>

#include "trajrep/traj.hpp"

namespace trajrep {

// Synthetic world: a planar lattice road network plus shortest-path-biased
// random-walk trajectories with known ground truth. Fully deterministic per
// (config, seed).
struct SynthConfig {
  int lattice_rows = 10;       // intersections per column
  int lattice_cols = 10;       // intersections per row
  double spacing_m = 250.0;    // lattice edge length
  int num_trajectories = 1000;
  double sample_interval_s = 15.0;
  double noise_sigma_m = 10.0;
  double min_speed = 8.0;      // m/s, maxspeed attribute range
  double max_speed = 16.0;
  int num_classes = 4;         // region-of-origin labels
  int min_route_edges = 5;
  int max_route_edges = 14;
  double origin_lon = 0.0;
  double origin_lat = 0.0;
  // Monday 2024-01-01 00:00 UTC; start times are spread over one week.
  double epoch_start = 1704067200.0;
};

struct SynthWorld {
  RoadNetwork net;
  std::vector<GpsTrajectory> trajectories;  // labels, travel times, truth paths
};

SynthWorld synth_world(const SynthConfig& cfg, std::uint64_t seed);

}  // namespace trajrep
