#pragma once

namespace trajrep {

inline constexpr double kEarthRadiusM = 6371000.0;

struct GpsPoint {
  double lon = 0.0;  // degrees, [-180, 180]
  double lat = 0.0;  // degrees, [-90, 90]
  double t = 0.0;    // seconds since epoch
};

// Great-circle distance in meters.
double haversine(const GpsPoint& a, const GpsPoint& b);

// Initial great-circle bearing from prev to cur, degrees clockwise from
// north in [0, 360). Coincident points map to 0.
double azimuth(const GpsPoint& prev, const GpsPoint& cur);

// Local equirectangular projection anchored at an origin point; good enough
// at city scale and self-consistent with its inverse.
struct LocalProjection {
  double origin_lon = 0.0;
  double origin_lat = 0.0;
  // meters east/north of origin
  void to_meters(double lon, double lat, double& x, double& y) const;
  void to_lonlat(double x, double y, double& lon, double& lat) const;
};

// Distance from point p to segment [a, b] in a planar metric frame, plus the
// projection parameter clamped to [0, 1].
double point_segment_distance(double px, double py, double ax, double ay, double bx, double by,
                              double& t_out);

}  // namespace trajrep
