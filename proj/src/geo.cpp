#include "trajrep/geo.hpp"

#include <cmath>

namespace trajrep {

namespace {
constexpr double kDeg2Rad = M_PI / 180.0;
}

double haversine(const GpsPoint& a, const GpsPoint& b) {
  const double phi1 = a.lat * kDeg2Rad;
  const double phi2 = b.lat * kDeg2Rad;
  const double dphi = (b.lat - a.lat) * kDeg2Rad;
  const double dlam = (b.lon - a.lon) * kDeg2Rad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlam / 2.0);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

double azimuth(const GpsPoint& prev, const GpsPoint& cur) {
  if (prev.lon == cur.lon && prev.lat == cur.lat) return 0.0;
  const double phi1 = prev.lat * kDeg2Rad;
  const double phi2 = cur.lat * kDeg2Rad;
  const double dlam = (cur.lon - prev.lon) * kDeg2Rad;
  const double y = std::sin(dlam) * std::cos(phi2);
  const double x = std::cos(phi1) * std::sin(phi2) - std::sin(phi1) * std::cos(phi2) * std::cos(dlam);
  double deg = std::atan2(y, x) / kDeg2Rad;
  if (deg < 0.0) deg += 360.0;
  if (deg >= 360.0) deg -= 360.0;
  return deg;
}

void LocalProjection::to_meters(double lon, double lat, double& x, double& y) const {
  const double clat = std::cos(origin_lat * kDeg2Rad);
  x = (lon - origin_lon) * kDeg2Rad * kEarthRadiusM * clat;
  y = (lat - origin_lat) * kDeg2Rad * kEarthRadiusM;
}

void LocalProjection::to_lonlat(double x, double y, double& lon, double& lat) const {
  const double clat = std::cos(origin_lat * kDeg2Rad);
  lon = origin_lon + x / (kEarthRadiusM * clat) / kDeg2Rad;
  lat = origin_lat + y / kEarthRadiusM / kDeg2Rad;
}

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by,
                              double& t_out) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) {
    t = ((px - ax) * dx + (py - ay) * dy) / len2;
    t = std::min(1.0, std::max(0.0, t));
  }
  const double cx = ax + t * dx, cy = ay + t * dy;
  t_out = t;
  return std::hypot(px - cx, py - cy);
}

}  // namespace trajrep
