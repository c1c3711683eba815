#include "tripends/geo.hpp"

#include <algorithm>

namespace tripends {

double haversine(LonLat a, LonLat b) {
  const double phi1 = deg2rad(a.lat);
  const double phi2 = deg2rad(b.lat);
  const double dphi = phi2 - phi1;
  const double dlambda = deg2rad(b.lon - a.lon);
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(h));
}

LocalProjection::LocalProjection(LonLat center)
    : center_(center), cos_lat_(std::cos(deg2rad(center.lat))) {}

XY LocalProjection::forward(LonLat p) const {
  return {kEarthRadiusM * deg2rad(p.lon - center_.lon) * cos_lat_,
          kEarthRadiusM * deg2rad(p.lat - center_.lat)};
}

LonLat LocalProjection::inverse(XY p) const {
  return {center_.lon + rad2deg(p.x / (kEarthRadiusM * cos_lat_)),
          center_.lat + rad2deg(p.y / kEarthRadiusM)};
}

double point_segment_distance(XY p, XY a, XY b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) {
    t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  }
  const double cx = a.x + t * dx - p.x;
  const double cy = a.y + t * dy - p.y;
  return std::sqrt(cx * cx + cy * cy);
}

bool point_in_ring(LonLat p, std::span<const LonLat> ring) {
  bool inside = false;
  const std::size_t n = ring.size();
  if (n < 3) return false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const LonLat& a = ring[i];
    const LonLat& b = ring[j];
    if ((a.lat > p.lat) != (b.lat > p.lat)) {
      const double x = (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon;
      if (p.lon < x) inside = !inside;
    }
  }
  return inside;
}

bool point_in_rings(LonLat p, std::span<const Ring> rings) {
  bool inside = false;
  for (const auto& r : rings) {
    if (point_in_ring(p, r)) inside = !inside;
  }
  return inside;
}

LonLat offset_meters(LonLat origin, double east_m, double north_m) {
  return LocalProjection(origin).inverse({east_m, north_m});
}

}  // namespace tripends
