#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace tripends {

inline constexpr double kEarthRadiusM = 6371000.0;
inline constexpr double kPi = 3.14159265358979323846;

inline constexpr double deg2rad(double d) { return d * kPi / 180.0; }
inline constexpr double rad2deg(double r) { return r * 180.0 / kPi; }

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;

  friend bool operator==(const LonLat&, const LonLat&) = default;
};

/// Great-circle distance in meters on a sphere of radius kEarthRadiusM.
double haversine(LonLat a, LonLat b);

/// Planar coordinates in meters.
struct XY {
  double x = 0.0;
  double y = 0.0;
};

/// Equirectangular projection about a fixed center. Accurate to well under a
/// percent within a few tens of kilometers of the center.
class LocalProjection {
 public:
  LocalProjection() = default;
  explicit LocalProjection(LonLat center);

  XY forward(LonLat p) const;
  LonLat inverse(XY p) const;
  LonLat center() const { return center_; }

 private:
  LonLat center_;
  double cos_lat_ = 1.0;
};

/// Distance from p to the segment [a, b] in the plane.
double point_segment_distance(XY p, XY a, XY b);

using Ring = std::vector<LonLat>;

/// Even-odd rule. Points exactly on an edge may land on either side.
bool point_in_ring(LonLat p, std::span<const LonLat> ring);

/// Even-odd over all rings together, so inner rings act as holes.
bool point_in_rings(LonLat p, std::span<const Ring> rings);

/// Offsets a point by (east, north) meters using the local tangent plane.
LonLat offset_meters(LonLat origin, double east_m, double north_m);

}  // namespace tripends
