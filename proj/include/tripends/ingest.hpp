#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tripends/geo.hpp"

namespace tripends {

/// One device fix. Times are integer seconds since the epoch, UTC.
struct GpsRecord {
  std::string truck_id;
  std::int64_t timestamp = 0;
  double lon = 0.0;
  double lat = 0.0;
  std::optional<double> speed;    // km/h, device-reported
  std::optional<double> heading;  // degrees

  LonLat position() const { return {lon, lat}; }
  bool operator==(const GpsRecord&) const = default;
};

/// Time-ordered fixes of one truck: strictly increasing timestamps, at least
/// two records, one truck_id throughout.
struct Trajectory {
  std::string truck_id;
  std::vector<GpsRecord> records;

  std::size_t size() const { return records.size(); }
  const GpsRecord& operator[](std::size_t i) const { return records[i]; }
  bool operator==(const Trajectory&) const = default;
};

struct CityBoundary {
  std::string name;
  /// Each polygon is an outer ring followed by optional hole rings.
  std::vector<std::vector<Ring>> polygons;

  bool contains(LonLat p) const;
  LonLat centroid() const;
};

inline constexpr const char* kGpsCsvHeader = "truck_id,timestamp,lon,lat,speed,heading";

struct GpsParseResult {
  std::vector<GpsRecord> records;
  std::size_t invalid_rows = 0;
};

/// Reads the GPS CSV schema. A wrong header or missing file throws InputError;
/// bad rows are skipped and tallied.
GpsParseResult parse_gps_csv(const std::filesystem::path& path);
GpsParseResult parse_gps_text(const std::string& text, const std::filesystem::path& source = "<memory>");

/// Serializes records in the GPS CSV schema, one line per record.
std::string format_gps_csv(const std::vector<Trajectory>& trajectories);

/// Buckets records by truck_id; map order gives deterministic truck order.
std::map<std::string, std::vector<GpsRecord>> group_by_truck(std::vector<GpsRecord> records);

struct CleanOptions {
  double v_max_kmh = 120.0;
};

/// Sorts, collapses same-timestamp duplicates (first wins) and strips fixes that
/// imply a speed above v_max to a neighbour, repeating until none remain.
/// Returns nullopt if fewer than two records survive.
std::optional<Trajectory> clean_trajectory(std::vector<GpsRecord> records,
                                           const CleanOptions& options = {});

/// Maximal runs of fixes strictly inside the boundary, each at least two fixes.
std::vector<Trajectory> clip_to_city(const Trajectory& traj, const CityBoundary& boundary);

/// GeoJSON Polygon or MultiPolygon, bare or wrapped in a Feature/FeatureCollection.
CityBoundary load_boundary_geojson(const std::filesystem::path& path);
CityBoundary parse_boundary_geojson(const std::string& text);

/// Validates ring closure and size; throws InputError.
void validate_ring(const Ring& ring);

}  // namespace tripends
