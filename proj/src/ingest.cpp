#include "tripends/ingest.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <json.hpp>

#include "tripends/csv.hpp"
#include "tripends/error.hpp"
#include "tripends/geojson.hpp"

namespace tripends {

bool CityBoundary::contains(LonLat p) const {
  return std::any_of(polygons.begin(), polygons.end(),
                     [&](const std::vector<Ring>& rings) { return point_in_rings(p, rings); });
}

LonLat CityBoundary::centroid() const {
  // Vertex mean of the outer rings; good enough to center a projection.
  double lon = 0.0, lat = 0.0;
  std::size_t n = 0;
  for (const auto& poly : polygons) {
    if (poly.empty()) continue;
    const Ring& outer = poly.front();
    for (std::size_t i = 0; i + 1 < outer.size(); ++i) {
      lon += outer[i].lon;
      lat += outer[i].lat;
      ++n;
    }
  }
  if (n == 0) return {};
  return {lon / static_cast<double>(n), lat / static_cast<double>(n)};
}

namespace {

std::optional<GpsRecord> parse_row(const std::vector<std::string_view>& f) {
  if (f.size() != 6 || f[0].empty()) return std::nullopt;
  GpsRecord r;
  r.truck_id = std::string(f[0]);
  auto ts = csv::parse_number<std::int64_t>(f[1]);
  auto lon = csv::parse_number<double>(f[2]);
  auto lat = csv::parse_number<double>(f[3]);
  if (!ts || !lon || !lat) return std::nullopt;
  if (*ts <= 0 || *lon < -180.0 || *lon > 180.0 || *lat < -90.0 || *lat > 90.0) return std::nullopt;
  r.timestamp = *ts;
  r.lon = *lon;
  r.lat = *lat;
  if (!f[4].empty()) {
    r.speed = csv::parse_number<double>(f[4]);
    if (!r.speed || *r.speed < 0.0) return std::nullopt;
  }
  if (!f[5].empty()) {
    r.heading = csv::parse_number<double>(f[5]);
    if (!r.heading || *r.heading < 0.0 || *r.heading > 360.0) return std::nullopt;
  }
  return r;
}

}  // namespace

GpsParseResult parse_gps_text(const std::string& text, const std::filesystem::path& source) {
  GpsParseResult result;
  csv::for_each_row(text, kGpsCsvHeader, source, [&](std::size_t, const auto& fields) {
    if (auto r = parse_row(fields)) {
      result.records.push_back(std::move(*r));
    } else {
      ++result.invalid_rows;
    }
  });
  return result;
}

GpsParseResult parse_gps_csv(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("GPS file not found: " + path.string());
  return parse_gps_text(csv::read_file(path), path);
}

std::string format_gps_csv(const std::vector<Trajectory>& trajectories) {
  std::string out = kGpsCsvHeader;
  out += '\n';
  for (const auto& t : trajectories) {
    for (const auto& r : t.records) {
      fmt::format_to(std::back_inserter(out), "{},{},{},{},", t.truck_id, r.timestamp,
                     r.lon, r.lat);
      if (r.speed) fmt::format_to(std::back_inserter(out), "{:.2f}", *r.speed);
      out += ',';
      if (r.heading) fmt::format_to(std::back_inserter(out), "{:.1f}", *r.heading);
      out += '\n';
    }
  }
  return out;
}

std::map<std::string, std::vector<GpsRecord>> group_by_truck(std::vector<GpsRecord> records) {
  std::map<std::string, std::vector<GpsRecord>> out;
  for (auto& r : records) out[r.truck_id].push_back(std::move(r));
  return out;
}

namespace {

double implied_speed_kmh(const GpsRecord& a, const GpsRecord& b) {
  const double dt = static_cast<double>(b.timestamp - a.timestamp);
  return haversine(a.position(), b.position()) / dt * 3.6;
}

}  // namespace

std::optional<Trajectory> clean_trajectory(std::vector<GpsRecord> records,
                                           const CleanOptions& options) {
  if (records.empty()) return std::nullopt;
  const std::string truck_id = records.front().truck_id;
  std::stable_sort(records.begin(), records.end(),
                   [](const GpsRecord& a, const GpsRecord& b) { return a.timestamp < b.timestamp; });
  records.erase(std::unique(records.begin(), records.end(),
                            [](const GpsRecord& a, const GpsRecord& b) {
                              return a.timestamp == b.timestamp;
                            }),
                records.end());

  while (records.size() >= 2) {
    const std::size_t n = records.size();
    std::vector<char> bad_interval(n - 1, 0);
    bool any = false;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (implied_speed_kmh(records[i], records[i + 1]) > options.v_max_kmh) {
        bad_interval[i] = 1;
        any = true;
      }
    }
    if (!any) break;

    // Spikes first: a fix whose both neighbouring intervals are impossible.
    std::vector<char> drop(n, 0);
    bool dropped = false;
    for (std::size_t i = 1; i + 1 < n; ++i) {
      if (bad_interval[i - 1] && bad_interval[i]) {
        drop[i] = 1;
        dropped = true;
      }
    }
    if (!dropped) {
      // Lone jump: drop the first fix if the jump is at the start, otherwise
      // the later fix of the first bad interval.
      const auto first_bad = static_cast<std::size_t>(
          std::find(bad_interval.begin(), bad_interval.end(), 1) - bad_interval.begin());
      drop[first_bad == 0 ? 0 : first_bad + 1] = 1;
    }
    std::vector<GpsRecord> kept;
    kept.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!drop[i]) kept.push_back(std::move(records[i]));
    }
    records = std::move(kept);
  }

  if (records.size() < 2) return std::nullopt;
  return Trajectory{truck_id, std::move(records)};
}

std::vector<Trajectory> clip_to_city(const Trajectory& traj, const CityBoundary& boundary) {
  std::vector<Trajectory> out;
  Trajectory current{traj.truck_id, {}};
  auto flush = [&] {
    if (current.records.size() >= 2) out.push_back(current);
    current.records.clear();
  };
  for (const auto& r : traj.records) {
    if (boundary.contains(r.position())) {
      current.records.push_back(r);
    } else {
      flush();
    }
  }
  flush();
  return out;
}

void validate_ring(const Ring& ring) {
  if (ring.size() < 4) throw InputError("polygon ring needs at least 4 points");
  if (!(ring.front() == ring.back())) throw InputError("polygon ring is not closed");
}

CityBoundary parse_boundary_geojson(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("boundary GeoJSON: ") + e.what());
  }
  CityBoundary boundary;
  for (const auto& f : geojson::features(doc)) {
    if (f.contains("properties") && f["properties"].is_object()) {
      if (boundary.name.empty()) boundary.name = f["properties"].value("name", "");
    }
    for (auto& poly : geojson::polygons(f.at("geometry"))) {
      for (const auto& ring : poly) validate_ring(ring);
      boundary.polygons.push_back(std::move(poly));
    }
  }
  if (boundary.polygons.empty()) throw InputError("boundary GeoJSON has no polygons");
  return boundary;
}

CityBoundary load_boundary_geojson(const std::filesystem::path& path) {
  return parse_boundary_geojson(csv::read_file(path));
}

}  // namespace tripends
