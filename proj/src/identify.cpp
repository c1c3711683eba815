#include "tripends/identify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

#include "tripends/csv.hpp"
#include "tripends/error.hpp"
#include "tripends/geojson.hpp"

namespace tripends {

std::string_view to_string(EndStatus s) {
  switch (s) {
    case EndStatus::kept: return "kept";
    case EndStatus::removed_on_road: return "removed_on_road";
    case EndStatus::removed_no_poi: return "removed_no_poi";
  }
  return "kept";
}

std::optional<EndStatus> parse_end_status(std::string_view s) {
  if (s == "kept") return EndStatus::kept;
  if (s == "removed_on_road") return EndStatus::removed_on_road;
  if (s == "removed_no_poi") return EndStatus::removed_no_poi;
  return std::nullopt;
}

TripEnd end_from_stop(const Stop& stop, std::size_t level) {
  TripEnd e;
  e.truck_id = stop.truck_id;
  e.lon = stop.lon;
  e.lat = stop.lat;
  e.arrive_time = stop.start_time;
  e.depart_time = stop.end_time;
  e.dwell = stop.dwell;
  e.level_used = level;
  e.first_index = stop.first_index;
  e.last_index = stop.last_index;
  return e;
}

double path_length(const Trajectory& traj, std::size_t first, std::size_t last) {
  double total = 0.0;
  for (std::size_t i = first; i < last && i + 1 < traj.size(); ++i) {
    total += haversine(traj[i].position(), traj[i + 1].position());
  }
  return total;
}

// --- circuity --------------------------------------------------------------------

double sorensen_similarity(double a, double b) {
  if (a + b <= 0.0) return 1.0;
  return 2.0 * std::min(a, b) / (a + b);
}

namespace {

struct Snapped {
  NodeId src;
  NodeId dst;
};

std::optional<Snapped> snap_pair(LonLat origin, LonLat dest, const RoadGraph& g, double max_snap_m) {
  if (g.nodes().empty()) return std::nullopt;
  const NodeHit a = snap_to_node(g, origin);
  const NodeHit b = snap_to_node(g, dest);
  if (a.distance_m > max_snap_m || b.distance_m > max_snap_m) return std::nullopt;
  return Snapped{a.id, b.id};
}

}  // namespace

CircuityCalibration calibrate_circuity_order(std::span<const CalibrationTrip> trips, const RoadGraph& g,
                                             std::size_t k, const CircuityOptions& options) {
  if (k == 0) throw std::invalid_argument("K must be at least 1");
  if (trips.empty()) throw DegenerateInput("calibration needs at least one trip");

  std::vector<std::vector<double>> per_order(k);
  CircuityCalibration cal;
  cal.k = k;
  for (const auto& trip : trips) {
    auto snapped = snap_pair(trip.origin, trip.dest, g, options.max_snap_m);
    if (!snapped) continue;
    const auto paths = k_shortest_paths(g, snapped->src, snapped->dst, k, options.ksp);
    if (paths.empty()) continue;
    ++cal.trips_used;
    for (std::size_t i = 0; i < paths.size(); ++i) {
      per_order[i].push_back(sorensen_similarity(trip.actual_length_m, paths[i].length_m));
    }
  }
  if (cal.trips_used == 0) throw DegenerateInput("no calibration trip could be routed");

  cal.mean_ssi.assign(k, std::numeric_limits<double>::quiet_NaN());
  cal.samples.assign(k, 0);
  double best = -1.0;
  for (std::size_t i = 0; i < k; ++i) {
    auto& v = per_order[i];
    cal.samples[i] = v.size();
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    cal.mean_ssi[i] = sum / static_cast<double>(v.size());
    if (cal.mean_ssi[i] > best) {
      best = cal.mean_ssi[i];
      cal.n = i + 1;
    }
  }
  return cal;
}

std::optional<double> reference_length(LonLat origin, LonLat dest, const RoadGraph& g, std::size_t n,
                                       const CircuityOptions& options) {
  if (n == 0) throw std::invalid_argument("circuity order must be at least 1");
  auto snapped = snap_pair(origin, dest, g, options.max_snap_m);
  if (!snapped) return std::nullopt;
  const auto paths = k_shortest_paths(g, snapped->src, snapped->dst, n, options.ksp);
  if (paths.empty()) return std::nullopt;
  return paths[std::min(n, paths.size()) - 1].length_m;
}

bool is_circuitous(const Subtrajectory& sub, const RoadGraph& g, std::size_t n,
                   const CircuityOptions& options) {
  const auto ref = reference_length(sub.origin, sub.dest, g, n, options);
  if (!ref) return false;
  return sub.actual_length_m > (1.0 + options.eta) * *ref;
}

double circuity_ratio(const Subtrajectory& sub) {
  if (!(sub.actual_length_m > 0.0)) return 1.0;
  return haversine(sub.origin, sub.dest) / sub.actual_length_m;
}

// --- identification ------------------------------------------------------------------

namespace {

class Splitter {
 public:
  Splitter(const Trajectory& traj, std::span<const Stop> stops, const RecursionPlan& plan,
           const CircuityTest& circuitous)
      : traj_(traj), stops_(stops), plan_(plan), circuitous_(circuitous), level_(stops.size()) {}

  std::vector<TripEnd> run() {
    const auto boundary = static_cast<std::ptrdiff_t>(stops_.size());
    const std::size_t e = plan_.entry;
    if (e < plan_.levels.size()) {
      if (!promote(-1, boundary, e)) descend(-1, boundary, e + 1);
    }
    std::vector<TripEnd> ends;
    for (std::size_t i = 0; i < stops_.size(); ++i) {
      if (level_[i]) ends.push_back(end_from_stop(stops_[i], *level_[i]));
    }
    return ends;
  }

 private:
  // Bounds are stop indices; -1 and stops.size() stand for the trajectory edges.
  bool has_interior(std::ptrdiff_t lo, std::ptrdiff_t hi) const { return hi - lo > 1; }

  Subtrajectory piece(std::ptrdiff_t lo, std::ptrdiff_t hi) const {
    Subtrajectory sub;
    sub.truck_id = traj_.truck_id;
    const bool open_start = lo < 0;
    const bool open_end = hi >= static_cast<std::ptrdiff_t>(stops_.size());
    sub.first_index = open_start ? 0 : stops_[static_cast<std::size_t>(lo)].last_index;
    sub.last_index = open_end ? traj_.size() - 1 : stops_[static_cast<std::size_t>(hi)].first_index;
    sub.origin = open_start ? traj_[0].position() : stops_[static_cast<std::size_t>(lo)].position();
    sub.dest = open_end ? traj_.records.back().position() : stops_[static_cast<std::size_t>(hi)].position();
    sub.start_time = traj_[sub.first_index].timestamp;
    sub.actual_length_m = path_length(traj_, sub.first_index, sub.last_index);
    return sub;
  }

  /// Promotes stops in (lo, hi) with dwell >= level k; recurses into the pieces.
  bool promote(std::ptrdiff_t lo, std::ptrdiff_t hi, std::size_t k) {
    const double threshold = plan_.levels[k];
    std::vector<std::ptrdiff_t> cuts{lo};
    for (std::ptrdiff_t i = lo + 1; i < hi; ++i) {
      if (static_cast<double>(stops_[static_cast<std::size_t>(i)].dwell) >= threshold) {
        level_[static_cast<std::size_t>(i)] = k;
        cuts.push_back(i);
      }
    }
    if (cuts.size() == 1) return false;
    cuts.push_back(hi);
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) descend(cuts[c], cuts[c + 1], k + 1);
    return true;
  }

  void descend(std::ptrdiff_t lo, std::ptrdiff_t hi, std::size_t next) {
    if (next >= plan_.levels.size() || !has_interior(lo, hi)) return;
    if (!circuitous_(piece(lo, hi))) return;
    for (std::size_t k = next; k < plan_.levels.size(); ++k) {
      if (promote(lo, hi, k) || !plan_.fall_through) return;
    }
  }

  const Trajectory& traj_;
  std::span<const Stop> stops_;
  const RecursionPlan& plan_;
  const CircuityTest& circuitous_;
  std::vector<std::optional<std::size_t>> level_;
};

}  // namespace

std::vector<TripEnd> split_recursive(const Trajectory& traj, std::span<const Stop> stops,
                                     const RecursionPlan& plan, const CircuityTest& circuitous) {
  for (std::size_t i = 1; i < plan.levels.size(); ++i) {
    if (!(plan.levels[i] < plan.levels[i - 1])) throw std::invalid_argument("levels must strictly decrease");
  }
  return Splitter(traj, stops, plan, circuitous).run();
}

std::optional<std::size_t> entry_level(const ThresholdLadder& ladder, std::span<const Stop> stops) {
  if (stops.empty()) return std::nullopt;
  std::int64_t max_dwell = 0;
  for (const auto& s : stops) max_dwell = std::max(max_dwell, s.dwell);
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    if (ladder[i] <= static_cast<double>(max_dwell)) return i;
  }
  return std::nullopt;
}

namespace {

std::vector<TripEnd> identify_with(const Trajectory& traj, std::span<const Stop> stops,
                                   const ThresholdLadder& ladder, const CircuityTest& test) {
  if (ladder.empty()) throw std::invalid_argument("threshold ladder is empty");
  const auto entry = entry_level(ladder, stops);
  if (!entry) return {};
  RecursionPlan plan{ladder.thresholds(), *entry, true};
  return split_recursive(traj, stops, plan, test);
}

}  // namespace

std::vector<TripEnd> identify_trip_ends(const Trajectory& traj, std::span<const Stop> stops,
                                        const ThresholdLadder& ladder, const RoadGraph& g, std::size_t n,
                                        const CircuityOptions& options) {
  const CircuityTest test = [&](const Subtrajectory& sub) { return is_circuitous(sub, g, n, options); };
  return identify_with(traj, stops, ladder, test);
}

std::vector<TripEnd> identify_trip_ends(const Trajectory& traj, std::span<const Stop> stops,
                                        const ThresholdLadder& ladder, const TimedNetwork& net,
                                        std::size_t n, const CircuityOptions& options) {
  const CircuityTest test = [&](const Subtrajectory& sub) {
    return is_circuitous(sub, net.at_time(sub.start_time), n, options);
  };
  return identify_with(traj, stops, ladder, test);
}

std::vector<TripEnd> thakur_baseline(const Trajectory& traj, std::span<const Stop> stops,
                                     const ThakurOptions& options) {
  const CircuityTest test = [&](const Subtrajectory& sub) {
    return circuity_ratio(sub) < options.ratio_threshold;
  };
  RecursionPlan plan{options.levels, 0, options.fall_through};
  return split_recursive(traj, stops, plan, test);
}

// --- filtering -------------------------------------------------------------------------

std::vector<TripEnd> filter_trip_ends(std::vector<TripEnd> ends, const RoadGraph& g, const PoiIndex& pois,
                                      const FilterOptions& options) {
  for (auto& e : ends) {
    if (!e.kept()) continue;
    const auto road = distance_to_nearest_road(g, e.position());
    if (road && road->distance_m < options.widths.of(road->cls) / 2.0) {
      e.status = EndStatus::removed_on_road;
    } else if (!pois.any_within(e.position(), options.poi_radius_m)) {
      e.status = EndStatus::removed_no_poi;
    }
  }
  return ends;
}

double accuracy(std::uint64_t na, std::uint64_t nm, std::uint64_t ne) {
  const std::uint64_t total = na + nm + ne;
  if (total == 0) throw DegenerateInput("accuracy is undefined when NA + NM + NE = 0");
  return static_cast<double>(na) / static_cast<double>(total);
}

// --- files ---------------------------------------------------------------------------------

std::string format_ends_geojson(const std::vector<TripEnd>& ends) {
  nlohmann::json fc{{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
  auto& features = fc["features"];
  for (const auto& e : ends) {
    features.push_back(geojson::point_feature(
        e.position(), {{"truck_id", e.truck_id},
                       {"arrive_time", e.arrive_time},
                       {"depart_time", e.depart_time},
                       {"dwell_s", e.dwell},
                       {"level_used", e.level_used},
                       {"status", to_string(e.status)}}));
  }
  return fc.dump(1) + "\n";
}

std::vector<TripEnd> parse_ends_geojson(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("ends GeoJSON: ") + e.what());
  }
  std::vector<TripEnd> ends;
  for (const auto& f : geojson::features(doc)) {
    TripEnd e;
    const LonLat p = geojson::point(f.at("geometry"));
    e.lon = p.lon;
    e.lat = p.lat;
    const auto& props = f.at("properties");
    e.truck_id = props.at("truck_id").get<std::string>();
    e.arrive_time = props.at("arrive_time").get<std::int64_t>();
    e.depart_time = props.at("depart_time").get<std::int64_t>();
    e.dwell = props.at("dwell_s").get<std::int64_t>();
    e.level_used = props.at("level_used").get<std::size_t>();
    auto status = parse_end_status(props.at("status").get<std::string>());
    if (!status) throw InputError("unknown trip end status");
    e.status = *status;
    ends.push_back(std::move(e));
  }
  return ends;
}

std::vector<TripEnd> load_ends_geojson(const std::filesystem::path& path) {
  return parse_ends_geojson(csv::read_file(path));
}

void attach_end_indices(const Trajectory& traj, std::vector<TripEnd>& ends) {
  std::vector<Stop> tmp;
  tmp.reserve(ends.size());
  for (const auto& e : ends) {
    Stop s;
    s.truck_id = e.truck_id;
    s.start_time = e.arrive_time;
    s.end_time = e.depart_time;
    tmp.push_back(s);
  }
  attach_stop_indices(traj, tmp);
  for (std::size_t i = 0; i < ends.size(); ++i) {
    ends[i].first_index = tmp[i].first_index;
    ends[i].last_index = tmp[i].last_index;
  }
}

std::vector<CalibrationTrip> load_calibration_trips(const std::filesystem::path& path) {
  std::vector<CalibrationTrip> trips;
  csv::for_each_row(csv::read_file(path), kCalibrationCsvHeader, path, [&](std::size_t line, const auto& f) {
    std::optional<double> v[5];
    if (f.size() == 5) {
      for (std::size_t i = 0; i < 5; ++i) v[i] = csv::parse_number<double>(f[i]);
    }
    if (f.size() != 5 || !v[0] || !v[1] || !v[2] || !v[3] || !v[4]) {
      throw InputError(fmt::format("{}:{}: malformed calibration row", path.string(), line));
    }
    trips.push_back({{*v[0], *v[1]}, {*v[2], *v[3]}, *v[4]});
  });
  return trips;
}

std::string format_calibration_trips(const std::vector<CalibrationTrip>& trips) {
  std::string out = kCalibrationCsvHeader;
  out += '\n';
  for (const auto& t : trips) {
    fmt::format_to(std::back_inserter(out), "{:.7f},{:.7f},{:.7f},{:.7f},{:.1f}\n", t.origin.lon,
                   t.origin.lat, t.dest.lon, t.dest.lat, t.actual_length_m);
  }
  return out;
}

}  // namespace tripends
