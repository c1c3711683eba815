#include "tripends/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "tripends/csv.hpp"
#include "tripends/error.hpp"

namespace tripends {

using nlohmann::json;
namespace fs = std::filesystem;

// --- zone grids ------------------------------------------------------------------------

Cell ZoneGrid::cell_of(LonLat p) const {
  const XY xy = proj.forward(p);
  return {static_cast<long>(std::floor((xy.x - origin.x) / cell_m)),
          static_cast<long>(std::floor((xy.y - origin.y) / cell_m))};
}

LonLat ZoneGrid::cell_center(Cell c) const {
  return proj.inverse({origin.x + (static_cast<double>(c.first) + 0.5) * cell_m,
                       origin.y + (static_cast<double>(c.second) + 0.5) * cell_m});
}

ZoneGrid make_zone_grid(const CityBoundary& boundary, double cell_m) {
  if (!(cell_m > 0.0)) throw std::invalid_argument("zone size must be positive");
  ZoneGrid g;
  g.proj = LocalProjection(boundary.centroid());
  g.cell_m = cell_m;
  double min_x = 0.0, min_y = 0.0;
  bool any = false;
  for (const auto& poly : boundary.polygons) {
    if (poly.empty()) continue;
    for (const auto& p : poly.front()) {
      const XY xy = g.proj.forward(p);
      min_x = any ? std::min(min_x, xy.x) : xy.x;
      min_y = any ? std::min(min_y, xy.y) : xy.y;
      any = true;
    }
  }
  g.origin = {min_x, min_y};
  return g;
}

HotspotGrid hotspot_grid(std::span<const TripEnd> ends, const ZoneGrid& grid) {
  HotspotGrid h{grid, {}};
  for (const auto& e : ends) {
    if (e.kept()) ++h.counts[grid.cell_of(e.position())];
  }
  return h;
}

OdMatrix od_matrix(std::span<const Trip> trips, const ZoneGrid& grid) {
  OdMatrix od{grid, {}};
  for (const auto& t : trips) ++od.counts[{grid.cell_of(t.origin), grid.cell_of(t.dest)}];
  return od;
}

std::string format_hotspots_csv(const HotspotGrid& h) {
  std::string out = kHotspotsCsvHeader;
  out += '\n';
  for (const auto& [c, n] : h.counts) {
    const LonLat center = h.grid.cell_center(c);
    fmt::format_to(std::back_inserter(out), "{},{},{:.6f},{:.6f},{}\n", c.first, c.second, center.lon, center.lat, n);
  }
  return out;
}

std::string format_od_csv(const OdMatrix& od) {
  std::string out = kOdCsvHeader;
  out += '\n';
  for (const auto& [cells, n] : od.counts) {
    fmt::format_to(std::back_inserter(out), "{},{},{},{},{}\n", cells.first.first, cells.first.second,
                   cells.second.first, cells.second.second, n);
  }
  return out;
}

// --- configuration -----------------------------------------------------------------------

namespace {

const std::set<std::string> kParamKeys = {
    "v_max_kmh",      "bin_width_kmh",  "smoothing_window", "speed_search_max_kmh", "speed_fallback_kmh",
    "balance_eps",    "max_levels",     "min_population",   "resolution_s",         "k",
    "circuity_order", "eta",            "max_snap_m",       "middle_edge",          "accumulate",
    "poi_radius_m",   "road_widths_m",  "dbscan_eps_m",     "dbscan_min_pts",       "hotspot_cell_m",
    "od_zone_m",      "match_radius_m", "match_window_s",   "method",               "thakur_levels_s",
    "thakur_ratio",   "thakur_fall_through"};

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  auto resolve = [&](const json& v) {
    fs::path p = v.get<std::string>();
    return p.is_relative() ? base_dir / p : p;
  };
  try {
    for (const auto& [key, v] : j.items()) {
      if (key != "inputs" && key != "params" && key != "output" && key != "threads") {
        throw InputError("unknown config key '" + key + "'");
      }
    }
    if (j.contains("inputs")) {
      const auto& in = j["inputs"];
      for (const auto& [key, v] : in.items()) {
        fs::path* slot = nullptr;
        if (key == "gps") slot = &c.inputs.gps;
        if (key == "nodes") slot = &c.inputs.nodes;
        if (key == "edges") slot = &c.inputs.edges;
        if (key == "pois") slot = &c.inputs.pois;
        if (key == "boundary") slot = &c.inputs.boundary;
        if (key == "restricted") slot = &c.inputs.restricted;
        if (key == "calibration") slot = &c.inputs.calibration;
        if (key == "truth") slot = &c.inputs.truth;
        if (!slot) throw InputError("unknown input '" + key + "'");
        if (!v.is_null()) *slot = resolve(v);
      }
    }
    if (j.contains("output")) c.output = resolve(j["output"]);
    if (j.contains("threads")) c.threads = j["threads"].get<std::size_t>();

    const json p = j.value("params", json::object());
    for (const auto& [key, v] : p.items()) {
      if (!kParamKeys.count(key)) throw InputError("unknown parameter '" + key + "'");
    }
    auto& P = c.params;
    auto get = [&](const char* key, auto& field) {
      if (p.contains(key)) field = p.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("v_max_kmh", P.clean.v_max_kmh);
    get("bin_width_kmh", P.bin_width_kmh);
    get("smoothing_window", P.speed.smoothing_window);
    get("speed_search_max_kmh", P.speed.search_max_kmh);
    get("speed_fallback_kmh", P.speed.fallback_kmh);
    get("balance_eps", P.ladder.balance_eps);
    get("max_levels", P.ladder.max_levels);
    get("min_population", P.ladder.min_population);
    get("resolution_s", P.ladder.resolution_s);
    get("k", P.k);
    get("circuity_order", P.circuity_order);
    get("eta", P.circuity.eta);
    get("max_snap_m", P.circuity.max_snap_m);
    if (p.contains("middle_edge")) {
      const auto m = p["middle_edge"].get<std::string>();
      if (m == "index") {
        P.circuity.ksp.middle = MiddleEdgeRule::by_index;
      } else if (m == "length") {
        P.circuity.ksp.middle = MiddleEdgeRule::by_length;
      } else {
        throw InputError("middle_edge must be 'index' or 'length'");
      }
    }
    get("accumulate", P.circuity.ksp.accumulate);
    get("poi_radius_m", P.filter.poi_radius_m);
    if (p.contains("road_widths_m")) {
      for (const auto& [cls, w] : p["road_widths_m"].items()) {
        auto rc = parse_road_class(cls);
        if (!rc) throw InputError("unknown road class '" + cls + "'");
        P.filter.widths.meters[static_cast<std::size_t>(*rc)] = w.get<double>();
      }
    }
    get("dbscan_eps_m", P.dbscan_eps_m);
    get("dbscan_min_pts", P.dbscan_min_pts);
    get("hotspot_cell_m", P.hotspot_cell_m);
    get("od_zone_m", P.od_zone_m);
    get("match_radius_m", P.match.radius_m);
    get("match_window_s", P.match.window_s);
    get("method", P.method);
    get("thakur_levels_s", P.thakur.levels);
    get("thakur_ratio", P.thakur.ratio_threshold);
    get("thakur_fall_through", P.thakur.fall_through);
  } catch (const json::exception& e) {
    throw InputError(std::string("bad config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(csv::read_file(path));
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

json PipelineConfig::params_json() const {
  const auto& P = params;
  json widths = json::object();
  for (std::size_t i = 0; i < kRoadClassCount; ++i) {
    widths[std::string(to_string(static_cast<RoadClass>(i)))] = P.filter.widths.meters[i];
  }
  return {
      {"v_max_kmh", P.clean.v_max_kmh},
      {"bin_width_kmh", P.bin_width_kmh},
      {"smoothing_window", P.speed.smoothing_window},
      {"speed_search_max_kmh", P.speed.search_max_kmh},
      {"speed_fallback_kmh", P.speed.fallback_kmh},
      {"balance_eps", P.ladder.balance_eps},
      {"max_levels", P.ladder.max_levels},
      {"min_population", P.ladder.min_population},
      {"resolution_s", P.ladder.resolution_s},
      {"k", P.k},
      {"circuity_order", P.circuity_order},
      {"eta", P.circuity.eta},
      {"max_snap_m", P.circuity.max_snap_m},
      {"middle_edge", P.circuity.ksp.middle == MiddleEdgeRule::by_index ? "index" : "length"},
      {"accumulate", P.circuity.ksp.accumulate},
      {"poi_radius_m", P.filter.poi_radius_m},
      {"road_widths_m", widths},
      {"dbscan_eps_m", P.dbscan_eps_m},
      {"dbscan_min_pts", P.dbscan_min_pts},
      {"hotspot_cell_m", P.hotspot_cell_m},
      {"od_zone_m", P.od_zone_m},
      {"match_radius_m", P.match.radius_m},
      {"match_window_s", P.match.window_s},
      {"method", P.method},
      {"thakur_levels_s", P.thakur.levels},
      {"thakur_ratio", P.thakur.ratio_threshold},
      {"thakur_fall_through", P.thakur.fall_through},
  };
}

void PipelineConfig::validate() const {
  const auto& P = params;
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw InputError(fmt::format("parameter {} must be positive", name));
  };
  positive(P.clean.v_max_kmh, "v_max_kmh");
  positive(P.bin_width_kmh, "bin_width_kmh");
  if (P.speed.smoothing_window < 1 || P.speed.smoothing_window % 2 == 0) {
    throw InputError("parameter smoothing_window must be a positive odd number");
  }
  positive(P.speed.search_max_kmh, "speed_search_max_kmh");
  positive(P.speed.fallback_kmh, "speed_fallback_kmh");
  positive(P.ladder.balance_eps, "balance_eps");
  positive(static_cast<double>(P.ladder.max_levels), "max_levels");
  positive(P.ladder.resolution_s, "resolution_s");
  positive(static_cast<double>(P.k), "k");
  positive(static_cast<double>(P.circuity_order), "circuity_order");
  if (!(P.circuity.eta >= 0.0)) throw InputError("parameter eta must be non-negative");
  positive(P.circuity.max_snap_m, "max_snap_m");
  positive(P.filter.poi_radius_m, "poi_radius_m");
  for (double w : P.filter.widths.meters) positive(w, "road_widths_m");
  positive(P.dbscan_eps_m, "dbscan_eps_m");
  positive(static_cast<double>(P.dbscan_min_pts), "dbscan_min_pts");
  positive(P.hotspot_cell_m, "hotspot_cell_m");
  positive(P.od_zone_m, "od_zone_m");
  positive(P.match.radius_m, "match_radius_m");
  positive(static_cast<double>(P.match.window_s), "match_window_s");
  if (P.method != "ladder" && P.method != "thakur") throw InputError("method must be 'ladder' or 'thakur'");
  if (P.thakur.levels.empty()) throw InputError("thakur_levels_s is empty");
  for (std::size_t i = 0; i < P.thakur.levels.size(); ++i) {
    positive(P.thakur.levels[i], "thakur_levels_s");
    if (i > 0 && P.thakur.levels[i] >= P.thakur.levels[i - 1]) {
      throw InputError("thakur_levels_s must be strictly decreasing");
    }
  }
  positive(P.thakur.ratio_threshold, "thakur_ratio");
  if (threads < 1) throw InputError("threads must be at least 1");
}

// --- stages ------------------------------------------------------------------------------

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::roadnet: return "roadnet";
    case Stage::stops: return "stops";
    case Stage::thresholds: return "thresholds";
    case Stage::calibrate: return "calibrate";
    case Stage::identify: return "identify";
    case Stage::filter: return "filter";
    case Stage::trips: return "trips";
    case Stage::chains: return "chains";
    case Stage::aggregates: return "aggregates";
  }
  return "?";
}

std::optional<Stage> parse_stage(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(Stage::aggregates); ++i) {
    if (to_string(static_cast<Stage>(i)) == s) return static_cast<Stage>(i);
  }
  return std::nullopt;
}

StageError::StageError(Stage stage, const std::string& cause, bool input)
    : std::runtime_error(fmt::format("stage '{}' failed: {}", to_string(stage), cause)), stage_(stage), input_(input) {}

namespace {

std::string hash_hex(std::string_view bytes) { return fmt::format("{:016x}", std::hash<std::string_view>{}(bytes)); }

std::string file_hash(const fs::path& p) {
  if (p.empty()) return "-";
  return hash_hex(csv::read_file(p));
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
/// is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = next++; i < n; i = next++) fn(i);
        } catch (...) {
          errors[t] = std::current_exception();
          next = n;
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

json nan_to_null(const std::vector<double>& v) {
  json out = json::array();
  for (double x : v) out.push_back(std::isnan(x) ? json() : json(x));
  return out;
}

/// Splits a flat list into per-trajectory buckets by truck_id.
template <typename T>
std::vector<std::vector<T>> bucket(std::vector<T> items, const std::vector<Trajectory>& trajs) {
  std::map<std::string, std::size_t> at;
  for (std::size_t i = 0; i < trajs.size(); ++i) at[trajs[i].truck_id] = i;
  std::vector<std::vector<T>> out(trajs.size());
  for (auto& item : items) {
    auto it = at.find(item.truck_id);
    if (it == at.end()) throw InputError("cached record for unknown truck '" + item.truck_id + "'");
    out[it->second].push_back(std::move(item));
  }
  return out;
}

template <typename T>
std::vector<T> flatten(const std::vector<std::vector<T>>& v) {
  std::vector<T> out;
  for (const auto& x : v) out.insert(out.end(), x.begin(), x.end());
  return out;
}

class Runner {
 public:
  Runner(const PipelineConfig& config, const RunOptions& options) : c_(config), opt_(options), out_(config.output) {
    const fs::path mf = out_ / "manifest.json";
    if (fs::exists(mf)) {
      try {
        manifest_ = json::parse(csv::read_file(mf));
      } catch (const json::exception&) {
        manifest_ = json::object();
      }
    }
    if (!manifest_.is_object()) manifest_ = json::object();
  }

  PipelineResult run() {
    const json P = c_.params_json();
    std::string key = "root";
    auto chain = [&](std::initializer_list<std::string> parts) {
      std::string s = key;
      for (const auto& p : parts) s += "|" + p;
      key = hash_hex(s);
      return key;
    };

    const std::string ingest_key = chain({"ingest", file_hash_or_fail(Stage::ingest, c_.inputs.gps, "gps"),
                                          file_hash_or_fail(Stage::ingest, c_.inputs.boundary, ""),
                                          P["v_max_kmh"].dump()});
    stage(Stage::ingest, ingest_key, {"trajectories.csv"}, [&] { return do_ingest(); }, [&] { load_ingest(); });
    if (done(Stage::ingest)) return finish();

    std::string road_key;
    stage(Stage::roadnet, "", {}, [&] { return do_roadnet(road_key); }, [] {});
    if (done(Stage::roadnet)) return finish();

    key = ingest_key;
    const std::string stops_key = chain({"stops", P["bin_width_kmh"].dump(), P["smoothing_window"].dump(),
                                         P["speed_search_max_kmh"].dump(), P["speed_fallback_kmh"].dump()});
    stage(Stage::stops, stops_key, {"stops.csv"}, [&] { return do_stops(); }, [&] { load_stops(); });
    if (done(Stage::stops)) return finish();

    const std::string ladder_key = chain({"thresholds", P["balance_eps"].dump(), P["max_levels"].dump(),
                                          P["min_population"].dump(), P["resolution_s"].dump()});
    stage(Stage::thresholds, ladder_key, {"thresholds.json"}, [&] { return do_thresholds(); },
          [&] { load_thresholds(); });
    if (done(Stage::thresholds)) return finish();

    key = road_key;
    const std::string cal_key =
        chain({"calibrate", file_hash_or_fail(Stage::calibrate, c_.inputs.calibration, ""), P["k"].dump(),
               P["circuity_order"].dump(), P["max_snap_m"].dump(), P["middle_edge"].dump(), P["accumulate"].dump()});
    stage(Stage::calibrate, cal_key, {"calibration.json"}, [&] { return do_calibrate(); },
          [&] { load_calibrate(); });
    if (done(Stage::calibrate)) return finish();

    key = ladder_key;
    const std::string id_key = chain({"identify", cal_key, P["method"].dump(), P["eta"].dump(),
                                      P["thakur_levels_s"].dump(), P["thakur_ratio"].dump(),
                                      P["thakur_fall_through"].dump()});
    stage(Stage::identify, id_key, {"ends_identified.geojson"}, [&] { return do_identify(); },
          [&] { load_ends("ends_identified.geojson"); });
    if (done(Stage::identify)) return finish();

    const std::string filter_key = chain({"filter", road_key, P["poi_radius_m"].dump(), P["road_widths_m"].dump()});
    stage(Stage::filter, filter_key, {"ends.geojson"}, [&] { return do_filter(); },
          [&] { load_ends("ends.geojson"); });
    if (done(Stage::filter)) return finish();

    const std::string trips_key = chain({"trips"});
    stage(Stage::trips, trips_key, {"trips.csv"}, [&] { return do_trips(); }, [&] { make_trips(); });
    if (done(Stage::trips)) return finish();

    const std::string chains_key = chain({"chains", P["dbscan_eps_m"].dump(), P["dbscan_min_pts"].dump()});
    stage(Stage::chains, chains_key, {"chains.csv", "patterns.csv"}, [&] { return do_chains(); }, [] {});
    if (done(Stage::chains)) return finish();

    const std::string agg_key = chain({"aggregates", P["hotspot_cell_m"].dump(), P["od_zone_m"].dump()});
    stage(Stage::aggregates, agg_key, {"hotspots.csv", "od_matrix.csv"}, [&] { return do_aggregates(); }, [] {});
    return finish();
  }

 private:
  void log(const std::string& msg) const {
    if (opt_.log) opt_.log(msg);
  }

  bool done(Stage s) const { return s == opt_.until; }

  std::string file_hash_or_fail(Stage s, const fs::path& p, const char* required) {
    try {
      if (p.empty() && *required) throw InputError(fmt::format("no {} input configured", required));
      return file_hash(p);
    } catch (const InputError& e) {
      throw StageError(s, e.what(), true);
    }
  }

  template <typename Run, typename Load>
  void stage(Stage s, const std::string& key, const std::vector<std::string>& outputs, Run run, Load load) {
    const std::string name(to_string(s));
    try {
      if (!key.empty() && cached(name, key, outputs)) {
        info_[name] = manifest_[name]["info"];
        load();
        result_.cached.push_back(s);
        log(fmt::format("{}: cached", name));
        return;
      }
      log(fmt::format("{}: running", name));
      info_[name] = run();
      result_.ran.push_back(s);
      if (key.empty()) return;
      json entry{{"key", key}, {"info", info_[name]}, {"outputs", json::object()}};
      for (const auto& o : outputs) entry["outputs"][o] = file_hash(out_ / o);
      manifest_[name] = entry;
      csv::write_file(out_ / "manifest.json", manifest_.dump(2) + "\n");
    } catch (const StageError&) {
      throw;
    } catch (const InputError& e) {
      throw StageError(s, e.what(), true);
    } catch (const std::exception& e) {
      throw StageError(s, e.what(), false);
    }
  }

  bool cached(const std::string& name, const std::string& key, const std::vector<std::string>& outputs) const {
    if (!manifest_.contains(name)) return false;
    const json& entry = manifest_[name];
    if (entry.value("key", "") != key || !entry.contains("outputs") || !entry.contains("info")) return false;
    for (const auto& o : outputs) {
      const fs::path p = out_ / o;
      if (!fs::exists(p)) return false;
      if (entry["outputs"].value(o, "") != file_hash(p)) return false;
    }
    return true;
  }

  void write(const std::string& name, std::string_view content) const { csv::write_file(out_ / name, content); }

  // ingest --------------------------------------------------------------------------------

  json do_ingest() {
    auto parsed = parse_gps_csv(c_.inputs.gps);
    const std::size_t records_in = parsed.records.size();
    auto groups = group_by_truck(std::move(parsed.records));
    std::optional<CityBoundary> boundary;
    if (!c_.inputs.boundary.empty()) boundary = load_boundary_geojson(c_.inputs.boundary);

    std::vector<std::vector<GpsRecord>> raw;
    for (auto& [id, recs] : groups) raw.push_back(std::move(recs));
    std::vector<std::vector<Trajectory>> per(raw.size());
    std::vector<std::size_t> kept_after_clean(raw.size(), 0);
    parallel_for(raw.size(), c_.threads, [&](std::size_t i) {
      auto cleaned = clean_trajectory(std::move(raw[i]), c_.params.clean);
      if (!cleaned) return;
      kept_after_clean[i] = cleaned->size();
      if (!boundary) {
        per[i].push_back(std::move(*cleaned));
        return;
      }
      auto parts = clip_to_city(*cleaned, *boundary);
      if (parts.size() > 1) {
        for (std::size_t k = 0; k < parts.size(); ++k) parts[k].truck_id = fmt::format("{}#{}", cleaned->truck_id, k + 1);
      }
      per[i] = std::move(parts);
    });
    trajs_.clear();
    for (auto& v : per) {
      for (auto& t : v) trajs_.push_back(std::move(t));
    }
    sort_trajectories();
    write("trajectories.csv", format_gps_csv(trajs_));

    std::size_t cleaned_total = 0, out_total = 0, dropped = 0;
    for (std::size_t i = 0; i < per.size(); ++i) {
      cleaned_total += kept_after_clean[i];
      if (per[i].empty()) ++dropped;
    }
    for (const auto& t : trajs_) out_total += t.size();
    return {{"records_in", records_in},
            {"invalid_rows", parsed.invalid_rows},
            {"trucks_in", groups.size()},
            {"records_after_cleaning", cleaned_total},
            {"trucks_dropped", dropped},
            {"trajectories", trajs_.size()},
            {"records_out", out_total}};
  }

  void load_ingest() {
    auto parsed = parse_gps_csv(out_ / "trajectories.csv");
    trajs_.clear();
    for (auto& [id, recs] : group_by_truck(std::move(parsed.records))) {
      trajs_.push_back(Trajectory{id, std::move(recs)});
    }
    sort_trajectories();
  }

  void sort_trajectories() {
    std::sort(trajs_.begin(), trajs_.end(), [](const Trajectory& a, const Trajectory& b) { return a.truck_id < b.truck_id; });
  }

  // roadnet -------------------------------------------------------------------------------

  json do_roadnet(std::string& key) {
    if (c_.inputs.nodes.empty() || c_.inputs.edges.empty()) throw InputError("nodes and edges inputs are required");
    if (c_.inputs.pois.empty()) throw InputError("pois input is required");
    auto loaded = load_graph(c_.inputs.nodes, c_.inputs.edges);
    std::vector<RestrictedArea> areas;
    if (!c_.inputs.restricted.empty()) areas = load_restricted_areas(c_.inputs.restricted);
    auto pois = load_pois(c_.inputs.pois);
    key = hash_hex(file_hash(c_.inputs.nodes) + file_hash(c_.inputs.edges) + file_hash(c_.inputs.pois) +
                   file_hash(c_.inputs.restricted));
    json info{{"nodes", loaded.graph.nodes().size()},
              {"edges", loaded.graph.edges().size()},
              {"rejected_nodes", loaded.rejected_nodes},
              {"rejected_edges", loaded.rejected_edges},
              {"restricted_areas", areas.size()},
              {"pois", pois.pois.size()},
              {"rejected_pois", pois.rejected}};
    net_ = std::make_unique<TimedNetwork>(std::move(loaded.graph), std::move(areas));
    poi_index_ = std::make_unique<PoiIndex>(std::move(pois.pois));
    return info;
  }

  // stops ------------------------------------------------------------------------------------

  json do_stops() {
    std::vector<SpeedHistogram> partial(trajs_.size(), SpeedHistogram(c_.params.bin_width_kmh));
    parallel_for(trajs_.size(), c_.threads, [&](std::size_t i) { accumulate_speeds(partial[i], trajs_[i]); });
    SpeedHistogram hist(c_.params.bin_width_kmh);
    for (const auto& h : partial) hist.merge(h);
    const SpeedThreshold th = derive_speed_threshold(hist, c_.params.speed);
    if (th.fallback) log(fmt::format("stops: no histogram valley, using fallback {} km/h", th.kmh));

    stops_.assign(trajs_.size(), {});
    parallel_for(trajs_.size(), c_.threads, [&](std::size_t i) { stops_[i] = detect_stops(trajs_[i], th.kmh); });
    speed_ = th;
    write("stops.csv", format_stops_csv(flatten(stops_)));
    write("thresholds.json", thresholds_json().dump(2) + "\n");
    return {{"speed_threshold_kmh", th.kmh},
            {"speed_fallback", th.fallback},
            {"intervals", hist.total()},
            {"stops", flatten(stops_).size()}};
  }

  void load_stops() {
    speed_.kmh = info_["stops"].at("speed_threshold_kmh").get<double>();
    speed_.fallback = info_["stops"].at("speed_fallback").get<bool>();
    stops_ = bucket(parse_stops_csv(out_ / "stops.csv"), trajs_);
    for (std::size_t i = 0; i < trajs_.size(); ++i) attach_stop_indices(trajs_[i], stops_[i]);
  }

  json thresholds_json() const {
    json j{{"speed_threshold_kmh", speed_.kmh}, {"speed_threshold_fallback", speed_.fallback}};
    if (ladder_) {
      j["time_threshold_ladder_s"] = ladder_->thresholds();
      json levels = json::array();
      for (const auto& l : ladder_->levels) {
        levels.push_back({{"threshold_s", l.threshold_s}, {"fstar", l.fstar}, {"population", l.population}});
      }
      j["levels"] = levels;
    }
    return j;
  }

  // thresholds ------------------------------------------------------------------------------

  json do_thresholds() {
    std::vector<double> dwells;
    for (const auto& v : stops_) {
      for (const auto& s : v) dwells.push_back(static_cast<double>(s.dwell));
    }
    ladder_ = derive_ladder(dwells, c_.params.ladder);
    write("thresholds.json", thresholds_json().dump(2) + "\n");
    return {{"levels", ladder_->size()}, {"time_threshold_ladder_s", ladder_->thresholds()}};
  }

  void load_thresholds() {
    const json j = json::parse(csv::read_file(out_ / "thresholds.json"));
    ThresholdLadder ladder;
    for (const auto& l : j.value("levels", json::array())) {
      ladder.levels.push_back({l.at("threshold_s").get<double>(), l.at("fstar").get<double>(),
                               l.at("population").get<std::size_t>()});
    }
    ladder_ = std::move(ladder);
  }

  // calibrate -------------------------------------------------------------------------------

  json do_calibrate() {
    json j;
    if (c_.inputs.calibration.empty()) {
      n_ = c_.params.circuity_order;
      j = {{"source", "config"}, {"n", n_}};
    } else {
      const auto trips = load_calibration_trips(c_.inputs.calibration);
      if (trips.empty()) throw InputError("calibration file holds no trips");
      const auto cal = calibrate_circuity_order(trips, net_->base(), c_.params.k, c_.params.circuity);
      n_ = cal.n;
      j = {{"source", "calibration"},
           {"n", cal.n},
           {"k", cal.k},
           {"mean_ssi", nan_to_null(cal.mean_ssi)},
           {"samples", cal.samples},
           {"trips", trips.size()},
           {"trips_used", cal.trips_used}};
    }
    write("calibration.json", j.dump(2) + "\n");
    return {{"n", n_}};
  }

  void load_calibrate() { n_ = info_["calibrate"].at("n").get<std::size_t>(); }

  // identify / filter ----------------------------------------------------------------------

  json do_identify() {
    const bool thakur = c_.params.method == "thakur";
    if (!thakur && (!ladder_ || ladder_->empty())) {
      throw DegenerateInput("the dwell ladder is empty; no level to identify ends with");
    }
    ends_.assign(trajs_.size(), {});
    parallel_for(trajs_.size(), c_.threads, [&](std::size_t i) {
      ends_[i] = thakur ? thakur_baseline(trajs_[i], stops_[i], c_.params.thakur)
                        : identify_trip_ends(trajs_[i], stops_[i], *ladder_, *net_, n_, c_.params.circuity);
    });
    const auto all = flatten(ends_);
    write("ends_identified.geojson", format_ends_geojson(all));
    std::map<std::size_t, std::size_t> per_level;
    for (const auto& e : all) ++per_level[e.level_used];
    json levels = json::object();
    for (const auto& [l, k] : per_level) levels[std::to_string(l)] = k;
    return {{"method", c_.params.method}, {"ends", all.size()}, {"ends_per_level", levels}};
  }

  void load_ends(const std::string& file) {
    ends_ = bucket(load_ends_geojson(out_ / file), trajs_);
    for (std::size_t i = 0; i < trajs_.size(); ++i) attach_end_indices(trajs_[i], ends_[i]);
  }

  json do_filter() {
    parallel_for(trajs_.size(), c_.threads, [&](std::size_t i) {
      ends_[i] = filter_trip_ends(std::move(ends_[i]), net_->base(), *poi_index_, c_.params.filter);
    });
    const auto all = flatten(ends_);
    write("ends.geojson", format_ends_geojson(all));
    std::size_t kept = 0, on_road = 0, no_poi = 0;
    for (const auto& e : all) {
      if (e.status == EndStatus::kept) ++kept;
      if (e.status == EndStatus::removed_on_road) ++on_road;
      if (e.status == EndStatus::removed_no_poi) ++no_poi;
    }
    return {{"kept", kept}, {"removed_on_road", on_road}, {"removed_no_poi", no_poi}};
  }

  // trips / chains --------------------------------------------------------------------------

  void make_trips() {
    trips_.assign(trajs_.size(), {});
    parallel_for(trajs_.size(), c_.threads, [&](std::size_t i) { trips_[i] = extract_trips(ends_[i], trajs_[i]); });
  }

  json do_trips() {
    make_trips();
    const auto all = flatten(trips_);
    write("trips.csv", format_trips_csv(all));
    return {{"trips", all.size()}};
  }

  json do_chains() {
    std::vector<std::optional<TruckChains>> per(trajs_.size());
    parallel_for(trajs_.size(), c_.threads, [&](std::size_t i) {
      if (trips_[i].empty()) return;
      const auto& ends = ends_[i];
      std::vector<std::size_t> kept;
      std::vector<LonLat> pts;
      for (std::size_t e = 0; e < ends.size(); ++e) {
        if (ends[e].kept()) {
          kept.push_back(e);
          pts.push_back(ends[e].position());
        }
      }
      const auto labels = noise_as_singletons(dbscan_cluster(pts, c_.params.dbscan_eps_m, c_.params.dbscan_min_pts));
      std::vector<int> clusters(ends.size(), kNoise);
      for (std::size_t k = 0; k < kept.size(); ++k) clusters[kept[k]] = labels[k];
      const auto net = build_travel_network(trips_[i], ends, clusters);
      TruckChains tc;
      tc.truck_id = trajs_[i].truck_id;
      tc.base = net.base;
      tc.chains = split_chains(visit_sequence(trips_[i], clusters), net.base);
      for (const auto& ch : tc.chains) tc.patterns.push_back(pattern_of(ch, net.base));
      per[i] = std::move(tc);
    });
    std::vector<TruckChains> trucks;
    for (auto& t : per) {
      if (t) trucks.push_back(std::move(*t));
    }
    write("chains.csv", format_chains_csv(trucks));
    std::size_t closed = 0, open = 0;
    for (const auto& t : trucks) {
      for (const auto& ch : t.chains) ch.closed ? ++closed : ++open;
    }
    json top = json::array();
    if (closed > 0) {
      const auto shares = pattern_stats(trucks);
      write("patterns.csv", format_patterns_csv(shares));
      for (std::size_t k = 0; k < shares.size() && k < 10; ++k) {
        top.push_back({{"pattern", shares[k].pattern}, {"count", shares[k].count}, {"share", shares[k].share}});
      }
    } else {
      write("patterns.csv", std::string(kPatternsCsvHeader) + "\n");
    }
    return {{"closed_chains", closed}, {"open_chains", open}, {"top_patterns", top}};
  }

  // aggregates ----------------------------------------------------------------------------------

  CityBoundary grid_extent() const {
    if (!c_.inputs.boundary.empty()) return load_boundary_geojson(c_.inputs.boundary);
    double lo_lon = std::numeric_limits<double>::infinity(), lo_lat = lo_lon;
    double hi_lon = -lo_lon, hi_lat = -lo_lon;
    for (const auto& t : trajs_) {
      for (const auto& r : t.records) {
        lo_lon = std::min(lo_lon, r.lon);
        lo_lat = std::min(lo_lat, r.lat);
        hi_lon = std::max(hi_lon, r.lon);
        hi_lat = std::max(hi_lat, r.lat);
      }
    }
    CityBoundary b;
    if (trajs_.empty()) return b;
    b.polygons = {{{{lo_lon, lo_lat}, {hi_lon, lo_lat}, {hi_lon, hi_lat}, {lo_lon, hi_lat}, {lo_lon, lo_lat}}}};
    return b;
  }

  json do_aggregates() {
    const CityBoundary extent = grid_extent();
    const auto ends = flatten(ends_);
    const auto trips = flatten(trips_);
    const auto hot = hotspot_grid(ends, make_zone_grid(extent, c_.params.hotspot_cell_m));
    const auto od = od_matrix(trips, make_zone_grid(extent, c_.params.od_zone_m));
    write("hotspots.csv", format_hotspots_csv(hot));
    write("od_matrix.csv", format_od_csv(od));
    return {{"hotspot_cells", hot.counts.size()}, {"od_pairs", od.counts.size()}};
  }

  // summary ---------------------------------------------------------------------------------------

  PipelineResult finish() {
    json summary{{"stages", info_}, {"params", c_.params_json()}};
    if (info_.contains("stops")) summary["speed_threshold_kmh"] = speed_.kmh;
    if (ladder_) summary["time_threshold_ladder_s"] = ladder_->thresholds();
    if (info_.contains("calibrate")) summary["circuity_order"] = n_;

    if (info_.contains("filter") && !c_.inputs.truth.empty()) {
      try {
        const auto truth = load_truth_csv(c_.inputs.truth);
        std::string v = "truck_id,lon,lat,time,label\n";
        for (const auto& t : truth) {
          fmt::format_to(std::back_inserter(v), "{},{:.7f},{:.7f},{},{}\n", t.truck_id, t.pos.lon, t.pos.lat, t.arrive,
                         t.label == TruthLabel::temp ? "temp" : "end");
        }
        write("validation.csv", v);
        const auto all = flatten(ends_);
        const Score s = score_against_truth(all, truth, c_.params.match);
        summary["validation"] = {{"na", s.na},
                                 {"nm", s.nm},
                                 {"ne", s.ne},
                                 {"precision", s.precision},
                                 {"recall", s.recall},
                                 {"accuracy", accuracy(s.na, s.nm, s.ne)}};
      } catch (const InputError& e) {
        throw StageError(opt_.until, std::string("validation: ") + e.what(), true);
      } catch (const std::exception& e) {
        throw StageError(opt_.until, std::string("validation: ") + e.what(), false);
      }
    }
    write("summary.json", summary.dump(2) + "\n");
    result_.summary = std::move(summary);
    return std::move(result_);
  }

  const PipelineConfig& c_;
  const RunOptions& opt_;
  fs::path out_;
  json manifest_ = json::object();
  json info_ = json::object();
  PipelineResult result_;

  std::vector<Trajectory> trajs_;
  std::unique_ptr<TimedNetwork> net_;
  std::unique_ptr<PoiIndex> poi_index_;
  SpeedThreshold speed_;
  std::vector<std::vector<Stop>> stops_;
  std::optional<ThresholdLadder> ladder_;
  std::size_t n_ = 1;
  std::vector<std::vector<TripEnd>> ends_;
  std::vector<std::vector<Trip>> trips_;
};

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, const RunOptions& options) {
  config.validate();
  fs::create_directories(config.output);
  Runner runner(config, options);
  return runner.run();
}

}  // namespace tripends
