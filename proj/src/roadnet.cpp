#include "tripends/roadnet.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "spatial_grid.hpp"
#include "tripends/csv.hpp"
#include "tripends/error.hpp"
#include "tripends/geojson.hpp"
#include "tripends/ingest.hpp"

namespace tripends {

std::string_view to_string(RoadClass c) {
  switch (c) {
    case RoadClass::motorway: return "motorway";
    case RoadClass::primary: return "primary";
    case RoadClass::secondary: return "secondary";
    case RoadClass::tertiary: return "tertiary";
  }
  return "tertiary";
}

std::optional<RoadClass> parse_road_class(std::string_view s) {
  if (s == "motorway") return RoadClass::motorway;
  if (s == "primary") return RoadClass::primary;
  if (s == "secondary") return RoadClass::secondary;
  if (s == "tertiary") return RoadClass::tertiary;
  return std::nullopt;
}

// --- RoadGraph -----------------------------------------------------------------

RoadGraph::RoadGraph() = default;
RoadGraph::RoadGraph(const RoadGraph&) = default;
RoadGraph& RoadGraph::operator=(const RoadGraph&) = default;
RoadGraph::RoadGraph(RoadGraph&&) noexcept = default;
RoadGraph& RoadGraph::operator=(RoadGraph&&) noexcept = default;
RoadGraph::~RoadGraph() = default;

bool RoadGraph::add_node(NodeId id, LonLat pos) {
  if (node_lookup_.contains(id)) return false;
  node_lookup_.emplace(id, nodes_.size());
  nodes_.push_back({id, pos});
  out_.emplace_back();
  index_.reset();
  return true;
}

RoadGraph::EdgeStatus RoadGraph::add_edge(EdgeId id, NodeId from, NodeId to, double length_m,
                                          RoadClass cls) {
  if (edge_lookup_.contains(id)) return EdgeStatus::duplicate_id;
  auto f = node_index(from);
  auto t = node_index(to);
  if (!f || !t) return EdgeStatus::unknown_node;
  if (!(length_m > 0.0) || !std::isfinite(length_m)) return EdgeStatus::bad_length;
  edge_lookup_.emplace(id, edges_.size());
  out_[*f].push_back(edges_.size());
  edges_.push_back({id, *f, *t, length_m, cls});
  index_.reset();
  return EdgeStatus::added;
}

std::optional<std::size_t> RoadGraph::node_index(NodeId id) const {
  auto it = node_lookup_.find(id);
  if (it == node_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> RoadGraph::edge_index(EdgeId id) const {
  auto it = edge_lookup_.find(id);
  if (it == edge_lookup_.end()) return std::nullopt;
  return it->second;
}

void RoadGraph::build_index(double cell_m) {
  index_ = std::make_shared<const SpatialGrid>(*this, cell_m);
}

// --- SpatialGrid -----------------------------------------------------------------

namespace {

LonLat graph_center(const RoadGraph& g) {
  if (g.nodes().empty()) return {};
  double min_lon = 180, max_lon = -180, min_lat = 90, max_lat = -90;
  for (const auto& n : g.nodes()) {
    min_lon = std::min(min_lon, n.pos.lon);
    max_lon = std::max(max_lon, n.pos.lon);
    min_lat = std::min(min_lat, n.pos.lat);
    max_lat = std::max(max_lat, n.pos.lat);
  }
  return {(min_lon + max_lon) / 2.0, (min_lat + max_lat) / 2.0};
}

}  // namespace

SpatialGrid::SpatialGrid(const RoadGraph& g, double cell_m) : proj_(graph_center(g)), cell_m_(cell_m) {
  auto touch = [&](long x, long y) {
    if (max_x_ < min_x_) {
      min_x_ = max_x_ = x;
      min_y_ = max_y_ = y;
    } else {
      min_x_ = std::min(min_x_, x);
      max_x_ = std::max(max_x_, x);
      min_y_ = std::min(min_y_, y);
      max_y_ = std::max(max_y_, y);
    }
  };
  for (std::size_t i = 0; i < g.nodes().size(); ++i) {
    const Cell c = cell_of(g.nodes()[i].pos);
    cells_[key(c.x, c.y)].nodes.push_back(i);
    touch(c.x, c.y);
  }
  for (std::size_t i = 0; i < g.edges().size(); ++i) {
    const auto& e = g.edges()[i];
    const Cell a = cell_of(g.nodes()[e.from].pos);
    const Cell b = cell_of(g.nodes()[e.to].pos);
    for (long x = std::min(a.x, b.x); x <= std::max(a.x, b.x); ++x) {
      for (long y = std::min(a.y, b.y); y <= std::max(a.y, b.y); ++y) {
        cells_[key(x, y)].edges.push_back(i);
        touch(x, y);
      }
    }
  }
}

SpatialGrid::Cell SpatialGrid::cell_of(LonLat p) const {
  const XY xy = proj_.forward(p);
  return {static_cast<long>(std::floor(xy.x / cell_m_)), static_cast<long>(std::floor(xy.y / cell_m_))};
}

namespace {

// Grid cells are laid out in a projection centered on the graph, while
// distances are exact; leave slack for the difference.
constexpr double kGridSlack = 0.9;

bool better_node(double d, NodeId id, const NodeHit& best, bool have) {
  return !have || d < best.distance_m || (d == best.distance_m && id < best.id);
}

bool better_road(double d, EdgeId id, const RoadHit& best, bool have) {
  return !have || d < best.distance_m || (d == best.distance_m && id < best.edge);
}

double chord_distance(const RoadGraph& g, const Edge& e, const LocalProjection& proj) {
  return point_segment_distance({0.0, 0.0}, proj.forward(g.nodes()[e.from].pos),
                                proj.forward(g.nodes()[e.to].pos));
}

}  // namespace

NodeHit snap_to_node_scan(const RoadGraph& g, LonLat p) {
  if (g.nodes().empty()) throw std::invalid_argument("cannot snap to an empty graph");
  NodeHit best;
  bool have = false;
  for (const auto& n : g.nodes()) {
    const double d = haversine(p, n.pos);
    if (better_node(d, n.id, best, have)) {
      best = {n.id, d};
      have = true;
    }
  }
  return best;
}

NodeHit snap_to_node(const RoadGraph& g, LonLat p) {
  const SpatialGrid* grid = g.index();
  if (!grid) return snap_to_node_scan(g, p);
  if (g.nodes().empty()) throw std::invalid_argument("cannot snap to an empty graph");
  NodeHit best;
  bool have = false;
  grid->search(
      p,
      [&](const std::vector<std::size_t>& nodes, const std::vector<std::size_t>&) {
        for (std::size_t i : nodes) {
          const auto& n = g.nodes()[i];
          const double d = haversine(p, n.pos);
          if (better_node(d, n.id, best, have)) {
            best = {n.id, d};
            have = true;
          }
        }
      },
      [&](double reach) { return have && best.distance_m < kGridSlack * reach; });
  return best;
}

std::optional<RoadHit> distance_to_nearest_road_scan(const RoadGraph& g, LonLat p) {
  const LocalProjection proj(p);
  std::optional<RoadHit> best;
  for (const auto& e : g.edges()) {
    const double d = chord_distance(g, e, proj);
    if (better_road(d, e.id, best.value_or(RoadHit{}), best.has_value())) best = RoadHit{d, e.cls, e.id};
  }
  return best;
}

std::optional<RoadHit> distance_to_nearest_road(const RoadGraph& g, LonLat p) {
  const SpatialGrid* grid = g.index();
  if (!grid) return distance_to_nearest_road_scan(g, p);
  const LocalProjection proj(p);
  std::optional<RoadHit> best;
  grid->search(
      p,
      [&](const std::vector<std::size_t>&, const std::vector<std::size_t>& edges) {
        for (std::size_t i : edges) {
          const auto& e = g.edges()[i];
          const double d = chord_distance(g, e, proj);
          if (better_road(d, e.id, best.value_or(RoadHit{}), best.has_value())) {
            best = RoadHit{d, e.cls, e.id};
          }
        }
      },
      [&](double reach) { return best && best->distance_m < kGridSlack * reach; });
  return best;
}

// --- loading -----------------------------------------------------------------------

GraphLoadResult parse_graph(const std::string& nodes_text, const std::string& edges_text) {
  GraphLoadResult result;
  csv::for_each_row(nodes_text, kNodesCsvHeader, "nodes.csv", [&](std::size_t, const auto& f) {
    if (f.size() != 3) {
      ++result.rejected_nodes;
      return;
    }
    auto id = csv::parse_number<NodeId>(f[0]);
    auto lon = csv::parse_number<double>(f[1]);
    auto lat = csv::parse_number<double>(f[2]);
    if (!id || !lon || !lat || *lon < -180 || *lon > 180 || *lat < -90 || *lat > 90 ||
        !result.graph.add_node(*id, {*lon, *lat})) {
      ++result.rejected_nodes;
    }
  });
  csv::for_each_row(edges_text, kEdgesCsvHeader, "edges.csv", [&](std::size_t, const auto& f) {
    if (f.size() != 5) {
      ++result.rejected_edges;
      return;
    }
    auto id = csv::parse_number<EdgeId>(f[0]);
    auto from = csv::parse_number<NodeId>(f[1]);
    auto to = csv::parse_number<NodeId>(f[2]);
    auto len = csv::parse_number<double>(f[3]);
    auto cls = parse_road_class(f[4]);
    if (!id || !from || !to || !len || !cls ||
        result.graph.add_edge(*id, *from, *to, *len, *cls) != RoadGraph::EdgeStatus::added) {
      ++result.rejected_edges;
    }
  });
  if (result.graph.nodes().empty()) throw InputError("road graph has no nodes");
  result.graph.build_index();
  return result;
}

GraphLoadResult load_graph(const std::filesystem::path& nodes_path,
                           const std::filesystem::path& edges_path) {
  for (const auto& p : {nodes_path, edges_path}) {
    if (!std::filesystem::exists(p)) throw InputError("road network file not found: " + p.string());
  }
  return parse_graph(csv::read_file(nodes_path), csv::read_file(edges_path));
}

std::string format_nodes_csv(const RoadGraph& g) {
  std::string out = kNodesCsvHeader;
  out += '\n';
  for (const auto& n : g.nodes()) {
    fmt::format_to(std::back_inserter(out), "{},{:.7f},{:.7f}\n", n.id, n.pos.lon, n.pos.lat);
  }
  return out;
}

std::string format_edges_csv(const RoadGraph& g) {
  std::string out = kEdgesCsvHeader;
  out += '\n';
  for (const auto& e : g.edges()) {
    fmt::format_to(std::back_inserter(out), "{},{},{},{:.3f},{}\n", e.id, g.nodes()[e.from].id,
                   g.nodes()[e.to].id, e.length_m, to_string(e.cls));
  }
  return out;
}

// --- restricted areas --------------------------------------------------------------

bool TimeWindow::contains(int tod_s) const {
  if (start_s < end_s) return tod_s >= start_s && tod_s < end_s;
  if (start_s == end_s) return false;
  return tod_s >= start_s || tod_s < end_s;
}

TimeWindow parse_time_window(std::string_view text) {
  auto parse_hm = [&](std::string_view s) -> int {
    const auto colon = s.find(':');
    if (colon == std::string_view::npos) throw InputError("bad time window '" + std::string(text) + "'");
    auto h = csv::parse_number<int>(s.substr(0, colon));
    auto m = csv::parse_number<int>(s.substr(colon + 1));
    if (!h || !m || *h < 0 || *h > 24 || *m < 0 || *m > 59 || (*h == 24 && *m != 0)) {
      throw InputError("bad time window '" + std::string(text) + "'");
    }
    return *h * 3600 + *m * 60;
  };
  const auto dash = text.find('-');
  if (dash == std::string_view::npos) throw InputError("bad time window '" + std::string(text) + "'");
  TimeWindow w{parse_hm(text.substr(0, dash)), parse_hm(text.substr(dash + 1))};
  if (w.start_s >= 86400) throw InputError("time window must start before 24:00");
  return w;
}

std::string format_time_window(const TimeWindow& w) {
  return fmt::format("{:02}:{:02}-{:02}:{:02}", w.start_s / 3600, (w.start_s % 3600) / 60,
                     w.end_s / 3600, (w.end_s % 3600) / 60);
}

bool RestrictedArea::active_at(int tod_s) const {
  if (windows.empty()) return true;
  return std::any_of(windows.begin(), windows.end(), [&](const TimeWindow& w) { return w.contains(tod_s); });
}

bool RestrictedArea::contains(LonLat p) const {
  return std::any_of(polygons.begin(), polygons.end(),
                     [&](const std::vector<Ring>& rings) { return point_in_rings(p, rings); });
}

int time_of_day(std::int64_t epoch_s) {
  return static_cast<int>(((epoch_s % 86400) + 86400) % 86400);
}

RoadGraph apply_restrictions(const RoadGraph& g, const std::vector<RestrictedArea>& areas, int tod_s) {
  std::vector<const RestrictedArea*> active;
  for (const auto& a : areas) {
    if (a.active_at(tod_s)) active.push_back(&a);
  }
  if (active.empty()) return g;
  return g.filter_edges([&](const Edge& e) {
    const LonLat a = g.nodes()[e.from].pos;
    const LonLat b = g.nodes()[e.to].pos;
    const LonLat mid{(a.lon + b.lon) / 2.0, (a.lat + b.lat) / 2.0};
    return std::none_of(active.begin(), active.end(), [&](const RestrictedArea* r) { return r->contains(mid); });
  });
}

std::vector<RestrictedArea> parse_restricted_areas(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("restricted areas GeoJSON: ") + e.what());
  }
  std::vector<RestrictedArea> out;
  for (const auto& f : geojson::features(doc)) {
    RestrictedArea area;
    area.polygons = geojson::polygons(f.at("geometry"));
    for (const auto& poly : area.polygons) {
      for (const auto& ring : poly) validate_ring(ring);
    }
    const auto& props = f.contains("properties") && f["properties"].is_object() ? f["properties"]
                                                                                  : nlohmann::json::object();
    area.label = props.value("label", props.value("name", ""));
    if (props.contains("active_windows")) {
      for (const auto& w : props["active_windows"]) area.windows.push_back(parse_time_window(w.get<std::string>()));
    }
    out.push_back(std::move(area));
  }
  return out;
}

std::vector<RestrictedArea> load_restricted_areas(const std::filesystem::path& path) {
  return parse_restricted_areas(csv::read_file(path));
}

std::string format_restricted_areas(const std::vector<RestrictedArea>& areas) {
  nlohmann::json fc{{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
  for (const auto& a : areas) {
    nlohmann::json coords = nlohmann::json::array();
    for (const auto& poly : a.polygons) {
      nlohmann::json rings = nlohmann::json::array();
      for (const auto& ring : poly) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& p : ring) r.push_back({p.lon, p.lat});
        rings.push_back(std::move(r));
      }
      coords.push_back(std::move(rings));
    }
    nlohmann::json windows = nlohmann::json::array();
    for (const auto& w : a.windows) windows.push_back(format_time_window(w));
    fc["features"].push_back({{"type", "Feature"},
                              {"geometry", {{"type", "MultiPolygon"}, {"coordinates", coords}}},
                              {"properties", {{"label", a.label}, {"active_windows", windows}}}});
  }
  return fc.dump(1) + "\n";
}

TimedNetwork::TimedNetwork(RoadGraph base, std::vector<RestrictedArea> areas)
    : base_(std::make_shared<const RoadGraph>(std::move(base))) {
  std::set<int> cuts{0};
  for (const auto& a : areas) {
    for (const auto& w : a.windows) {
      cuts.insert(w.start_s % 86400);
      cuts.insert(w.end_s % 86400);
    }
  }
  breakpoints_.assign(cuts.begin(), cuts.end());
  std::map<std::vector<bool>, std::size_t> seen;
  for (int start : breakpoints_) {
    std::vector<bool> active;
    for (const auto& a : areas) active.push_back(a.active_at(start));
    auto [it, inserted] = seen.emplace(active, variants_.size());
    if (inserted) {
      const bool none = std::none_of(active.begin(), active.end(), [](bool b) { return b; });
      variants_.push_back(none ? base_ : std::make_shared<const RoadGraph>(apply_restrictions(*base_, areas, start)));
    }
    segment_variant_.push_back(it->second);
  }
}

const RoadGraph& TimedNetwork::at_time(std::int64_t epoch_s) const {
  const int tod = time_of_day(epoch_s);
  auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), tod);
  const auto seg = static_cast<std::size_t>(it - breakpoints_.begin()) - 1;
  return *variants_[segment_variant_[seg]];
}

// --- POIs --------------------------------------------------------------------------

bool is_poi_category(std::string_view s) {
  return std::find(kPoiCategories.begin(), kPoiCategories.end(), s) != kPoiCategories.end();
}

PoiLoadResult parse_pois(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("POI GeoJSON: ") + e.what());
  }
  PoiLoadResult result;
  for (const auto& f : geojson::features(doc)) {
    try {
      Poi poi;
      poi.pos = geojson::point(f.at("geometry"));
      const auto& props = f.at("properties");
      poi.name = props.value("name", "");
      poi.category = props.value("category", "");
      if (!is_poi_category(poi.category) || poi.pos.lon < -180 || poi.pos.lon > 180 ||
          poi.pos.lat < -90 || poi.pos.lat > 90) {
        ++result.rejected;
        continue;
      }
      result.pois.push_back(std::move(poi));
    } catch (const std::exception&) {
      ++result.rejected;
    }
  }
  return result;
}

PoiLoadResult load_pois(const std::filesystem::path& path) { return parse_pois(csv::read_file(path)); }

std::string format_pois(const std::vector<Poi>& pois) {
  nlohmann::json fc{{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
  for (const auto& p : pois) {
    fc["features"].push_back(geojson::point_feature(p.pos, {{"name", p.name}, {"category", p.category}}));
  }
  return fc.dump(1) + "\n";
}

PoiIndex::PoiIndex(std::vector<Poi> pois, double cell_m) : pois_(std::move(pois)), cell_m_(cell_m) {
  if (!pois_.empty()) {
    double lon = 0, lat = 0;
    for (const auto& p : pois_) {
      lon += p.pos.lon;
      lat += p.pos.lat;
    }
    proj_ = LocalProjection({lon / static_cast<double>(pois_.size()), lat / static_cast<double>(pois_.size())});
  }
  for (std::size_t i = 0; i < pois_.size(); ++i) cells_[cell_of(pois_[i].pos)].push_back(i);
}

std::pair<long, long> PoiIndex::cell_of(LonLat p) const {
  const XY xy = proj_.forward(p);
  return {static_cast<long>(std::floor(xy.x / cell_m_)), static_cast<long>(std::floor(xy.y / cell_m_))};
}

bool PoiIndex::any_within(LonLat p, double radius_m) const {
  if (pois_.empty()) return false;
  const auto [cx, cy] = cell_of(p);
  // One extra ring of cells covers projection distortion at city scale.
  const long reach = static_cast<long>(std::ceil(radius_m / cell_m_)) + 1;
  for (long x = cx - reach; x <= cx + reach; ++x) {
    for (long y = cy - reach; y <= cy + reach; ++y) {
      auto it = cells_.find({x, y});
      if (it == cells_.end()) continue;
      for (std::size_t i : it->second) {
        if (haversine(p, pois_[i].pos) <= radius_m) return true;
      }
    }
  }
  return false;
}

std::optional<double> PoiIndex::nearest_distance(LonLat p) const {
  if (pois_.empty()) return std::nullopt;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& poi : pois_) best = std::min(best, haversine(p, poi.pos));
  return best;
}

}  // namespace tripends
