#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tripends/geo.hpp"

namespace tripends {

enum class RoadClass : std::uint8_t { motorway = 0, primary = 1, secondary = 2, tertiary = 3 };

inline constexpr std::size_t kRoadClassCount = 4;

std::string_view to_string(RoadClass c);
std::optional<RoadClass> parse_road_class(std::string_view s);

using NodeId = std::int64_t;
using EdgeId = std::int64_t;

struct Node {
  NodeId id = 0;
  LonLat pos;
};

struct Edge {
  EdgeId id = 0;
  std::size_t from = 0;  // node index
  std::size_t to = 0;    // node index
  double length_m = 0.0;
  RoadClass cls = RoadClass::tertiary;
};

struct Path {
  std::vector<NodeId> nodes;
  std::vector<EdgeId> edges;
  double length_m = 0.0;

  bool operator==(const Path&) const = default;
};

class SpatialGrid;

/// Directed road network. Node coordinates are the only geometry; edge lengths
/// come from the input, not from the coordinates.
class RoadGraph {
 public:
  RoadGraph();
  RoadGraph(const RoadGraph&);
  RoadGraph& operator=(const RoadGraph&);
  RoadGraph(RoadGraph&&) noexcept;
  RoadGraph& operator=(RoadGraph&&) noexcept;
  ~RoadGraph();

  /// Returns false (and changes nothing) for a duplicate id.
  bool add_node(NodeId id, LonLat pos);

  enum class EdgeStatus { added, unknown_node, duplicate_id, bad_length };
  EdgeStatus add_edge(EdgeId id, NodeId from, NodeId to, double length_m, RoadClass cls);

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<std::size_t>& out_edges(std::size_t node_index) const { return out_[node_index]; }

  std::optional<std::size_t> node_index(NodeId id) const;
  std::optional<std::size_t> edge_index(EdgeId id) const;
  bool has_node(NodeId id) const { return node_index(id).has_value(); }

  /// Copy holding the same nodes and only the edges for which keep(edge) holds.
  template <typename Pred>
  RoadGraph filter_edges(Pred keep) const;

  /// Builds the 500 m grid used by snapping and nearest-road queries. Without
  /// it those queries scan linearly. Call once after loading; not thread-safe
  /// against concurrent queries.
  void build_index(double cell_m = 500.0);
  const SpatialGrid* index() const { return index_.get(); }

 private:
  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> out_;
  std::unordered_map<NodeId, std::size_t> node_lookup_;
  std::unordered_map<EdgeId, std::size_t> edge_lookup_;
  std::shared_ptr<const SpatialGrid> index_;
};

template <typename Pred>
RoadGraph RoadGraph::filter_edges(Pred keep) const {
  RoadGraph g;
  for (const auto& n : nodes_) g.add_node(n.id, n.pos);
  for (const auto& e : edges_) {
    if (keep(e)) g.add_edge(e.id, nodes_[e.from].id, nodes_[e.to].id, e.length_m, e.cls);
  }
  if (index_) g.build_index();
  return g;
}

struct GraphLoadResult {
  RoadGraph graph;
  std::size_t rejected_nodes = 0;
  std::size_t rejected_edges = 0;
};

inline constexpr const char* kNodesCsvHeader = "node_id,lon,lat";
inline constexpr const char* kEdgesCsvHeader = "edge_id,from_node,to_node,length_m,class";

/// Reads nodes.csv and edges.csv. Bad rows (dangling references, duplicate
/// ids: first wins) are rejected and counted. A graph without nodes throws.
GraphLoadResult load_graph(const std::filesystem::path& nodes_path,
                           const std::filesystem::path& edges_path);
GraphLoadResult parse_graph(const std::string& nodes_text, const std::string& edges_text);

std::string format_nodes_csv(const RoadGraph& g);
std::string format_edges_csv(const RoadGraph& g);

// --- restricted areas ------------------------------------------------------

struct TimeWindow {
  int start_s = 0;  // seconds after midnight
  int end_s = 0;    // exclusive; may be <= start_s for windows crossing midnight

  bool contains(int tod_s) const;
};

/// "HH:MM-HH:MM"; throws InputError on malformed text.
TimeWindow parse_time_window(std::string_view text);
std::string format_time_window(const TimeWindow& w);

struct RestrictedArea {
  std::vector<std::vector<Ring>> polygons;
  std::vector<TimeWindow> windows;  // empty: always active
  std::string label;

  bool active_at(int tod_s) const;
  bool contains(LonLat p) const;
};

int time_of_day(std::int64_t epoch_s);

/// Drops every edge whose chord midpoint lies in an area active at tod_s.
RoadGraph apply_restrictions(const RoadGraph& g, const std::vector<RestrictedArea>& areas, int tod_s);

std::vector<RestrictedArea> load_restricted_areas(const std::filesystem::path& path);
std::vector<RestrictedArea> parse_restricted_areas(const std::string& text);
std::string format_restricted_areas(const std::vector<RestrictedArea>& areas);

/// One restricted variant of a base graph per distinct set of active areas
/// over the day, built up front so lookups are read-only.
class TimedNetwork {
 public:
  TimedNetwork(RoadGraph base, std::vector<RestrictedArea> areas);

  const RoadGraph& at_time(std::int64_t epoch_s) const;
  const RoadGraph& base() const { return *base_; }
  std::size_t variant_count() const { return variants_.size(); }

 private:
  std::shared_ptr<const RoadGraph> base_;
  std::vector<int> breakpoints_;  // ascending seconds-of-day, starts with 0
  std::vector<std::size_t> segment_variant_;
  std::vector<std::shared_ptr<const RoadGraph>> variants_;
};

// --- routing -----------------------------------------------------------------

/// Dijkstra on edge lengths. Ties go to the predecessor with the smaller node
/// id. nullopt when dst cannot be reached. Throws std::invalid_argument for
/// node ids not in the graph.
std::optional<Path> shortest_path(const RoadGraph& g, NodeId src, NodeId dst);

enum class MiddleEdgeRule {
  by_index,   // edge number ceil(m/2) of m
  by_length,  // edge containing the half-length point
};

struct KspOptions {
  MiddleEdgeRule middle = MiddleEdgeRule::by_index;
  /// When false each round removes only the latest middle edge, restoring
  /// earlier ones. Paths may then repeat and are skipped.
  bool accumulate = true;
};

/// Link elimination: take the shortest path, delete its middle edge, search
/// again, up to K paths. Stops early once dst is cut off.
std::vector<Path> k_shortest_paths(const RoadGraph& g, NodeId src, NodeId dst, std::size_t k,
                                   const KspOptions& options = {});

// --- spatial queries -----------------------------------------------------------

struct NodeHit {
  NodeId id = 0;
  double distance_m = 0.0;
};

/// Nearest node by haversine; ties go to the smaller id. Throws on an empty graph.
NodeHit snap_to_node(const RoadGraph& g, LonLat p);

struct RoadHit {
  double distance_m = 0.0;
  RoadClass cls = RoadClass::tertiary;
  EdgeId edge = 0;
};

/// Point-to-chord distance to the closest edge, measured in an equirectangular
/// projection centered on p. nullopt when the graph has no edges.
std::optional<RoadHit> distance_to_nearest_road(const RoadGraph& g, LonLat p);

/// Linear-scan versions of the two queries above.
NodeHit snap_to_node_scan(const RoadGraph& g, LonLat p);
std::optional<RoadHit> distance_to_nearest_road_scan(const RoadGraph& g, LonLat p);

// --- POIs ------------------------------------------------------------------------

/// Freight-related POI categories accepted on input.
inline constexpr std::array<std::string_view, 10> kPoiCategories = {
    "building_company",  "mechanical_electronics", "chemical_metallurgy", "commercial_trade",
    "logistics_warehouse", "mining_company",        "factory",             "agricultural_base",
    "industrial_park",   "building_material_market"};

bool is_poi_category(std::string_view s);

struct Poi {
  std::string name;
  LonLat pos;
  std::string category;
};

struct PoiLoadResult {
  std::vector<Poi> pois;
  std::size_t rejected = 0;
};

PoiLoadResult load_pois(const std::filesystem::path& path);
PoiLoadResult parse_pois(const std::string& text);
std::string format_pois(const std::vector<Poi>& pois);

/// Bucketed POI lookup for radius queries.
class PoiIndex {
 public:
  explicit PoiIndex(std::vector<Poi> pois, double cell_m = 500.0);

  bool any_within(LonLat p, double radius_m) const;
  /// Distance to the nearest POI, or nullopt if there are none.
  std::optional<double> nearest_distance(LonLat p) const;
  const std::vector<Poi>& pois() const { return pois_; }

 private:
  std::pair<long, long> cell_of(LonLat p) const;

  std::vector<Poi> pois_;
  double cell_m_;
  LocalProjection proj_;
  std::map<std::pair<long, long>, std::vector<std::size_t>> cells_;
};

}  // namespace tripends
