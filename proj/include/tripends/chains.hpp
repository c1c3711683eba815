#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tripends/identify.hpp"
#include "tripends/ingest.hpp"

namespace tripends {

/// A freight trip between two consecutive kept ends of one truck.
struct Trip {
  std::string truck_id;
  std::size_t origin_index = 0;  // into the ends passed to extract_trips
  std::size_t dest_index = 0;
  LonLat origin;
  LonLat dest;
  std::int64_t depart = 0;
  std::int64_t arrive = 0;
  double straight_line_m = 0.0;
  double path_length_m = 0.0;
};

/// Pairs consecutive kept ends; removed ends are skipped entirely. Fix indices
/// on the ends must refer to `traj`.
std::vector<Trip> extract_trips(std::span<const TripEnd> ends, const Trajectory& traj);

inline constexpr int kNoise = -1;

/// DBSCAN under haversine distance; a point's neighbourhood includes itself
/// and every point within eps (inclusive). Clusters are numbered in order of
/// their first core point; noise is kNoise.
std::vector<int> dbscan_cluster(std::span<const LonLat> points, double eps_m, std::size_t min_pts);

/// Gives every noise point its own cluster, numbered after the existing ones.
std::vector<int> noise_as_singletons(std::vector<int> labels);

struct ClusterNode {
  int id = 0;
  LonLat centroid;
  std::vector<std::size_t> members;  // end indices
  std::int64_t total_dwell = 0;
  std::size_t visits = 0;
};

struct TravelNetwork {
  std::vector<ClusterNode> nodes;              // indexed by cluster id
  std::map<std::pair<int, int>, std::size_t> edges;  // (from, to) -> trip count
  int base = 0;
};

/// Nodes are clusters, edges count trips. The base is the most visited node
/// (visits as origin or destination); ties go to the longer total dwell, then
/// to the smaller id. Throws DegenerateInput without trips.
TravelNetwork build_travel_network(std::span<const Trip> trips, std::span<const TripEnd> ends,
                                   std::span<const int> clusters);

/// Cluster sequence visited by the trips: first origin, then each destination.
std::vector<int> visit_sequence(std::span<const Trip> trips, std::span<const int> clusters);

struct TripChain {
  std::vector<int> visits;
  bool closed = false;  // bounded by the base on both sides
};

/// Cuts the visit sequence at each base visit. Base-to-base stretches with at
/// least one stop between are closed chains; a leading or trailing stretch
/// not bounded by the base on both sides is returned as an open chain.
std::vector<TripChain> split_chains(std::span<const int> visits, int base);

/// "B-1-2-1-B": B for the base, intermediate clusters numbered by first visit.
std::string pattern_of(const TripChain& chain, int base);

struct PatternShare {
  std::string pattern;
  std::size_t count = 0;
  double share = 0.0;
};

/// Mergeable pattern tally.
class PatternCounter {
 public:
  void add(const std::string& pattern, std::size_t count = 1) { counts_[pattern] += count; }
  void merge(const PatternCounter& other);
  std::size_t total() const;
  /// Sorted by count descending, then pattern ascending. Throws
  /// std::invalid_argument when nothing was counted.
  std::vector<PatternShare> shares() const;

 private:
  std::map<std::string, std::size_t> counts_;
};

struct TruckChains {
  std::string truck_id;
  int base = 0;
  std::vector<TripChain> chains;
  std::vector<std::string> patterns;  // one per chain
};

/// Tallies closed chains only.
std::vector<PatternShare> pattern_stats(std::span<const TruckChains> trucks);

inline constexpr const char* kTripsCsvHeader = "truck_id,o_lon,o_lat,d_lon,d_lat,depart,arrive,straight_m,path_m";
inline constexpr const char* kChainsCsvHeader = "truck_id,chain_idx,pattern,closed";
inline constexpr const char* kPatternsCsvHeader = "pattern,count,share";

std::string format_trips_csv(std::span<const Trip> trips);
std::vector<Trip> load_trips_csv(const std::filesystem::path& path);
std::string format_chains_csv(std::span<const TruckChains> trucks);
std::string format_patterns_csv(std::span<const PatternShare> shares);

}  // namespace tripends
