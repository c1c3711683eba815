#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tripends/ingest.hpp"
#include "tripends/loubar.hpp"
#include "tripends/roadnet.hpp"
#include "tripends/stops.hpp"

namespace tripends {

enum class EndStatus : std::uint8_t { kept, removed_on_road, removed_no_poi };

std::string_view to_string(EndStatus s);
std::optional<EndStatus> parse_end_status(std::string_view s);

struct TripEnd {
  std::string truck_id;
  double lon = 0.0;
  double lat = 0.0;
  std::int64_t arrive_time = 0;
  std::int64_t depart_time = 0;
  std::int64_t dwell = 0;
  std::size_t level_used = 0;  // ladder index that promoted the stop
  EndStatus status = EndStatus::kept;
  // Fix range of the underlying stop.
  std::size_t first_index = 0;
  std::size_t last_index = 0;

  LonLat position() const { return {lon, lat}; }
  bool kept() const { return status == EndStatus::kept; }
};

TripEnd end_from_stop(const Stop& stop, std::size_t level);

/// Stretch of trajectory between two consecutive ends (or a trajectory edge).
struct Subtrajectory {
  std::string truck_id;
  std::size_t first_index = 0;
  std::size_t last_index = 0;
  LonLat origin;
  LonLat dest;
  std::int64_t start_time = 0;
  double actual_length_m = 0.0;  // cumulative haversine over the fixes
};

/// Sum of haversine steps over fixes [first, last].
double path_length(const Trajectory& traj, std::size_t first, std::size_t last);

// --- circuity -------------------------------------------------------------------

/// 2 min(a,b) / (a+b); 1 when both are zero.
double sorensen_similarity(double a, double b);

struct CalibrationTrip {
  LonLat origin;
  LonLat dest;
  double actual_length_m = 0.0;
};

struct CircuityOptions {
  double eta = 0.0;              // slack: circuitous iff actual > (1 + eta) * reference
  double max_snap_m = 2000.0;    // farther endpoints cannot be judged
  KspOptions ksp;
};

struct CircuityCalibration {
  std::size_t n = 1;
  std::size_t k = 0;
  std::vector<double> mean_ssi;      // per order 1..K; NaN where no trip produced that order
  std::vector<std::size_t> samples;  // trips contributing to each order
  std::size_t trips_used = 0;
};

/// Picks the shortest-path order whose lengths best match observed single
/// trips by mean SSI. Ties go to the smaller order. Per-order sums run over
/// sorted values, so the result does not depend on trip order. Throws
/// DegenerateInput if no trip could be routed.
CircuityCalibration calibrate_circuity_order(std::span<const CalibrationTrip> trips, const RoadGraph& g,
                                             std::size_t k, const CircuityOptions& options = {});

/// Length of the order-n link-elimination path between the snapped
/// endpoints (the last generated order if fewer exist); nullopt when the
/// endpoints cannot be snapped within max_snap_m or are disconnected.
std::optional<double> reference_length(LonLat origin, LonLat dest, const RoadGraph& g, std::size_t n,
                                       const CircuityOptions& options = {});

bool is_circuitous(const Subtrajectory& sub, const RoadGraph& g, std::size_t n,
                   const CircuityOptions& options = {});

/// Straight-line over along-track distance; 1 for a zero-length track.
double circuity_ratio(const Subtrajectory& sub);

// --- identification --------------------------------------------------------------

using CircuityTest = std::function<bool(const Subtrajectory&)>;

struct RecursionPlan {
  std::vector<double> levels;  // strictly decreasing dwell thresholds, seconds
  std::size_t entry = 0;       // level applied to the whole trajectory
  /// When a circuitous stretch has no stop at the current level, try the next
  /// lower one instead of giving up.
  bool fall_through = true;
};

/// The split-and-descend engine shared by the ladder method and the baseline.
/// Stops at or above the entry level become ends and split the trajectory;
/// each piece that passes `circuitous` is searched again at lower levels,
/// using only the stops inside it.
std::vector<TripEnd> split_recursive(const Trajectory& traj, std::span<const Stop> stops,
                                     const RecursionPlan& plan, const CircuityTest& circuitous);

/// Largest ladder level not exceeding the truck's longest stop.
std::optional<std::size_t> entry_level(const ThresholdLadder& ladder, std::span<const Stop> stops);

/// Ladder-driven identification with the road-network circuity test. The
/// TimedNetwork overload judges each piece on the graph active when it starts.
std::vector<TripEnd> identify_trip_ends(const Trajectory& traj, std::span<const Stop> stops,
                                        const ThresholdLadder& ladder, const RoadGraph& g, std::size_t n,
                                        const CircuityOptions& options = {});
std::vector<TripEnd> identify_trip_ends(const Trajectory& traj, std::span<const Stop> stops,
                                        const ThresholdLadder& ladder, const TimedNetwork& net,
                                        std::size_t n, const CircuityOptions& options = {});

struct ThakurOptions {
  std::vector<double> levels{1800.0, 900.0, 300.0};
  double ratio_threshold = 0.7;
  /// The published procedure applies level k only at depth k.
  bool fall_through = false;
};

/// Fixed-threshold baseline: straight-line / along-track ratio decides circuity.
std::vector<TripEnd> thakur_baseline(const Trajectory& traj, std::span<const Stop> stops,
                                     const ThakurOptions& options = {});

// --- filtering and accuracy -----------------------------------------------------------

struct RoadWidths {
  std::array<double, kRoadClassCount> meters{30.0, 20.0, 14.0, 10.0};

  double of(RoadClass c) const { return meters[static_cast<std::size_t>(c)]; }
};

struct FilterOptions {
  RoadWidths widths;
  double poi_radius_m = 200.0;
};

/// Marks ends on a road (closer than half the nearest road's width) and ends
/// with no freight POI nearby. Already-removed ends are left as they are.
std::vector<TripEnd> filter_trip_ends(std::vector<TripEnd> ends, const RoadGraph& g, const PoiIndex& pois,
                                      const FilterOptions& options = {});

/// NA / (NA + NM + NE). Throws DegenerateInput when all three are zero.
double accuracy(std::uint64_t na, std::uint64_t nm, std::uint64_t ne);

// --- files ------------------------------------------------------------------------------

std::string format_ends_geojson(const std::vector<TripEnd>& ends);
std::vector<TripEnd> parse_ends_geojson(const std::string& text);
std::vector<TripEnd> load_ends_geojson(const std::filesystem::path& path);
/// Recovers fix indices by timestamp, as for stops.
void attach_end_indices(const Trajectory& traj, std::vector<TripEnd>& ends);

inline constexpr const char* kCalibrationCsvHeader = "o_lon,o_lat,d_lon,d_lat,actual_m";
std::vector<CalibrationTrip> load_calibration_trips(const std::filesystem::path& path);
std::string format_calibration_trips(const std::vector<CalibrationTrip>& trips);

}  // namespace tripends
