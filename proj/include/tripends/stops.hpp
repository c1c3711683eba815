#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tripends/geo.hpp"
#include "tripends/ingest.hpp"

namespace tripends {

/// Fixed-width histogram of per-interval speeds. Mergeable, so per-truck
/// partial histograms can be combined in any order.
class SpeedHistogram {
 public:
  explicit SpeedHistogram(double bin_width_kmh = 0.5, double min_cover_kmh = 30.0);

  void add(double speed_kmh, std::uint64_t count = 1);
  void merge(const SpeedHistogram& other);

  double bin_width() const { return bin_width_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  std::uint64_t total() const { return total_; }
  double bin_center(std::size_t i) const { return (static_cast<double>(i) + 0.5) * bin_width_; }
  /// Upper edge of the last bin.
  double coverage() const { return static_cast<double>(counts_.size()) * bin_width_; }

  /// Builds a histogram from explicit counts, for tests and reloading.
  static SpeedHistogram from_counts(double bin_width_kmh, std::vector<std::uint64_t> counts);

 private:
  double bin_width_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

struct SpeedThresholdOptions {
  int smoothing_window = 3;   // bins, odd
  double search_max_kmh = 20.0;
  double fallback_kmh = 5.0;
};

struct SpeedThreshold {
  double kmh = 0.0;
  bool fallback = false;  // no local minimum inside the search window
};

/// Picks the drift/driving transition: among local minima of the smoothed
/// histogram with bin centers in (0, search_max], the lowest one; ties go to
/// the smaller speed. A flat-bottomed valley is represented by its left bin.
SpeedThreshold derive_speed_threshold(const SpeedHistogram& hist,
                                      const SpeedThresholdOptions& options = {});

struct IntervalSpeed {
  std::size_t start_index = 0;
  double kmh = 0.0;
};

std::vector<IntervalSpeed> interval_speeds(const Trajectory& traj);

void accumulate_speeds(SpeedHistogram& hist, const Trajectory& traj);

/// Stationary episode: a maximal run of intervals slower than the threshold.
struct Stop {
  std::string truck_id;
  double lon = 0.0;
  double lat = 0.0;
  std::int64_t start_time = 0;
  std::int64_t end_time = 0;
  std::int64_t dwell = 0;
  std::size_t n_points = 0;
  // Fix range [first_index, last_index] in the source trajectory.
  std::size_t first_index = 0;
  std::size_t last_index = 0;

  LonLat position() const { return {lon, lat}; }
};

std::vector<Stop> detect_stops(const Trajectory& traj, double v_thresh_kmh);

inline constexpr const char* kStopsCsvHeader = "truck_id,lon,lat,start_time,end_time,dwell_s,n_points";

std::string format_stops_csv(const std::vector<Stop>& stops);

/// Reads stops.csv. Fix indices are not stored in the file; use
/// attach_stop_indices to recover them from the trajectory.
std::vector<Stop> parse_stops_csv(const std::filesystem::path& path);

/// Recovers first/last fix indices by timestamp. Throws InputError if a stop
/// does not line up with the trajectory's fixes.
void attach_stop_indices(const Trajectory& traj, std::vector<Stop>& stops);

}  // namespace tripends
