#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tripends/chains.hpp"
#include "tripends/identify.hpp"
#include "tripends/ingest.hpp"
#include "tripends/loubar.hpp"
#include "tripends/stops.hpp"
#include "tripends/synth.hpp"

namespace tripends {

// --- zone grids ------------------------------------------------------------------------

using Cell = std::pair<long, long>;  // (column, row)

/// Square cells in an equirectangular projection about a fixed center. Cell
/// (0, 0) has its south-west corner at `origin`.
struct ZoneGrid {
  LocalProjection proj;
  XY origin;
  double cell_m = 3000.0;

  Cell cell_of(LonLat p) const;
  LonLat cell_center(Cell c) const;
  LonLat corner() const { return proj.inverse(origin); }
};

/// Grid centered on the boundary centroid, origin at the south-west corner of
/// the boundary's bounding box. Throws std::invalid_argument unless cell_m > 0.
ZoneGrid make_zone_grid(const CityBoundary& boundary, double cell_m);

struct HotspotGrid {
  ZoneGrid grid;
  std::map<Cell, std::uint64_t> counts;
};

struct OdMatrix {
  ZoneGrid grid;
  std::map<std::pair<Cell, Cell>, std::uint64_t> counts;
};

/// Counts kept ends per cell; removed ends are ignored.
HotspotGrid hotspot_grid(std::span<const TripEnd> ends, const ZoneGrid& grid);
/// Counts trips per (origin cell, destination cell), diagonal included.
OdMatrix od_matrix(std::span<const Trip> trips, const ZoneGrid& grid);

inline constexpr const char* kHotspotsCsvHeader = "col,row,lon,lat,count";
inline constexpr const char* kOdCsvHeader = "o_col,o_row,d_col,d_row,count";
std::string format_hotspots_csv(const HotspotGrid& h);
std::string format_od_csv(const OdMatrix& od);

// --- configuration -----------------------------------------------------------------------

struct PipelineInputs {
  std::filesystem::path gps;
  std::filesystem::path nodes;
  std::filesystem::path edges;
  std::filesystem::path pois;
  std::filesystem::path boundary;     // optional: no clipping without it
  std::filesystem::path restricted;   // optional
  std::filesystem::path calibration;  // optional: circuity_order is used instead
  std::filesystem::path truth;        // optional
};

struct PipelineParams {
  CleanOptions clean;
  double bin_width_kmh = 0.5;
  SpeedThresholdOptions speed;
  LadderOptions ladder;
  std::size_t k = 8;
  std::size_t circuity_order = 1;  // used when no calibration trips are given
  CircuityOptions circuity;
  FilterOptions filter;
  double dbscan_eps_m = 500.0;
  std::size_t dbscan_min_pts = 1;
  double hotspot_cell_m = 1000.0;
  double od_zone_m = 3000.0;
  MatchOptions match;
  std::string method = "ladder";  // or "thakur"
  ThakurOptions thakur;
};

struct PipelineConfig {
  PipelineInputs inputs;
  PipelineParams params;
  std::filesystem::path output = "out";
  std::size_t threads = 1;

  /// Relative paths resolve against base_dir. Throws InputError on bad
  /// values or unknown keys.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::json params_json() const;
  void validate() const;
};

// --- running -------------------------------------------------------------------------------

enum class Stage { ingest, roadnet, stops, thresholds, calibrate, identify, filter, trips, chains, aggregates };

std::string_view to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view s);

/// A stage failed; `input` tells whether the cause was bad input.
class StageError : public std::runtime_error {
 public:
  StageError(Stage stage, const std::string& cause, bool input);
  Stage stage() const { return stage_; }
  bool input() const { return input_; }

 private:
  Stage stage_;
  bool input_;
};

struct RunOptions {
  Stage until = Stage::aggregates;
  std::function<void(const std::string&)> log;
};

struct PipelineResult {
  nlohmann::json summary;
  std::vector<Stage> ran;
  std::vector<Stage> cached;
};

/// Runs the stages in order, reusing outputs from an earlier run whose inputs
/// and parameters hash the same. Writes manifest.json and, when the last
/// stage is reached, summary.json (plus validation.csv with truth).
PipelineResult run_pipeline(const PipelineConfig& config, const RunOptions& options = {});

}  // namespace tripends
