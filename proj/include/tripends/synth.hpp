#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tripends/identify.hpp"
#include "tripends/ingest.hpp"
#include "tripends/roadnet.hpp"

namespace tripends {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Synthetic city and fleet. The city is a square grid of primary roads, each
/// block holding one site at the end of a short tertiary spur; the central
/// blocks form a restricted zone with no sites.
struct SynthScenario {
  std::uint64_t seed = 1;

  // city
  int grid_n = 12;            // intersections per side
  double spacing_m = 1000.0;  // block size
  LonLat center{116.40, 39.90};
  double spur_m = 350.0;
  double yard_m = 50.0;  // off-network stretch from spur end to the stopping spot
  int restricted_blocks = 3;  // central square of blocks; 0 disables the zone
  std::string restricted_window = "07:00-19:00";

  // fleet
  int fleet = 50;
  int days = 7;
  std::int64_t start_epoch = 1704067200;  // a UTC midnight
  int sampling_s = 30;
  int clients_per_truck = 6;
  double min_client_separation_m = 2000.0;
  std::pair<int, int> chains_per_day{2, 3};
  std::map<std::string, double> pattern_mix{{"B-1-B", 0.60}, {"B-1-2-B", 0.25}, {"B-1-2-1-B", 0.15}};
  Range first_departure_s{6.0 * 3600, 7.5 * 3600};  // seconds after midnight
  Range base_dwell_s{40.0 * 60, 90.0 * 60};           // between chains
  Range client_dwell_s{20.0 * 60, 60.0 * 60};
  Range speed_kmh{35.0, 55.0};

  // temporary stops, placed on primary roads
  std::pair<int, int> temp_stops_per_leg{0, 2};
  Range temp_dwell_s{60.0, 300.0};

  // positioning noise
  double sigma_m = 3.0;
  double burst_probability = 0.0;
  double burst_sigma_m = 30.0;

  int calibration_trips = 200;

  static SynthScenario from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

enum class TruthLabel : std::uint8_t { base, client, temp };

std::string_view to_string(TruthLabel l);

struct TruthEvent {
  std::string truck_id;
  LonLat pos;
  std::int64_t arrive = 0;
  std::int64_t depart = 0;
  TruthLabel label = TruthLabel::client;
};

struct PlannedChain {
  std::string truck_id;
  std::string pattern;
};

struct GroundTruth {
  std::vector<TruthEvent> events;  // per truck, time-ordered
  std::vector<PlannedChain> chains;
};

struct SynthOutput {
  std::vector<Trajectory> trajectories;
  RoadGraph graph;
  std::vector<Poi> pois;
  CityBoundary boundary;
  std::vector<RestrictedArea> restricted;
  std::vector<CalibrationTrip> calibration;
  GroundTruth truth;
};

/// Deterministic for a given scenario. Throws InputError if a planned leg
/// cannot be routed, naming the site.
SynthOutput generate_scenario(const SynthScenario& scenario);

/// Writes gps.csv, nodes.csv, edges.csv, pois.geojson, boundary.geojson,
/// restricted.geojson, calibration.csv, truth.csv, scenario.json and a
/// pipeline config.json pointing at them.
void write_scenario(const SynthOutput& out, const SynthScenario& scenario, const std::filesystem::path& dir);

inline constexpr const char* kTruthCsvHeader = "truck_id,lon,lat,arrive,depart,label";
std::string format_truth_csv(std::span<const TruthEvent> events);
std::vector<TruthEvent> load_truth_csv(const std::filesystem::path& path);

struct MatchOptions {
  double radius_m = 300.0;
  std::int64_t window_s = 1800;  // largest allowed gap between the two time intervals
};

struct Score {
  std::uint64_t na = 0;
  std::uint64_t nm = 0;
  std::uint64_t ne = 0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Greedy one-to-one matching per truck: kept ends in arrival order each take
/// the earliest unmatched base or client event within radius and window.
/// Temporary-stop events never count. Throws DegenerateInput when the truth
/// holds no base or client event.
Score score_against_truth(std::span<const TripEnd> ends, std::span<const TruthEvent> truth,
                          const MatchOptions& options = {});

}  // namespace tripends
