#include <gtest/gtest.h>

#include <random>

#include "support.hpp"
#include "tripends/error.hpp"
#include "tripends/pipeline.hpp"
#include "tripends/synth.hpp"

using namespace tripends;
using testsupport::kBeijing;
using testsupport::TempDir;

namespace {

CityBoundary square_city(double half_m) {
  CityBoundary b;
  b.polygons.push_back({testsupport::square_ring(kBeijing, half_m)});
  return b;
}

TripEnd kept_end(LonLat p) {
  TripEnd e;
  e.truck_id = "T";
  e.lon = p.lon;
  e.lat = p.lat;
  return e;
}

std::vector<std::uint64_t> sorted_counts(const std::map<Cell, std::uint64_t>& m) {
  std::vector<std::uint64_t> v;
  for (const auto& [c, n] : m) v.push_back(n);
  std::sort(v.begin(), v.end());
  return v;
}

SynthScenario pipeline_scenario() {
  SynthScenario s;
  s.seed = 5;
  s.grid_n = 10;
  s.restricted_blocks = 2;
  s.fleet = 6;
  s.days = 2;
  s.calibration_trips = 40;
  return s;
}

/// Scenario files plus a config pointing at them.
struct Workspace {
  TempDir dir{"pipeline"};
  PipelineConfig config;

  explicit Workspace(const SynthScenario& s) {
    write_scenario(generate_scenario(s), s, dir.path());
    config = PipelineConfig::load(dir / "config.json");
    config.output = dir / "out";
  }
};

}  // namespace

TEST(Hotspots, OneCellHoldsAllEnds) {
  const auto grid = make_zone_grid(square_city(5000), 1000);
  std::vector<TripEnd> ends;
  for (int i = 0; i < 7; ++i) ends.push_back(kept_end(offset_meters(kBeijing, 100 + i * 10.0, 100)));
  ends.push_back(kept_end(offset_meters(kBeijing, 3000, 3000)));
  ends.back().status = EndStatus::removed_on_road;
  const auto h = hotspot_grid(ends, grid);
  ASSERT_EQ(h.counts.size(), 1u);
  EXPECT_EQ(h.counts.begin()->second, 7u);
  EXPECT_THROW(make_zone_grid(square_city(5000), 0), std::invalid_argument);
}

TEST(Hotspots, ConservationAndOriginShift) {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> coord(-5000, 5000), cell(300, 3000);
  std::uniform_int_distribution<int> count(0, 200);
  std::bernoulli_distribution removed(0.2);
  for (int c = 0; c < 150; ++c) {
    const auto grid = make_zone_grid(square_city(5000), cell(rng));
    std::vector<TripEnd> ends;
    std::uint64_t kept = 0;
    for (int i = count(rng); i > 0; --i) {
      ends.push_back(kept_end(offset_meters(kBeijing, coord(rng), coord(rng))));
      if (removed(rng)) {
        ends.back().status = EndStatus::removed_no_poi;
      } else {
        ++kept;
      }
    }
    const auto h = hotspot_grid(ends, grid);
    std::uint64_t total = 0;
    for (const auto& [cell_id, n] : h.counts) {
      total += n;
      EXPECT_GE(cell_id.first, 0);
      EXPECT_GE(cell_id.second, 0);
    }
    EXPECT_EQ(total, kept);

    ZoneGrid shifted = grid;
    shifted.origin.x -= grid.cell_m;
    shifted.origin.y += grid.cell_m;
    const auto h2 = hotspot_grid(ends, shifted);
    EXPECT_EQ(sorted_counts(h2.counts), sorted_counts(h.counts));
    for (const auto& [cell_id, n] : h.counts) {
      const auto it = h2.counts.find({cell_id.first + 1, cell_id.second - 1});
      ASSERT_NE(it, h2.counts.end());
      EXPECT_EQ(it->second, n);
    }
  }
}

TEST(OdMatrix, SingleTripAndTranspose) {
  std::mt19937_64 rng(72);
  std::uniform_real_distribution<double> coord(-9000, 9000);
  std::uniform_int_distribution<int> count(0, 150);
  const auto grid = make_zone_grid(square_city(10000), 3000);

  Trip one;
  one.origin = kBeijing;
  one.dest = offset_meters(kBeijing, 5000, 0);
  const std::vector<Trip> single{one};
  const auto od1 = od_matrix(single, grid);
  ASSERT_EQ(od1.counts.size(), 1u);
  EXPECT_EQ(od1.counts.begin()->second, 1u);

  for (int c = 0; c < 150; ++c) {
    std::vector<Trip> trips, reversed;
    for (int i = count(rng); i > 0; --i) {
      Trip t;
      t.origin = offset_meters(kBeijing, coord(rng), coord(rng));
      t.dest = offset_meters(kBeijing, coord(rng), coord(rng));
      trips.push_back(t);
      std::swap(t.origin, t.dest);
      reversed.push_back(t);
    }
    const auto od = od_matrix(trips, grid);
    const auto rev = od_matrix(reversed, grid);
    std::uint64_t total = 0;
    for (const auto& [pair, n] : od.counts) {
      total += n;
      EXPECT_EQ(rev.counts.at({pair.second, pair.first}), n);
    }
    EXPECT_EQ(total, trips.size());
    EXPECT_EQ(rev.counts.size(), od.counts.size());
  }
}

TEST(OdMatrix, CsvLayout) {
  const auto grid = make_zone_grid(square_city(10000), 3000);
  Trip t;
  t.origin = offset_meters(kBeijing, -9500, -9500);
  t.dest = offset_meters(kBeijing, -9500 + 3100, -9500);
  const std::vector<Trip> trips{t, t};
  EXPECT_EQ(format_od_csv(od_matrix(trips, grid)), std::string(kOdCsvHeader) + "\n0,0,1,0,2\n");
}

TEST(Config, ResolvesPathsAndRejectsUnknownKeys) {
  const nlohmann::json j = {{"inputs", {{"gps", "gps.csv"}, {"nodes", "n.csv"}, {"edges", "/abs/e.csv"}, {"pois", "p.geojson"}}},
                            {"params", {{"k", 6}, {"method", "thakur"}, {"road_widths_m", {{"motorway", 40}}}}},
                            {"output", "out"},
                            {"threads", 2}};
  const auto c = PipelineConfig::from_json(j, "/data/run");
  EXPECT_EQ(c.inputs.gps, std::filesystem::path("/data/run/gps.csv"));
  EXPECT_EQ(c.inputs.edges, std::filesystem::path("/abs/e.csv"));
  EXPECT_EQ(c.output, std::filesystem::path("/data/run/out"));
  EXPECT_EQ(c.params.k, 6u);
  EXPECT_EQ(c.params.method, "thakur");
  EXPECT_EQ(c.params.filter.widths.of(RoadClass::motorway), 40.0);
  EXPECT_EQ(c.threads, 2u);

  auto bad = j;
  bad["params"]["kk"] = 3;
  EXPECT_THROW(PipelineConfig::from_json(bad, "/"), InputError);
  bad = j;
  bad["params"]["method"] = "magic";
  EXPECT_THROW(PipelineConfig::from_json(bad, "/"), InputError);
  bad = j;
  bad["params"]["hotspot_cell_m"] = -1;
  EXPECT_THROW(PipelineConfig::from_json(bad, "/").validate(), InputError);
}

TEST(Stage, NamesRoundTrip) {
  for (int i = 0; i <= static_cast<int>(Stage::aggregates); ++i) {
    const auto s = static_cast<Stage>(i);
    EXPECT_EQ(parse_stage(to_string(s)), s);
  }
  EXPECT_FALSE(parse_stage("nope"));
}

TEST(Pipeline, EndToEndRecoversTruth) {
  Workspace w(pipeline_scenario());
  const auto r = run_pipeline(w.config);
  const auto& v = r.summary.at("validation");
  EXPECT_GE(v.at("recall").get<double>(), 0.9);
  EXPECT_GE(v.at("precision").get<double>(), 0.9);
  for (const char* f : {"trajectories.csv", "stops.csv", "thresholds.json", "calibration.json", "ends_identified.geojson",
                        "ends.geojson", "trips.csv", "chains.csv", "patterns.csv", "hotspots.csv", "od_matrix.csv",
                        "summary.json", "validation.csv", "manifest.json"}) {
    EXPECT_TRUE(std::filesystem::exists(w.config.output / f)) << f;
  }
}

TEST(Pipeline, SummaryCountsAgree) {
  Workspace w(pipeline_scenario());
  const auto r = run_pipeline(w.config);
  const auto ends = load_ends_geojson(w.config.output / "ends.geojson");
  std::map<std::string, std::size_t> kept;
  std::size_t all_kept = 0;
  for (const auto& e : ends) {
    if (e.kept()) ++kept[e.truck_id], ++all_kept;
  }
  std::size_t want_trips = 0;
  for (const auto& [id, n] : kept) want_trips += n - 1;
  const auto& st = r.summary.at("stages");
  EXPECT_EQ(st.at("trips").at("trips").get<std::size_t>(), want_trips);
  EXPECT_EQ(load_trips_csv(w.config.output / "trips.csv").size(), want_trips);
  EXPECT_EQ(st.at("filter").at("kept").get<std::size_t>(), all_kept);
  EXPECT_EQ(st.at("filter").at("kept").get<std::size_t>() + st.at("filter").at("removed_on_road").get<std::size_t>() +
                st.at("filter").at("removed_no_poi").get<std::size_t>(),
            ends.size());
  const auto& v = r.summary.at("validation");
  EXPECT_EQ(v.at("na").get<std::size_t>() + v.at("nm").get<std::size_t>(), all_kept);
  EXPECT_EQ(r.summary.at("time_threshold_ladder_s").size(), st.at("thresholds").at("levels").get<std::size_t>());
}

TEST(Pipeline, RerunIsByteIdenticalAndCached) {
  Workspace w(pipeline_scenario());
  const auto first = run_pipeline(w.config);
  const auto bytes = testsupport::snapshot(w.config.output);
  const auto second = run_pipeline(w.config);
  EXPECT_EQ(testsupport::snapshot(w.config.output), bytes);
  EXPECT_TRUE(first.cached.empty());
  EXPECT_GE(second.cached.size(), 8u);

  // A fresh directory with more threads writes the same bytes.
  PipelineConfig other = w.config;
  other.output = w.dir / "out-threads";
  other.threads = 4;
  run_pipeline(other);
  EXPECT_EQ(testsupport::snapshot(other.output), bytes);
}

TEST(Pipeline, ParameterChangeInvalidatesDownstreamOnly) {
  Workspace w(pipeline_scenario());
  run_pipeline(w.config);
  PipelineConfig changed = w.config;
  changed.params.dbscan_eps_m = 250.0;
  const auto r = run_pipeline(changed);
  const std::vector<Stage> cached = r.cached;
  EXPECT_NE(std::find(cached.begin(), cached.end(), Stage::identify), cached.end());
  EXPECT_EQ(std::find(cached.begin(), cached.end(), Stage::chains), cached.end());
}

TEST(Pipeline, UntilStopsEarly) {
  Workspace w(pipeline_scenario());
  RunOptions o;
  o.until = Stage::stops;
  const auto r = run_pipeline(w.config, o);
  EXPECT_TRUE(std::filesystem::exists(w.config.output / "stops.csv"));
  EXPECT_FALSE(std::filesystem::exists(w.config.output / "ends.geojson"));
  EXPECT_EQ(r.ran.back(), Stage::stops);
}

TEST(Pipeline, MissingEdgesNamesRoadnet) {
  Workspace w(pipeline_scenario());
  std::filesystem::remove(w.dir / "edges.csv");
  try {
    run_pipeline(w.config);
    FAIL() << "expected a stage error";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), Stage::roadnet);
    EXPECT_TRUE(e.input());
    EXPECT_NE(std::string(e.what()).find("roadnet"), std::string::npos);
  }
}

TEST(Pipeline, CorruptCacheIsRecomputed) {
  Workspace w(pipeline_scenario());
  run_pipeline(w.config);
  const auto bytes = testsupport::snapshot(w.config.output);
  testsupport::spit(w.config.output / "stops.csv", "garbage\n");
  const auto r = run_pipeline(w.config);
  EXPECT_NE(std::find(r.ran.begin(), r.ran.end(), Stage::stops), r.ran.end());
  EXPECT_EQ(testsupport::snapshot(w.config.output), bytes);
}
