#include <gtest/gtest.h>

#include <random>
#include <set>

#include "support.hpp"
#include "tripends/error.hpp"
#include "tripends/ingest.hpp"

using namespace tripends;
using testsupport::Fix;
using testsupport::make_traj;

namespace {

const std::string kHeader = std::string(kGpsCsvHeader) + "\n";

CityBoundary square_city(double half_m) {
  CityBoundary b;
  b.polygons.push_back({testsupport::square_ring(testsupport::kBeijing, half_m)});
  return b;
}

// Random walk with injected duplicates, shuffling and teleport spikes.
std::vector<GpsRecord> noisy_records(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(2, 60), step_s(10, 60);
  std::normal_distribution<double> step_m(0.0, 150.0);
  std::bernoulli_distribution spike(0.08), dup(0.05);
  std::vector<Fix> fixes;
  std::int64_t t = 1'700'000'000;
  double e = 0, n = 0;
  for (int i = len(rng); i > 0; --i) {
    t += step_s(rng);
    e += step_m(rng);
    n += step_m(rng);
    if (spike(rng)) {
      fixes.push_back({t, e + 20000.0, n - 15000.0});
    } else {
      fixes.push_back({t, e, n});
    }
    if (dup(rng)) fixes.push_back({t, e + 1.0, n});
  }
  auto recs = make_traj("T", fixes).records;
  std::shuffle(recs.begin(), recs.end(), rng);
  return recs;
}

}  // namespace

TEST(ParseGps, MapsFields) {
  const auto r = parse_gps_text(kHeader + "T1,1526601600,116.40,39.90,42.5,180\n");
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.invalid_rows, 0u);
  const GpsRecord& g = r.records[0];
  EXPECT_EQ(g.truck_id, "T1");
  EXPECT_EQ(g.timestamp, 1526601600);
  EXPECT_DOUBLE_EQ(g.lon, 116.40);
  EXPECT_DOUBLE_EQ(g.lat, 39.90);
  EXPECT_EQ(g.speed, 42.5);
  EXPECT_EQ(g.heading, 180.0);
}

TEST(ParseGps, OutOfRangeLatitudeIsSkipped) {
  const auto r = parse_gps_text(kHeader + "T1,1526601600,116.40,95.0,,\nT1,1526601630,116.40,39.9,,\n");
  EXPECT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.invalid_rows, 1u);
  EXPECT_FALSE(r.records[0].speed.has_value());
}

TEST(ParseGps, HeaderOnlyIsEmpty) {
  const auto r = parse_gps_text(kHeader);
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.invalid_rows, 0u);
}

TEST(ParseGps, MalformedRowsAreTallied) {
  const auto r = parse_gps_text(kHeader + "T1,abc,116.4,39.9,,\nT1,-5,116.4,39.9,,\nT1,10,116.4\n");
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.invalid_rows, 3u);
}

TEST(ParseGps, BadHeaderOrMissingFileThrows) {
  EXPECT_THROW(parse_gps_text("id,time,x,y\nT1,1,2,3\n"), InputError);
  EXPECT_THROW(parse_gps_csv("/nonexistent/gps.csv"), InputError);
}

TEST(ParseGps, FormatRoundTrips) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    auto cleaned = clean_trajectory(noisy_records(rng));
    if (!cleaned) continue;
    cleaned->records.front().speed = 12.25;
    cleaned->records.back().heading = 271.5;
    const auto back = parse_gps_text(format_gps_csv({*cleaned}));
    EXPECT_EQ(back.records, cleaned->records);
  }
}

TEST(CleanTrajectory, CollapsesDuplicates) {
  auto recs = make_traj("T", {{100, 0, 0}, {100, 5, 0}, {130, 10, 0}}).records;
  const auto t = clean_trajectory(recs);
  ASSERT_TRUE(t);
  ASSERT_EQ(t->size(), 2u);
  EXPECT_EQ((*t)[0].timestamp, 100);
  EXPECT_EQ((*t)[0].lon, recs[0].lon);
}

TEST(CleanTrajectory, RemovesTeleportSpike) {
  const auto recs = make_traj("T", {{0, 0, 0}, {30, 100, 0}, {60, 10100, 0}, {90, 200, 0}, {120, 300, 0}}).records;
  const auto t = clean_trajectory(recs);
  ASSERT_TRUE(t);
  ASSERT_EQ(t->size(), 4u);
  for (const auto& r : t->records) EXPECT_NE(r.timestamp, 60);
}

TEST(CleanTrajectory, CleanInputIsUnchanged) {
  const auto traj = make_traj("T", {{0, 0, 0}, {30, 200, 0}, {60, 400, 0}, {90, 400, 50}});
  const auto t = clean_trajectory(traj.records);
  ASSERT_TRUE(t);
  EXPECT_EQ(*t, traj);
}

TEST(CleanTrajectory, TooFewSurvivorsIsEmpty) {
  EXPECT_FALSE(clean_trajectory({}));
  EXPECT_FALSE(clean_trajectory(make_traj("T", {{0, 0, 0}, {0, 1, 0}}).records));
}

TEST(CleanTrajectory, IdempotentAndWithinSpeedLimit) {
  std::mt19937_64 rng(6);
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    const auto once = clean_trajectory(noisy_records(rng));
    if (!once) continue;
    ++checked;
    const auto twice = clean_trajectory(once->records);
    ASSERT_TRUE(twice);
    EXPECT_EQ(*twice, *once);
    for (std::size_t k = 1; k < once->size(); ++k) {
      const auto& a = (*once)[k - 1];
      const auto& b = (*once)[k];
      ASSERT_LT(a.timestamp, b.timestamp);
      EXPECT_LE(haversine(a.position(), b.position()) / static_cast<double>(b.timestamp - a.timestamp) * 3.6,
                120.0 + 1e-9);
    }
  }
  EXPECT_GE(checked, 100);
}

TEST(ClipToCity, InsideOutsideAndSplit) {
  const CityBoundary city = square_city(5000);
  const auto inside = make_traj("T", {{0, 0, 0}, {30, 100, 0}, {60, 200, 0}});
  auto clipped = clip_to_city(inside, city);
  ASSERT_EQ(clipped.size(), 1u);
  EXPECT_EQ(clipped[0], inside);

  const auto outside = make_traj("T", {{0, 9000, 0}, {30, 9100, 0}});
  EXPECT_TRUE(clip_to_city(outside, city).empty());

  std::vector<Fix> fixes;
  for (int i = 0; i < 13; ++i) {
    const bool out = i >= 5 && i < 8;
    fixes.push_back({i * 30, out ? 7000.0 : 100.0 * i, 0});
  }
  clipped = clip_to_city(make_traj("T", fixes), city);
  ASSERT_EQ(clipped.size(), 2u);
  EXPECT_EQ(clipped[0].size(), 5u);
  EXPECT_EQ(clipped[1].size(), 5u);
  EXPECT_EQ(clipped[1][0].timestamp, 240);
}

TEST(ClipToCity, CoversInsideRecordsExactlyOnce) {
  const CityBoundary city = square_city(3000);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> coord(-5000, 5000);
  std::uniform_int_distribution<int> len(2, 40);
  for (int c = 0; c < 200; ++c) {
    std::vector<Fix> fixes;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) fixes.push_back({i * 30, coord(rng), coord(rng)});
    const auto traj = make_traj("T", fixes);
    const auto parts = clip_to_city(traj, city);

    std::multiset<std::int64_t> emitted;
    for (const auto& p : parts) {
      ASSERT_GE(p.size(), 2u);
      for (const auto& r : p.records) {
        EXPECT_TRUE(city.contains(r.position()));
        emitted.insert(r.timestamp);
      }
    }
    // Expected: inside fixes whose inside-run has length >= 2.
    std::multiset<std::int64_t> expected;
    std::size_t i = 0;
    while (i < traj.size()) {
      if (!city.contains(traj[i].position())) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j + 1 < traj.size() && city.contains(traj[j + 1].position())) ++j;
      if (j > i) {
        for (std::size_t k = i; k <= j; ++k) expected.insert(traj[k].timestamp);
      }
      i = j + 1;
    }
    EXPECT_EQ(emitted, expected);
    std::set<std::int64_t> unique(emitted.begin(), emitted.end());
    EXPECT_EQ(unique.size(), emitted.size());
  }
}

TEST(Boundary, ParsesPolygonFeature) {
  const std::string text = R"({"type":"Feature","properties":{"name":"X"},"geometry":{"type":"Polygon",
    "coordinates":[[[116,39],[117,39],[117,40],[116,40],[116,39]]]}})";
  const auto b = parse_boundary_geojson(text);
  EXPECT_EQ(b.name, "X");
  EXPECT_TRUE(b.contains({116.5, 39.5}));
  EXPECT_FALSE(b.contains({118, 39.5}));
}

TEST(Boundary, RejectsOpenRings) {
  EXPECT_THROW(validate_ring({{0, 0}, {1, 0}, {1, 1}, {0, 1}}), InputError);
  EXPECT_THROW(validate_ring({{0, 0}, {1, 0}, {0, 0}}), InputError);
  const std::string open = R"({"type":"Polygon","coordinates":[[[116,39],[117,39],[117,40],[116,40]]]})";
  EXPECT_THROW(parse_boundary_geojson(open), InputError);
}

TEST(GroupByTruck, BucketsById) {
  const auto a = make_traj("A", {{0, 0, 0}, {30, 0, 0}}).records;
  const auto b = make_traj("B", {{0, 0, 0}}).records;
  std::vector<GpsRecord> all{a[0], b[0], a[1]};
  const auto groups = group_by_truck(all);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups.at("A").size(), 2u);
  EXPECT_EQ(groups.at("B").size(), 1u);
}
