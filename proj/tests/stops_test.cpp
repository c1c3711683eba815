#include <gtest/gtest.h>

#include <cmath>
#include <optional>
#include <random>

#include "support.hpp"
#include "tripends/error.hpp"
#include "tripends/stops.hpp"

using namespace tripends;
using testsupport::Fix;
using testsupport::make_traj;

namespace {

// Smoothed-histogram minimum picked by brute force over every plateau.
std::optional<double> threshold_oracle(const std::vector<std::uint64_t>& counts, double width, int window,
                                       double search_max) {
  const int n = static_cast<int>(counts.size());
  const int h = window / 2;
  std::vector<double> mean(counts.size(), -1.0);
  for (int i = h; i + h < n; ++i) {
    double s = 0;
    for (int j = i - h; j <= i + h; ++j) s += static_cast<double>(counts[static_cast<std::size_t>(j)]);
    mean[static_cast<std::size_t>(i)] = s / window;
  }
  std::optional<int> best;
  for (int l = h + 1; l + h < n; ++l) {
    const auto L = static_cast<std::size_t>(l);
    if (mean[L - 1] == mean[L]) continue;  // not the left end of a plateau
    int r = l;
    while (r + 1 + h < n && mean[static_cast<std::size_t>(r + 1)] == mean[L]) ++r;
    if (r + 1 + h >= n) break;
    const bool minimum = mean[L - 1] > mean[L] && mean[static_cast<std::size_t>(r + 1)] > mean[L];
    const double center = (l + 0.5) * width;
    if (!minimum || center <= 0 || center > search_max) continue;
    if (!best || mean[L] < mean[static_cast<std::size_t>(*best)]) best = l;
  }
  if (!best) return std::nullopt;
  return (*best + 0.5) * width;
}

std::vector<std::uint64_t> valley_counts(double valley_kmh) {
  std::vector<std::uint64_t> c(160, 0);  // 0..80 km/h
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double v = (static_cast<double>(i) + 0.5) * 0.5;
    double y;
    if (v <= 1.0) {
      y = 1000;
    } else if (v <= valley_kmh) {
      y = 1000 - (v - 1.0) / (valley_kmh - 1.0) * 980;
    } else if (v <= 40) {
      y = 20 + (v - valley_kmh) / (40 - valley_kmh) * 780;
    } else {
      y = std::max(0.0, 800 - (v - 40) * 30);
    }
    y = std::max(y, 20 + std::abs(v - valley_kmh) * 200);  // symmetric floor so smoothing does not shift it
    c[i] = static_cast<std::uint64_t>(std::lround(y));
  }
  return c;
}

// Straight drive interleaved with stationary jitter.
Trajectory random_trajectory(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> segs(1, 8), len(2, 20);
  std::uniform_real_distribution<double> speed(0.0, 40.0);
  std::normal_distribution<double> jitter(0.0, 3.0);
  std::bernoulli_distribution still(0.5);
  std::vector<Fix> fixes;
  std::int64_t t = 0;
  double e = 0;
  fixes.push_back({t, e, 0});
  for (int s = segs(rng); s > 0; --s) {
    const bool stationary = still(rng);
    const double v = speed(rng) / 3.6;
    for (int i = len(rng); i > 0; --i) {
      t += 30;
      if (stationary) {
        fixes.push_back({t, e + jitter(rng), jitter(rng)});
      } else {
        e += v * 30;
        fixes.push_back({t, e, 0});
      }
    }
  }
  return make_traj("T", fixes);
}

std::int64_t total_dwell(const std::vector<Stop>& stops) {
  std::int64_t s = 0;
  for (const auto& x : stops) s += x.dwell;
  return s;
}

}  // namespace

TEST(IntervalSpeeds, Examples) {
  const auto still = make_traj("T", {{0, 0, 0}, {30, 0, 0}});
  EXPECT_DOUBLE_EQ(interval_speeds(still)[0].kmh, 0.0);

  const auto moving = make_traj("T", {{0, 0, 0}, {30, 250, 0}, {60, 250, 0}, {90, 300, 0}});
  const auto v = interval_speeds(moving);
  ASSERT_EQ(v.size(), 3u);
  EXPECT_NEAR(v[0].kmh, 30.0, 0.05);
  EXPECT_EQ(v[2].start_index, 2u);
}

TEST(SpeedThreshold, BimodalValley) {
  const auto counts = valley_counts(4.0);
  const auto got = derive_speed_threshold(SpeedHistogram::from_counts(0.5, counts));
  EXPECT_FALSE(got.fallback);
  EXPECT_NEAR(got.kmh, 4.0, 0.5);
  EXPECT_EQ(got.kmh, threshold_oracle(counts, 0.5, 3, 20.0).value());
}

TEST(SpeedThreshold, MonotoneFallsBack) {
  std::vector<std::uint64_t> c(80);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = 1000 - 10 * i;
  const auto got = derive_speed_threshold(SpeedHistogram::from_counts(0.5, c));
  EXPECT_TRUE(got.fallback);
  EXPECT_EQ(got.kmh, 5.0);
}

TEST(SpeedThreshold, EqualValleysPickSmallerSpeed) {
  std::vector<std::uint64_t> c(80, 100);
  c[6] = 10;   // center 3.25 km/h
  c[12] = 10;  // center 6.25 km/h
  const auto got = derive_speed_threshold(SpeedHistogram::from_counts(0.5, c));
  EXPECT_FALSE(got.fallback);
  EXPECT_NEAR(got.kmh, 3.0, 0.5);
}

TEST(SpeedThreshold, RejectsEmptyOrShortHistograms) {
  EXPECT_THROW(derive_speed_threshold(SpeedHistogram()), DegenerateInput);
  EXPECT_THROW(derive_speed_threshold(SpeedHistogram::from_counts(0.5, {1, 2, 3})), std::invalid_argument);
}

TEST(SpeedThreshold, MatchesBruteForceScan) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> count(0, 30), bins(60, 120);
  for (int c = 0; c < 300; ++c) {
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(bins(rng)));
    for (auto& x : counts) x = static_cast<std::uint64_t>(count(rng));
    if (std::all_of(counts.begin(), counts.end(), [](auto x) { return x == 0; })) counts[0] = 1;
    const auto got = derive_speed_threshold(SpeedHistogram::from_counts(0.5, counts));
    const auto want = threshold_oracle(counts, 0.5, 3, 20.0);
    if (want) {
      EXPECT_FALSE(got.fallback);
      EXPECT_EQ(got.kmh, *want);
    } else {
      EXPECT_TRUE(got.fallback);
    }
  }
}

TEST(SpeedThreshold, ScaleConsistent) {
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<int> count(0, 50), scale(2, 1000);
  for (int c = 0; c < 200; ++c) {
    std::vector<std::uint64_t> counts(80);
    for (auto& x : counts) x = static_cast<std::uint64_t>(count(rng)) + 1;
    auto scaled = counts;
    const auto k = static_cast<std::uint64_t>(scale(rng));
    for (auto& x : scaled) x *= k;
    const auto a = derive_speed_threshold(SpeedHistogram::from_counts(0.5, counts));
    const auto b = derive_speed_threshold(SpeedHistogram::from_counts(0.5, scaled));
    EXPECT_EQ(a.kmh, b.kmh);
    EXPECT_EQ(a.fallback, b.fallback);
  }
}

TEST(SpeedHistogram, MergeEqualsJointAccumulation) {
  std::mt19937_64 rng(23);
  SpeedHistogram joint, left, right;
  for (int i = 0; i < 20; ++i) {
    const auto t = random_trajectory(rng);
    accumulate_speeds(joint, t);
    accumulate_speeds(i % 2 ? left : right, t);
  }
  right.merge(left);
  EXPECT_EQ(right.total(), joint.total());
  EXPECT_EQ(right.counts(), joint.counts());
}

TEST(DetectStops, TenStationaryFixesThenMoving) {
  std::vector<Fix> fixes;
  for (int i = 0; i < 10; ++i) fixes.push_back({i * 30, 0, 0});
  for (int i = 10; i < 15; ++i) fixes.push_back({i * 30, (i - 9) * 300.0, 0});
  const auto stops = detect_stops(make_traj("T", fixes), 5.0);
  ASSERT_EQ(stops.size(), 1u);
  EXPECT_EQ(stops[0].n_points, 10u);
  EXPECT_EQ(stops[0].dwell, 270);
  EXPECT_EQ(stops[0].first_index, 0u);
  EXPECT_EQ(stops[0].last_index, 9u);
}

TEST(DetectStops, AllFastIsEmpty) {
  const auto t = make_traj("T", {{0, 0, 0}, {30, 300, 0}, {60, 600, 0}});
  EXPECT_TRUE(detect_stops(t, 5.0).empty());
  EXPECT_THROW(detect_stops(t, 0.0), std::invalid_argument);
}

TEST(DetectStops, OneFastIntervalSplitsTwoStops) {
  const auto t = make_traj("T", {{0, 0, 0}, {30, 0, 0}, {60, 0, 0}, {90, 500, 0}, {120, 500, 0}, {150, 501, 0}});
  const auto stops = detect_stops(t, 5.0);
  ASSERT_EQ(stops.size(), 2u);
  EXPECT_EQ(stops[0].first_index, 0u);
  EXPECT_EQ(stops[0].last_index, 2u);
  EXPECT_EQ(stops[1].first_index, 3u);
  EXPECT_EQ(stops[1].last_index, 5u);
  EXPECT_EQ(stops[1].dwell, 60);
}

TEST(DetectStops, DisjointOrderedAndInsideBoundingBox) {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> thr(0.5, 30.0);
  for (int c = 0; c < 200; ++c) {
    const auto t = random_trajectory(rng);
    const auto stops = detect_stops(t, thr(rng));
    for (std::size_t i = 0; i < stops.size(); ++i) {
      const Stop& s = stops[i];
      EXPECT_GT(s.dwell, 0);
      EXPECT_GE(s.n_points, 2u);
      ASSERT_LT(s.last_index, t.size());
      EXPECT_EQ(s.start_time, t[s.first_index].timestamp);
      EXPECT_EQ(s.end_time, t[s.last_index].timestamp);
      if (i > 0) EXPECT_LT(stops[i - 1].end_time, s.start_time);
      double lo_lon = 1e9, hi_lon = -1e9, lo_lat = 1e9, hi_lat = -1e9;
      for (std::size_t k = s.first_index; k <= s.last_index; ++k) {
        lo_lon = std::min(lo_lon, t[k].lon);
        hi_lon = std::max(hi_lon, t[k].lon);
        lo_lat = std::min(lo_lat, t[k].lat);
        hi_lat = std::max(hi_lat, t[k].lat);
      }
      EXPECT_GE(s.lon, lo_lon - 1e-12);
      EXPECT_LE(s.lon, hi_lon + 1e-12);
      EXPECT_GE(s.lat, lo_lat - 1e-12);
      EXPECT_LE(s.lat, hi_lat + 1e-12);
    }
  }
}

TEST(DetectStops, TotalDwellMonotoneInThreshold) {
  std::mt19937_64 rng(25);
  std::uniform_real_distribution<double> thr(0.5, 40.0);
  for (int c = 0; c < 200; ++c) {
    const auto t = random_trajectory(rng);
    double a = thr(rng), b = thr(rng);
    if (a > b) std::swap(a, b);
    EXPECT_LE(total_dwell(detect_stops(t, a)), total_dwell(detect_stops(t, b)));
  }
}

TEST(StopsCsv, RoundTripsWithIndices) {
  std::mt19937_64 rng(26);
  testsupport::TempDir dir("stops");
  for (int c = 0; c < 20; ++c) {
    const auto t = random_trajectory(rng);
    const auto stops = detect_stops(t, 5.0);
    testsupport::spit(dir / "stops.csv", format_stops_csv(stops));
    auto back = parse_stops_csv(dir / "stops.csv");
    attach_stop_indices(t, back);
    ASSERT_EQ(back.size(), stops.size());
    for (std::size_t i = 0; i < stops.size(); ++i) {
      EXPECT_EQ(back[i].lon, stops[i].lon);
      EXPECT_EQ(back[i].lat, stops[i].lat);
      EXPECT_EQ(back[i].dwell, stops[i].dwell);
      EXPECT_EQ(back[i].first_index, stops[i].first_index);
      EXPECT_EQ(back[i].last_index, stops[i].last_index);
    }
  }
}
