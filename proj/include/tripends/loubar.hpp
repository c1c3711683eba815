#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tripends {

struct LorenzPoint {
  double f = 0.0;  // normalized rank
  double l = 0.0;  // normalized cumulative dwell
};

/// Lorenz curve of ascending dwells, starting at (0,0) and ending at (1,1).
struct LorenzCurve {
  std::vector<LorenzPoint> points;
};

/// Throws DegenerateInput when fewer than two dwells are given or they sum to zero.
LorenzCurve lorenz(std::span<const double> dwells);

/// Horizontal-axis intercept of the tangent at (1,1), with the tangent slope
/// taken from the final curve segment. Zero when that slope is <= 1.
double loubar_fstar(const LorenzCurve& curve);

struct LadderLevel {
  double threshold_s = 0.0;
  double fstar = 0.0;
  std::size_t population = 0;  // dwells in play when this level was derived
};

/// Strictly decreasing dwell thresholds, one per Loubar iteration.
struct ThresholdLadder {
  std::vector<LadderLevel> levels;

  std::size_t size() const { return levels.size(); }
  bool empty() const { return levels.empty(); }
  double operator[](std::size_t i) const { return levels[i].threshold_s; }
  std::vector<double> thresholds() const;

  static ThresholdLadder from_thresholds(std::span<const double> seconds);
};

struct LadderOptions {
  std::size_t max_levels = 10;
  double balance_eps = 0.01;
  std::size_t min_population = 10;
  double resolution_s = 30.0;  // sampling interval; no level may go below it
};

/// Iterated Loubar split: each round peels off the dwells at or above the
/// F*-rank value and re-runs on the remainder, until the curve is balanced,
/// the population is too small, the threshold stops decreasing, it falls under
/// the time resolution, or max_levels is hit. Throws DegenerateInput on an
/// empty population.
ThresholdLadder derive_ladder(std::span<const double> dwells, const LadderOptions& options = {});

}  // namespace tripends
