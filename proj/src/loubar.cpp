#include "tripends/loubar.hpp"

#include <algorithm>
#include <cmath>

#include "tripends/error.hpp"

namespace tripends {

std::vector<double> ThresholdLadder::thresholds() const {
  std::vector<double> out;
  out.reserve(levels.size());
  for (const auto& l : levels) out.push_back(l.threshold_s);
  return out;
}

ThresholdLadder ThresholdLadder::from_thresholds(std::span<const double> seconds) {
  ThresholdLadder ladder;
  for (double s : seconds) ladder.levels.push_back({s, 0.0, 0});
  return ladder;
}

LorenzCurve lorenz(std::span<const double> dwells) {
  if (dwells.size() < 2) throw DegenerateInput("Lorenz curve needs at least two dwells");
  std::vector<double> sorted(dwells.begin(), dwells.end());
  std::sort(sorted.begin(), sorted.end());
  double total = 0.0;
  for (double d : sorted) total += d;
  if (!(total > 0.0)) throw DegenerateInput("all dwells are zero");

  const double n = static_cast<double>(sorted.size());
  LorenzCurve curve;
  curve.points.reserve(sorted.size() + 1);
  curve.points.push_back({0.0, 0.0});
  double cum = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cum += sorted[k];
    curve.points.push_back({static_cast<double>(k + 1) / n, cum / total});
  }
  // Pin the end exactly; the running sum already equals total.
  curve.points.back() = {1.0, 1.0};
  return curve;
}

double loubar_fstar(const LorenzCurve& curve) {
  const auto& p = curve.points;
  if (p.size() < 2) throw DegenerateInput("Lorenz curve needs at least two points");
  const LorenzPoint& prev = p[p.size() - 2];
  const LorenzPoint& last = p.back();
  const double run = last.f - prev.f;
  if (!(run > 0.0)) throw DegenerateInput("Lorenz curve has a vertical final segment");
  const double slope = (last.l - prev.l) / run;
  if (slope <= 1.0) return 0.0;
  const double fstar = 1.0 - 1.0 / slope;
  return std::clamp(fstar, 0.0, std::nextafter(1.0, 0.0));
}

ThresholdLadder derive_ladder(std::span<const double> dwells, const LadderOptions& options) {
  if (dwells.empty()) throw DegenerateInput("cannot derive a ladder from an empty dwell set");
  std::vector<double> sorted(dwells.begin(), dwells.end());
  std::sort(sorted.begin(), sorted.end());

  ThresholdLadder ladder;
  std::size_t n = sorted.size();
  while (ladder.size() < options.max_levels) {
    if (n < options.min_population || n < 2) break;
    const std::span<const double> population(sorted.data(), n);
    if (!(population.back() > 0.0)) break;  // nothing but zero dwells left
    const double fstar = loubar_fstar(lorenz(population));
    if (fstar < options.balance_eps) break;

    auto rank = static_cast<std::size_t>(std::ceil(fstar * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    const double threshold = sorted[rank - 1];
    if (!ladder.empty() && threshold >= ladder.levels.back().threshold_s) break;
    if (threshold < options.resolution_s) break;

    ladder.levels.push_back({threshold, fstar, n});
    n = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n), threshold) -
                                 sorted.begin());
  }
  return ladder;
}

}  // namespace tripends
