#include "tripends/stops.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

#include <fmt/format.h>

#include "tripends/csv.hpp"
#include "tripends/error.hpp"

namespace tripends {

SpeedHistogram::SpeedHistogram(double bin_width_kmh, double min_cover_kmh)
    : bin_width_(bin_width_kmh) {
  if (!(bin_width_kmh > 0.0)) throw std::invalid_argument("histogram bin width must be positive");
  counts_.assign(static_cast<std::size_t>(std::ceil(min_cover_kmh / bin_width_kmh)), 0);
}

void SpeedHistogram::add(double speed_kmh, std::uint64_t count) {
  if (!(speed_kmh >= 0.0) || !std::isfinite(speed_kmh)) return;
  const auto bin = static_cast<std::size_t>(speed_kmh / bin_width_);
  if (bin >= counts_.size()) counts_.resize(bin + 1, 0);
  counts_[bin] += count;
  total_ += count;
}

void SpeedHistogram::merge(const SpeedHistogram& other) {
  if (other.bin_width_ != bin_width_) throw std::invalid_argument("histogram bin widths differ");
  if (other.counts_.size() > counts_.size()) counts_.resize(other.counts_.size(), 0);
  for (std::size_t i = 0; i < other.counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
}

SpeedHistogram SpeedHistogram::from_counts(double bin_width_kmh, std::vector<std::uint64_t> counts) {
  SpeedHistogram h(bin_width_kmh, 0.0);
  h.counts_ = std::move(counts);
  h.total_ = 0;
  for (auto c : h.counts_) h.total_ += c;
  return h;
}

SpeedThreshold derive_speed_threshold(const SpeedHistogram& hist,
                                      const SpeedThresholdOptions& options) {
  if (hist.total() == 0) throw DegenerateInput("speed histogram is empty");
  if (hist.coverage() + 1e-9 < 30.0) throw std::invalid_argument("speed histogram must cover [0, 30] km/h");
  if (options.smoothing_window < 1 || options.smoothing_window % 2 == 0) {
    throw std::invalid_argument("smoothing window must be a positive odd bin count");
  }

  const auto& counts = hist.counts();
  const std::size_t n = counts.size();
  const auto half = static_cast<std::size_t>(options.smoothing_window / 2);
  if (n < 2 * half + 3) return {options.fallback_kmh, true};

  // Window sums rather than means keep everything in exact integers, so
  // scaling all counts never reorders bins. Only bins with a full window are
  // defined: [half, n - 1 - half].
  const std::size_t lo = half;
  const std::size_t hi = n - 1 - half;
  std::vector<std::uint64_t> smooth(n, 0);
  for (std::size_t i = lo; i <= hi; ++i) {
    std::uint64_t s = 0;
    for (std::size_t j = i - half; j <= i + half; ++j) s += counts[j];
    smooth[i] = s;
  }

  std::optional<std::size_t> best;
  std::size_t l = lo + 1;
  while (l < hi) {
    std::size_t r = l;
    while (r + 1 <= hi && smooth[r + 1] == smooth[l]) ++r;
    const bool is_min = r + 1 <= hi && smooth[l - 1] > smooth[l] && smooth[r + 1] > smooth[l];
    const double center = hist.bin_center(l);
    if (is_min && center > 0.0 && center <= options.search_max_kmh) {
      if (!best || smooth[l] < smooth[*best]) best = l;
    }
    l = r + 1;
  }

  if (!best) return {options.fallback_kmh, true};
  return {hist.bin_center(*best), false};
}

std::vector<IntervalSpeed> interval_speeds(const Trajectory& traj) {
  std::vector<IntervalSpeed> out;
  if (traj.size() < 2) return out;
  out.reserve(traj.size() - 1);
  for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
    const auto& a = traj[i];
    const auto& b = traj[i + 1];
    const double dt = static_cast<double>(b.timestamp - a.timestamp);
    out.push_back({i, haversine(a.position(), b.position()) / dt * 3.6});
  }
  return out;
}

void accumulate_speeds(SpeedHistogram& hist, const Trajectory& traj) {
  for (const auto& s : interval_speeds(traj)) hist.add(s.kmh);
}

std::vector<Stop> detect_stops(const Trajectory& traj, double v_thresh_kmh) {
  if (!(v_thresh_kmh > 0.0)) throw std::invalid_argument("speed threshold must be positive");
  std::vector<Stop> stops;
  const auto speeds = interval_speeds(traj);

  auto emit = [&](std::size_t first, std::size_t last) {
    Stop s;
    s.truck_id = traj.truck_id;
    s.first_index = first;
    s.last_index = last;
    s.n_points = last - first + 1;
    double lon = 0.0, lat = 0.0;
    for (std::size_t k = first; k <= last; ++k) {
      lon += traj[k].lon;
      lat += traj[k].lat;
    }
    s.lon = lon / static_cast<double>(s.n_points);
    s.lat = lat / static_cast<double>(s.n_points);
    s.start_time = traj[first].timestamp;
    s.end_time = traj[last].timestamp;
    s.dwell = s.end_time - s.start_time;
    stops.push_back(std::move(s));
  };

  std::size_t i = 0;
  while (i < speeds.size()) {
    if (speeds[i].kmh >= v_thresh_kmh) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < speeds.size() && speeds[j + 1].kmh < v_thresh_kmh) ++j;
    emit(i, j + 1);
    i = j + 1;
  }
  return stops;
}

std::string format_stops_csv(const std::vector<Stop>& stops) {
  std::string out = kStopsCsvHeader;
  out += '\n';
  for (const auto& s : stops) {
    fmt::format_to(std::back_inserter(out), "{},{},{},{},{},{},{}\n", s.truck_id, s.lon,
                   s.lat, s.start_time, s.end_time, s.dwell, s.n_points);
  }
  return out;
}

std::vector<Stop> parse_stops_csv(const std::filesystem::path& path) {
  std::vector<Stop> stops;
  csv::for_each_row(csv::read_file(path), kStopsCsvHeader, path, [&](std::size_t line, const auto& f) {
    auto bad = [&] { return InputError(fmt::format("{}:{}: malformed stop row", path.string(), line)); };
    if (f.size() != 7) throw bad();
    Stop s;
    s.truck_id = std::string(f[0]);
    auto lon = csv::parse_number<double>(f[1]);
    auto lat = csv::parse_number<double>(f[2]);
    auto st = csv::parse_number<std::int64_t>(f[3]);
    auto et = csv::parse_number<std::int64_t>(f[4]);
    auto dw = csv::parse_number<std::int64_t>(f[5]);
    auto np = csv::parse_number<std::size_t>(f[6]);
    if (!lon || !lat || !st || !et || !dw || !np) throw bad();
    s.lon = *lon;
    s.lat = *lat;
    s.start_time = *st;
    s.end_time = *et;
    s.dwell = *dw;
    s.n_points = *np;
    stops.push_back(std::move(s));
  });
  return stops;
}

void attach_stop_indices(const Trajectory& traj, std::vector<Stop>& stops) {
  auto index_of = [&](std::int64_t t) -> std::size_t {
    auto it = std::lower_bound(traj.records.begin(), traj.records.end(), t,
                               [](const GpsRecord& r, std::int64_t v) { return r.timestamp < v; });
    if (it == traj.records.end() || it->timestamp != t) {
      throw InputError(fmt::format("stop time {} of truck {} matches no fix", t, traj.truck_id));
    }
    return static_cast<std::size_t>(it - traj.records.begin());
  };
  for (auto& s : stops) {
    s.first_index = index_of(s.start_time);
    s.last_index = index_of(s.end_time);
  }
}

}  // namespace tripends
