#include "tripends/chains.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include <fmt/format.h>

#include "tripends/csv.hpp"
#include "tripends/error.hpp"

namespace tripends {

std::vector<Trip> extract_trips(std::span<const TripEnd> ends, const Trajectory& traj) {
  std::vector<Trip> trips;
  std::optional<std::size_t> prev;
  for (std::size_t i = 0; i < ends.size(); ++i) {
    if (!ends[i].kept()) continue;
    if (prev) {
      const TripEnd& o = ends[*prev];
      const TripEnd& d = ends[i];
      Trip t;
      t.truck_id = o.truck_id;
      t.origin_index = *prev;
      t.dest_index = i;
      t.origin = o.position();
      t.dest = d.position();
      t.depart = o.depart_time;
      t.arrive = d.arrive_time;
      t.straight_line_m = haversine(t.origin, t.dest);
      t.path_length_m = path_length(traj, o.last_index, d.first_index);
      trips.push_back(std::move(t));
    }
    prev = i;
  }
  return trips;
}

// --- DBSCAN ------------------------------------------------------------------------

std::vector<int> dbscan_cluster(std::span<const LonLat> points, double eps_m, std::size_t min_pts) {
  if (!(eps_m > 0.0)) throw std::invalid_argument("DBSCAN eps must be positive");
  if (min_pts < 1) throw std::invalid_argument("DBSCAN min_pts must be at least 1");
  const std::size_t n = points.size();
  std::vector<int> label(n, kNoise);
  if (n == 0) return label;

  // Bucket points on an eps-sized grid; neighbours lie in the 3x3 block (one
  // extra ring absorbs projection error).
  double lon = 0, lat = 0;
  for (const auto& p : points) {
    lon += p.lon;
    lat += p.lat;
  }
  const LocalProjection proj({lon / static_cast<double>(n), lat / static_cast<double>(n)});
  std::map<std::pair<long, long>, std::vector<std::size_t>> grid;
  std::vector<std::pair<long, long>> cell(n);
  for (std::size_t i = 0; i < n; ++i) {
    const XY xy = proj.forward(points[i]);
    cell[i] = {static_cast<long>(std::floor(xy.x / eps_m)), static_cast<long>(std::floor(xy.y / eps_m))};
    grid[cell[i]].push_back(i);
  }
  auto region = [&](std::size_t i) {
    std::vector<std::size_t> out;
    for (long dx = -2; dx <= 2; ++dx) {
      for (long dy = -2; dy <= 2; ++dy) {
        auto it = grid.find({cell[i].first + dx, cell[i].second + dy});
        if (it == grid.end()) continue;
        for (std::size_t j : it->second) {
          if (haversine(points[i], points[j]) <= eps_m) out.push_back(j);
        }
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  };

  constexpr int kUnvisited = -2;
  std::fill(label.begin(), label.end(), kUnvisited);
  int next_cluster = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != kUnvisited) continue;
    const auto seeds = region(i);
    if (seeds.size() < min_pts) {
      label[i] = kNoise;
      continue;
    }
    const int c = next_cluster++;
    label[i] = c;
    std::deque<std::size_t> queue(seeds.begin(), seeds.end());
    while (!queue.empty()) {
      const std::size_t j = queue.front();
      queue.pop_front();
      if (label[j] == kNoise) label[j] = c;  // border point
      if (label[j] != kUnvisited) continue;
      label[j] = c;
      const auto nb = region(j);
      if (nb.size() >= min_pts) queue.insert(queue.end(), nb.begin(), nb.end());
    }
  }
  return label;
}

std::vector<int> noise_as_singletons(std::vector<int> labels) {
  int next = 0;
  for (int l : labels) next = std::max(next, l + 1);
  for (int& l : labels) {
    if (l == kNoise) l = next++;
  }
  return labels;
}

// --- travel network ---------------------------------------------------------------------

TravelNetwork build_travel_network(std::span<const Trip> trips, std::span<const TripEnd> ends,
                                   std::span<const int> clusters) {
  if (trips.empty()) throw DegenerateInput("travel network needs at least one trip");
  if (clusters.size() != ends.size()) throw std::invalid_argument("one cluster label per end required");

  int max_id = -1;
  for (int c : clusters) max_id = std::max(max_id, c);
  TravelNetwork net;
  net.nodes.resize(static_cast<std::size_t>(max_id + 1));
  for (std::size_t i = 0; i < net.nodes.size(); ++i) net.nodes[i].id = static_cast<int>(i);

  std::vector<std::pair<double, double>> sums(net.nodes.size(), {0.0, 0.0});
  for (std::size_t i = 0; i < ends.size(); ++i) {
    if (clusters[i] < 0) continue;
    auto& node = net.nodes[static_cast<std::size_t>(clusters[i])];
    node.members.push_back(i);
    node.total_dwell += ends[i].dwell;
    sums[static_cast<std::size_t>(clusters[i])].first += ends[i].lon;
    sums[static_cast<std::size_t>(clusters[i])].second += ends[i].lat;
  }
  for (std::size_t c = 0; c < net.nodes.size(); ++c) {
    const auto m = static_cast<double>(net.nodes[c].members.size());
    if (m > 0) net.nodes[c].centroid = {sums[c].first / m, sums[c].second / m};
  }

  for (const auto& t : trips) {
    const int a = clusters[t.origin_index];
    const int b = clusters[t.dest_index];
    if (a < 0 || b < 0) throw std::invalid_argument("every trip end needs a cluster");
    ++net.nodes[static_cast<std::size_t>(a)].visits;
    ++net.nodes[static_cast<std::size_t>(b)].visits;
    ++net.edges[{a, b}];
  }

  const auto best = std::max_element(net.nodes.begin(), net.nodes.end(), [](const ClusterNode& x, const ClusterNode& y) {
    if (x.visits != y.visits) return x.visits < y.visits;
    if (x.total_dwell != y.total_dwell) return x.total_dwell < y.total_dwell;
    return x.id > y.id;
  });
  net.base = best->id;
  return net;
}

std::vector<int> visit_sequence(std::span<const Trip> trips, std::span<const int> clusters) {
  std::vector<int> seq;
  if (trips.empty()) return seq;
  seq.push_back(clusters[trips.front().origin_index]);
  for (const auto& t : trips) seq.push_back(clusters[t.dest_index]);
  return seq;
}

std::vector<TripChain> split_chains(std::span<const int> visits, int base) {
  std::vector<TripChain> out;
  std::vector<std::size_t> at;
  for (std::size_t i = 0; i < visits.size(); ++i) {
    if (visits[i] == base) at.push_back(i);
  }
  auto slice = [&](std::size_t a, std::size_t b) {
    return std::vector<int>(visits.begin() + static_cast<std::ptrdiff_t>(a),
                            visits.begin() + static_cast<std::ptrdiff_t>(b) + 1);
  };
  if (at.empty()) {
    if (!visits.empty()) out.push_back({slice(0, visits.size() - 1), false});
    return out;
  }
  if (at.front() > 0) out.push_back({slice(0, at.front()), false});
  for (std::size_t k = 0; k + 1 < at.size(); ++k) {
    if (at[k + 1] - at[k] > 1) out.push_back({slice(at[k], at[k + 1]), true});
  }
  if (at.back() + 1 < visits.size()) out.push_back({slice(at.back(), visits.size() - 1), false});
  return out;
}

std::string pattern_of(const TripChain& chain, int base) {
  std::map<int, int> label;
  std::string out;
  for (std::size_t i = 0; i < chain.visits.size(); ++i) {
    if (i > 0) out += '-';
    const int v = chain.visits[i];
    if (v == base) {
      out += 'B';
    } else {
      auto [it, inserted] = label.emplace(v, static_cast<int>(label.size()) + 1);
      out += std::to_string(it->second);
    }
  }
  return out;
}

void PatternCounter::merge(const PatternCounter& other) {
  for (const auto& [p, c] : other.counts_) counts_[p] += c;
}

std::size_t PatternCounter::total() const {
  std::size_t t = 0;
  for (const auto& [p, c] : counts_) t += c;
  return t;
}

std::vector<PatternShare> PatternCounter::shares() const {
  const std::size_t t = total();
  if (t == 0) throw std::invalid_argument("no closed chains to tally");
  std::vector<PatternShare> out;
  for (const auto& [p, c] : counts_) out.push_back({p, c, static_cast<double>(c) / static_cast<double>(t)});
  std::stable_sort(out.begin(), out.end(), [](const PatternShare& a, const PatternShare& b) { return a.count > b.count; });
  return out;
}

std::vector<PatternShare> pattern_stats(std::span<const TruckChains> trucks) {
  PatternCounter counter;
  for (const auto& t : trucks) {
    for (std::size_t i = 0; i < t.chains.size(); ++i) {
      if (t.chains[i].closed) counter.add(t.patterns[i]);
    }
  }
  return counter.shares();
}

// --- files -----------------------------------------------------------------------------------

std::string format_trips_csv(std::span<const Trip> trips) {
  std::string out = kTripsCsvHeader;
  out += '\n';
  for (const auto& t : trips) {
    fmt::format_to(std::back_inserter(out), "{},{:.7f},{:.7f},{:.7f},{:.7f},{},{},{:.1f},{:.1f}\n", t.truck_id,
                   t.origin.lon, t.origin.lat, t.dest.lon, t.dest.lat, t.depart, t.arrive, t.straight_line_m,
                   t.path_length_m);
  }
  return out;
}

std::vector<Trip> load_trips_csv(const std::filesystem::path& path) {
  std::vector<Trip> trips;
  csv::for_each_row(csv::read_file(path), kTripsCsvHeader, path, [&](std::size_t line, const auto& f) {
    auto bad = [&] { return InputError(fmt::format("{}:{}: malformed trip row", path.string(), line)); };
    if (f.size() != 9) throw bad();
    Trip t;
    t.truck_id = std::string(f[0]);
    auto ol = csv::parse_number<double>(f[1]);
    auto oa = csv::parse_number<double>(f[2]);
    auto dl = csv::parse_number<double>(f[3]);
    auto da = csv::parse_number<double>(f[4]);
    auto dep = csv::parse_number<std::int64_t>(f[5]);
    auto arr = csv::parse_number<std::int64_t>(f[6]);
    auto sm = csv::parse_number<double>(f[7]);
    auto pm = csv::parse_number<double>(f[8]);
    if (!ol || !oa || !dl || !da || !dep || !arr || !sm || !pm) throw bad();
    t.origin = {*ol, *oa};
    t.dest = {*dl, *da};
    t.depart = *dep;
    t.arrive = *arr;
    t.straight_line_m = *sm;
    t.path_length_m = *pm;
    trips.push_back(std::move(t));
  });
  return trips;
}

std::string format_chains_csv(std::span<const TruckChains> trucks) {
  std::string out = kChainsCsvHeader;
  out += '\n';
  for (const auto& t : trucks) {
    for (std::size_t i = 0; i < t.chains.size(); ++i) {
      fmt::format_to(std::back_inserter(out), "{},{},{},{}\n", t.truck_id, i, t.patterns[i],
                     t.chains[i].closed ? "true" : "false");
    }
  }
  return out;
}

std::string format_patterns_csv(std::span<const PatternShare> shares) {
  std::string out = kPatternsCsvHeader;
  out += '\n';
  for (const auto& s : shares) fmt::format_to(std::back_inserter(out), "{},{},{:.6f}\n", s.pattern, s.count, s.share);
  return out;
}

}  // namespace tripends
