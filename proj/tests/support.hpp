// Shared fixtures and reference implementations for the test binaries.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tripends/chains.hpp"
#include "tripends/geo.hpp"
#include "tripends/identify.hpp"
#include "tripends/ingest.hpp"
#include "tripends/loubar.hpp"
#include "tripends/roadnet.hpp"

namespace testsupport {

using namespace tripends;

inline constexpr LonLat kBeijing{116.40, 39.90};

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("tripends-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

/// Every regular file under dir, keyed by relative path.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[std::filesystem::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return files;
}

struct Fix {
  std::int64_t t;
  double east_m;
  double north_m;
};

/// Trajectory from offsets in meters around an origin.
inline Trajectory make_traj(const std::string& id, const std::vector<Fix>& fixes, LonLat origin = kBeijing) {
  Trajectory t{id, {}};
  for (const auto& f : fixes) {
    const LonLat p = offset_meters(origin, f.east_m, f.north_m);
    t.records.push_back({id, f.t, p.lon, p.lat, std::nullopt, std::nullopt});
  }
  return t;
}

/// Builds a 30 s-sampled trajectory from stays and straight drives.
class Script {
 public:
  explicit Script(std::string id, double east = 0, double north = 0, std::int64_t t0 = 1'704'096'000)
      : id_(std::move(id)), e_(east), n_(north), t_(t0) {
    fixes_.push_back({t_, e_, n_});
  }

  Script& stay(std::int64_t seconds) {
    for (std::int64_t s = 30; s <= seconds; s += 30) fixes_.push_back({t_ += 30, e_, n_});
    return *this;
  }

  Script& drive(double east, double north, double kmh = 36.0) {
    const double dist = std::hypot(east - e_, north - n_);
    const auto steps = std::max<long>(1, std::lround(dist / (kmh / 3.6 * 30.0)));
    const double e0 = e_, n0 = n_;
    for (long i = 1; i <= steps; ++i) {
      const double f = static_cast<double>(i) / static_cast<double>(steps);
      fixes_.push_back({t_ += 30, e0 + f * (east - e0), n0 + f * (north - n0)});
    }
    e_ = east;
    n_ = north;
    return *this;
  }

  Trajectory build(LonLat origin = kBeijing) const { return make_traj(id_, fixes_, origin); }

 private:
  std::string id_;
  double e_, n_;
  std::int64_t t_;
  std::vector<Fix> fixes_;
};

/// Square ring of half-size h meters around c, closed.
inline Ring square_ring(LonLat c, double h) {
  return {offset_meters(c, -h, -h), offset_meters(c, h, -h), offset_meters(c, h, h), offset_meters(c, -h, h),
          offset_meters(c, -h, -h)};
}

/// rows x cols lattice with the given spacing; node id = 1 + r * cols + c.
inline RoadGraph lattice_nodes(int rows, int cols, double spacing_m, LonLat origin = kBeijing) {
  RoadGraph g;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      g.add_node(1 + r * cols + c, offset_meters(origin, c * spacing_m, r * spacing_m));
    }
  }
  return g;
}

/// Bidirectional lattice with uniform edge lengths.
inline RoadGraph lattice(int rows, int cols, double spacing_m, RoadClass cls = RoadClass::primary,
                         LonLat origin = kBeijing) {
  RoadGraph g = lattice_nodes(rows, cols, spacing_m, origin);
  EdgeId id = 1;
  auto link = [&](NodeId a, NodeId b) {
    g.add_edge(id++, a, b, spacing_m, cls);
    g.add_edge(id++, b, a, spacing_m, cls);
  };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const NodeId n = 1 + r * cols + c;
      if (c + 1 < cols) link(n, n + 1);
      if (r + 1 < rows) link(n, n + cols);
    }
  }
  return g;
}

// --- reference implementations -------------------------------------------------------

namespace oracle {

/// Loubar ladder written straight from the definition, without shared code.
inline std::vector<double> ladder(std::vector<double> dwells, std::size_t max_levels = 10, double eps = 0.01,
                                  std::size_t min_population = 10, double resolution_s = 30.0) {
  std::vector<double> out;
  std::sort(dwells.begin(), dwells.end());
  while (out.size() < max_levels && dwells.size() >= min_population && dwells.size() >= 2) {
    const std::size_t n = dwells.size();
    double total = 0.0;
    for (double d : dwells) total += d;
    if (!(total > 0.0)) break;
    double before_last = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) before_last += dwells[i];
    const double f0 = static_cast<double>(n - 1) / static_cast<double>(n);
    const double l0 = before_last / total;
    const double slope = (1.0 - l0) / (1.0 - f0);
    double fstar = slope <= 1.0 ? 0.0 : 1.0 - 1.0 / slope;
    fstar = std::min(fstar, std::nextafter(1.0, 0.0));
    if (fstar < eps) break;
    long rank = static_cast<long>(std::ceil(fstar * static_cast<double>(n)));
    rank = std::clamp<long>(rank, 1, static_cast<long>(n));
    const double threshold = dwells[static_cast<std::size_t>(rank - 1)];
    if (!out.empty() && threshold >= out.back()) break;
    if (threshold < resolution_s) break;
    out.push_back(threshold);
    std::vector<double> rest;
    for (double d : dwells) {
      if (d < threshold) rest.push_back(d);
    }
    dwells = std::move(rest);
  }
  return out;
}

/// Textbook DBSCAN with an O(n^2) region query.
inline std::vector<int> dbscan(const std::vector<LonLat>& pts, double eps, std::size_t min_pts) {
  const std::size_t n = pts.size();
  constexpr int undefined = -2;
  std::vector<int> label(n, undefined);
  auto region = [&](std::size_t p) {
    std::vector<std::size_t> out;
    for (std::size_t q = 0; q < n; ++q) {
      if (haversine(pts[p], pts[q]) <= eps) out.push_back(q);
    }
    return out;
  };
  int c = -1;
  for (std::size_t p = 0; p < n; ++p) {
    if (label[p] != undefined) continue;
    auto nb = region(p);
    if (nb.size() < min_pts) {
      label[p] = -1;
      continue;
    }
    ++c;
    label[p] = c;
    std::vector<std::size_t> seeds;
    for (auto q : nb) {
      if (q != p) seeds.push_back(q);
    }
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const std::size_t q = seeds[i];
      if (label[q] == -1) label[q] = c;
      if (label[q] != undefined) continue;
      label[q] = c;
      auto nq = region(q);
      if (nq.size() >= min_pts) seeds.insert(seeds.end(), nq.begin(), nq.end());
    }
  }
  return label;
}

/// Same partition up to relabeling, with noise matching noise.
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] == -1) != (b[i] == -1)) return false;
    if (a[i] == -1) continue;
    auto [x, fresh_x] = ab.emplace(a[i], b[i]);
    auto [y, fresh_y] = ba.emplace(b[i], a[i]);
    if (x->second != b[i] || y->second != a[i]) return false;
  }
  return true;
}

struct SimplePath {
  std::vector<std::size_t> edges;  // edge indices
  double length = 0.0;
};

/// Every simple path from src to dst, by depth-first enumeration.
inline std::vector<SimplePath> all_simple_paths(const RoadGraph& g, std::size_t src, std::size_t dst) {
  std::vector<SimplePath> out;
  std::vector<char> on(g.nodes().size(), 0);
  SimplePath cur;
  std::function<void(std::size_t)> go = [&](std::size_t u) {
    if (u == dst) {
      out.push_back(cur);
      return;
    }
    on[u] = 1;
    for (auto ei : g.out_edges(u)) {
      const auto& e = g.edges()[ei];
      if (on[e.to]) continue;
      cur.edges.push_back(ei);
      cur.length += e.length_m;
      go(e.to);
      cur.length -= e.length_m;
      cur.edges.pop_back();
    }
    on[u] = 0;
  };
  go(src);
  return out;
}

/// Shortest simple-path length, infinity when unreachable.
inline double shortest_length(const RoadGraph& g, std::size_t src, std::size_t dst) {
  if (src == dst) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : all_simple_paths(g, src, dst)) best = std::min(best, p.length);
  return best;
}

struct CalibrationScan {
  std::size_t n = 0;
  std::vector<double> mean;
};

/// Mean SSI per order over the trips that produced that order; argmax with
/// ties to the smaller order.
inline CalibrationScan calibration_scan(const std::vector<CalibrationTrip>& trips, const RoadGraph& g,
                                        std::size_t k, double max_snap_m = 2000.0) {
  std::vector<double> sum(k, 0.0);
  std::vector<std::size_t> cnt(k, 0);
  for (const auto& t : trips) {
    const NodeHit a = snap_to_node_scan(g, t.origin);
    const NodeHit b = snap_to_node_scan(g, t.dest);
    if (a.distance_m > max_snap_m || b.distance_m > max_snap_m) continue;
    const auto paths = k_shortest_paths(g, a.id, b.id, k);
    for (std::size_t i = 0; i < paths.size(); ++i) {
      const double x = t.actual_length_m;
      const double y = paths[i].length_m;
      sum[i] += (x + y) > 0 ? 2.0 * std::min(x, y) / (x + y) : 1.0;
      ++cnt[i];
    }
  }
  CalibrationScan out;
  double best = -1.0;
  for (std::size_t i = 0; i < k; ++i) {
    out.mean.push_back(cnt[i] ? sum[i] / static_cast<double>(cnt[i]) : std::nan(""));
    if (cnt[i] && out.mean[i] > best + 1e-12) {
      best = out.mean[i];
      out.n = i + 1;
    }
  }
  return out;
}

}  // namespace oracle
}  // namespace testsupport
