#pragma once

#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "tripends/geo.hpp"
#include "tripends/roadnet.hpp"

namespace tripends {

/// Uniform grid over a local projection of the graph. Nodes go into the cell
/// containing them; edges into every cell their chord's bounding box touches.
class SpatialGrid {
 public:
  SpatialGrid(const RoadGraph& g, double cell_m);

  struct Cell {
    long x = 0;
    long y = 0;
  };

  Cell cell_of(LonLat p) const;

  /// Visits cells ring by ring around p. visit(node_indices, edge_indices) is
  /// called per non-empty cell; after each full ring r, done(r * cell_m) is
  /// asked whether the search may stop (all unseen items are at least that far
  /// in the grid projection).
  template <typename Visit, typename Done>
  void search(LonLat p, Visit&& visit, Done&& done) const;

 private:
  static std::int64_t key(long x, long y) {
    return (static_cast<std::int64_t>(x) << 32) ^ static_cast<std::uint32_t>(y);
  }
  void visit_cell(long x, long y, auto& visit) const {
    auto it = cells_.find(key(x, y));
    if (it != cells_.end()) visit(it->second.nodes, it->second.edges);
  }

  struct Bucket {
    std::vector<std::size_t> nodes;
    std::vector<std::size_t> edges;
  };

  LocalProjection proj_;
  double cell_m_;
  long min_x_ = 0, max_x_ = -1, min_y_ = 0, max_y_ = -1;
  std::unordered_map<std::int64_t, Bucket> cells_;
};

template <typename Visit, typename Done>
void SpatialGrid::search(LonLat p, Visit&& visit, Done&& done) const {
  if (max_x_ < min_x_) return;
  const Cell q = cell_of(p);
  auto gap = [](long v, long lo, long hi) { return v < lo ? lo - v : (v > hi ? v - hi : 0L); };
  const long r0 = std::max(gap(q.x, min_x_, max_x_), gap(q.y, min_y_, max_y_));
  const long rmax = std::max({std::labs(q.x - min_x_), std::labs(q.x - max_x_),
                              std::labs(q.y - min_y_), std::labs(q.y - max_y_)});
  for (long r = r0; r <= rmax; ++r) {
    if (r == 0) {
      visit_cell(q.x, q.y, visit);
    } else {
      for (long dx = -r; dx <= r; ++dx) {
        visit_cell(q.x + dx, q.y - r, visit);
        visit_cell(q.x + dx, q.y + r, visit);
      }
      for (long dy = -r + 1; dy <= r - 1; ++dy) {
        visit_cell(q.x - r, q.y + dy, visit);
        visit_cell(q.x + r, q.y + dy, visit);
      }
    }
    if (done(static_cast<double>(r) * cell_m_)) return;
  }
}

}  // namespace tripends
