#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>

#include "tripends/roadnet.hpp"

namespace tripends {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

struct IndexPath {
  std::vector<std::size_t> edges;  // edge indices, head to tail
  double length_m = 0.0;
};

/// Buffers reused across searches so tight routing loops neither allocate
/// nor clear per-node arrays. A node's entries are valid only when its stamp
/// matches the current search.
struct Scratch {
  using Entry = std::pair<double, std::size_t>;
  std::vector<double> dist;
  std::vector<std::size_t> pred;
  std::vector<std::uint32_t> seen;     // search that last reached the node
  std::vector<std::uint32_t> settled;  // search that settled the node
  std::vector<Entry> heap;
  std::uint32_t search = 0;

  void begin(std::size_t n) {
    if (dist.size() < n || ++search == 0) {
      dist.assign(n, 0.0);
      pred.assign(n, kNone);
      seen.assign(n, 0);
      settled.assign(n, 0);
      search = 1;
    }
    heap.clear();
  }
};

Scratch& scratch() {
  thread_local Scratch s;
  return s;
}

/// Dijkstra from src to dst over edges not marked in `disabled`; false when
/// dst is unreachable.
bool dijkstra(const RoadGraph& g, std::size_t src, std::size_t dst, const std::vector<char>& disabled,
              IndexPath& path) {
  const auto& nodes = g.nodes();
  const auto& edges = g.edges();
  path.edges.clear();
  path.length_m = 0.0;
  if (src == dst) return true;

  Scratch& w = scratch();
  w.begin(nodes.size());
  auto& dist = w.dist;
  auto& pred = w.pred;
  auto& heap = w.heap;
  const std::uint32_t now = w.search;
  auto reached = [&](std::size_t v) { return w.seen[v] == now; };
  auto settled = [&](std::size_t v) { return w.settled[v] == now; };

  // Min-heap on distance. Edge lengths are positive, so the settling order of
  // equally distant nodes cannot change any predecessor choice.
  const std::greater<> later;
  auto push = [&](double d, std::size_t v) {
    heap.emplace_back(d, v);
    std::push_heap(heap.begin(), heap.end(), later);
  };
  dist[src] = 0.0;
  w.seen[src] = now;
  push(0.0, src);

  auto prefer = [&](std::size_t cand, std::size_t current) {
    const NodeId a = nodes[edges[cand].from].id;
    const NodeId b = nodes[edges[current].from].id;
    if (a != b) return a < b;
    return edges[cand].id < edges[current].id;
  };

  while (!heap.empty()) {
    std::pop_heap(heap.begin(), heap.end(), later);
    const auto [d, u] = heap.back();
    heap.pop_back();
    if (settled(u)) continue;
    w.settled[u] = now;
    if (u == dst) break;
    for (std::size_t ei : g.out_edges(u)) {
      if (!disabled.empty() && disabled[ei]) continue;
      const Edge& e = edges[ei];
      if (settled(e.to)) continue;
      const double nd = d + e.length_m;
      if (!reached(e.to) || nd < dist[e.to]) {
        w.seen[e.to] = now;
        dist[e.to] = nd;
        pred[e.to] = ei;
        push(nd, e.to);
      } else if (nd == dist[e.to] && prefer(ei, pred[e.to])) {
        pred[e.to] = ei;
      }
    }
  }
  if (!settled(dst)) return false;

  std::size_t hops = 0;
  for (std::size_t v = dst; v != src; v = edges[pred[v]].from) ++hops;
  path.edges.resize(hops);
  for (std::size_t v = dst; v != src; v = edges[pred[v]].from) path.edges[--hops] = pred[v];
  // Sum along the path so the length equals the sum of its edge lengths.
  for (std::size_t ei : path.edges) path.length_m += edges[ei].length_m;
  return true;
}

Path to_path(const RoadGraph& g, std::size_t src, const IndexPath& ip) {
  Path p;
  p.nodes.reserve(ip.edges.size() + 1);
  p.edges.reserve(ip.edges.size());
  p.nodes.push_back(g.nodes()[src].id);
  for (std::size_t ei : ip.edges) {
    const Edge& e = g.edges()[ei];
    p.edges.push_back(e.id);
    p.nodes.push_back(g.nodes()[e.to].id);
  }
  p.length_m = ip.length_m;
  return p;
}

std::size_t resolve(const RoadGraph& g, NodeId id) {
  auto idx = g.node_index(id);
  if (!idx) throw std::invalid_argument("node " + std::to_string(id) + " is not in the graph");
  return *idx;
}

std::size_t middle_edge(const RoadGraph& g, const IndexPath& p, MiddleEdgeRule rule) {
  const std::size_t m = p.edges.size();
  if (rule == MiddleEdgeRule::by_index) {
    return p.edges[(m + 1) / 2 - 1];
  }
  const double half = p.length_m / 2.0;
  double cum = 0.0;
  for (std::size_t ei : p.edges) {
    const double next = cum + g.edges()[ei].length_m;
    if (half < next) return ei;
    cum = next;
  }
  return p.edges.back();
}

}  // namespace

std::optional<Path> shortest_path(const RoadGraph& g, NodeId src, NodeId dst) {
  const std::size_t s = resolve(g, src);
  const std::size_t t = resolve(g, dst);
  IndexPath ip;
  if (!dijkstra(g, s, t, {}, ip)) return std::nullopt;
  return to_path(g, s, ip);
}

std::vector<Path> k_shortest_paths(const RoadGraph& g, NodeId src, NodeId dst, std::size_t k,
                                   const KspOptions& options) {
  if (k == 0) throw std::invalid_argument("K must be at least 1");
  const std::size_t s = resolve(g, src);
  const std::size_t t = resolve(g, dst);

  std::vector<Path> out;
  out.reserve(k);
  // Accumulated eliminations cut every earlier path, so only the other mode can repeat one.
  std::vector<std::vector<std::size_t>> seen;
  thread_local std::vector<char> disabled;
  thread_local IndexPath ip;
  if (disabled.size() < g.edges().size()) disabled.resize(g.edges().size(), 0);
  std::vector<std::size_t> cuts;
  struct Restore {
    std::vector<char>& flags;
    std::vector<std::size_t>& cuts;
    ~Restore() {
      for (std::size_t c : cuts) flags[c] = 0;
    }
  } restore{disabled, cuts};
  // Without accumulation the same path can come back; bound the attempts.
  const std::size_t max_rounds = options.accumulate ? k : 4 * k;
  std::size_t last_removed = kNone;
  for (std::size_t round = 0; round < max_rounds && out.size() < k; ++round) {
    if (!dijkstra(g, s, t, disabled, ip)) break;
    if (options.accumulate) {
      out.push_back(to_path(g, s, ip));
    } else if (std::find(seen.begin(), seen.end(), ip.edges) == seen.end()) {
      seen.push_back(ip.edges);
      out.push_back(to_path(g, s, ip));
    }
    if (ip.edges.empty()) break;  // src == dst: nothing to eliminate
    const std::size_t cut = middle_edge(g, ip, options.middle);
    if (!options.accumulate && last_removed != kNone) disabled[last_removed] = 0;
    disabled[cut] = 1;
    cuts.push_back(cut);
    last_removed = cut;
  }
  return out;
}

}  // namespace tripends
