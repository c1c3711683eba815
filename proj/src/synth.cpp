#include "tripends/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "tripends/csv.hpp"
#include "tripends/error.hpp"
#include "tripends/geojson.hpp"

namespace tripends {

using nlohmann::json;

// --- scenario config -----------------------------------------------------------------

namespace {

void check(const SynthScenario& s);

Range range_from(const json& j, Range fallback) {
  if (j.is_null()) return fallback;
  if (!j.is_array() || j.size() != 2) throw InputError("range must be a two-element array");
  Range r{j[0].get<double>(), j[1].get<double>()};
  if (r.lo > r.hi) throw InputError("range lower bound exceeds upper bound");
  return r;
}

json range_to(Range r) { return json::array({r.lo, r.hi}); }

}  // namespace

SynthScenario SynthScenario::from_json(const json& j) {
  SynthScenario s;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  try {
    get("seed", s.seed);
    get("grid_n", s.grid_n);
    get("spacing_m", s.spacing_m);
    if (j.contains("center")) s.center = {j["center"].at(0).get<double>(), j["center"].at(1).get<double>()};
    get("spur_m", s.spur_m);
    get("yard_m", s.yard_m);
    get("restricted_blocks", s.restricted_blocks);
    get("restricted_window", s.restricted_window);
    get("fleet", s.fleet);
    get("days", s.days);
    get("start_epoch", s.start_epoch);
    get("sampling_s", s.sampling_s);
    get("clients_per_truck", s.clients_per_truck);
    get("min_client_separation_m", s.min_client_separation_m);
    if (j.contains("chains_per_day")) {
      s.chains_per_day = {j["chains_per_day"].at(0).get<int>(), j["chains_per_day"].at(1).get<int>()};
    }
    if (j.contains("pattern_mix")) s.pattern_mix = j["pattern_mix"].get<std::map<std::string, double>>();
    s.first_departure_s = range_from(j.value("first_departure_s", json()), s.first_departure_s);
    s.base_dwell_s = range_from(j.value("base_dwell_s", json()), s.base_dwell_s);
    s.client_dwell_s = range_from(j.value("client_dwell_s", json()), s.client_dwell_s);
    s.speed_kmh = range_from(j.value("speed_kmh", json()), s.speed_kmh);
    if (j.contains("temp_stops_per_leg")) {
      s.temp_stops_per_leg = {j["temp_stops_per_leg"].at(0).get<int>(), j["temp_stops_per_leg"].at(1).get<int>()};
    }
    s.temp_dwell_s = range_from(j.value("temp_dwell_s", json()), s.temp_dwell_s);
    get("sigma_m", s.sigma_m);
    get("burst_probability", s.burst_probability);
    get("burst_sigma_m", s.burst_sigma_m);
    get("calibration_trips", s.calibration_trips);
  } catch (const json::exception& e) {
    throw InputError(std::string("bad scenario: ") + e.what());
  }
  check(s);
  return s;
}

json SynthScenario::to_json() const {
  return {
      {"seed", seed},
      {"grid_n", grid_n},
      {"spacing_m", spacing_m},
      {"center", json::array({center.lon, center.lat})},
      {"spur_m", spur_m},
      {"yard_m", yard_m},
      {"restricted_blocks", restricted_blocks},
      {"restricted_window", restricted_window},
      {"fleet", fleet},
      {"days", days},
      {"start_epoch", start_epoch},
      {"sampling_s", sampling_s},
      {"clients_per_truck", clients_per_truck},
      {"min_client_separation_m", min_client_separation_m},
      {"chains_per_day", json::array({chains_per_day.first, chains_per_day.second})},
      {"pattern_mix", pattern_mix},
      {"first_departure_s", range_to(first_departure_s)},
      {"base_dwell_s", range_to(base_dwell_s)},
      {"client_dwell_s", range_to(client_dwell_s)},
      {"speed_kmh", range_to(speed_kmh)},
      {"temp_stops_per_leg", json::array({temp_stops_per_leg.first, temp_stops_per_leg.second})},
      {"temp_dwell_s", range_to(temp_dwell_s)},
      {"sigma_m", sigma_m},
      {"burst_probability", burst_probability},
      {"burst_sigma_m", burst_sigma_m},
      {"calibration_trips", calibration_trips},
  };
}

std::string_view to_string(TruthLabel l) {
  switch (l) {
    case TruthLabel::base: return "base";
    case TruthLabel::client: return "client";
    case TruthLabel::temp: return "temp";
  }
  return "temp";
}

// --- generation ----------------------------------------------------------------------

namespace {

void check(const SynthScenario& s) {
  auto fail = [](const std::string& what) { throw InputError("bad scenario: " + what); };
  if (s.grid_n < 2) fail("grid_n must be at least 2");
  if (!(s.spacing_m > 0)) fail("spacing_m must be positive");
  if (!(s.spur_m > 0) || !(s.yard_m >= 0) || s.spur_m + s.yard_m >= s.spacing_m / 2) {
    fail("spur and yard must fit inside half a block");
  }
  if (s.restricted_blocks < 0 || s.restricted_blocks > s.grid_n - 1) fail("restricted_blocks out of range");
  if (s.fleet < 1 || s.days < 1) fail("fleet and days must be positive");
  if (s.sampling_s < 1) fail("sampling_s must be positive");
  if (s.clients_per_truck < 1) fail("clients_per_truck must be positive");
  if (s.chains_per_day.first < 1 || s.chains_per_day.first > s.chains_per_day.second) fail("chains_per_day");
  if (s.pattern_mix.empty()) fail("pattern_mix is empty");
  if (s.temp_stops_per_leg.first < 0 || s.temp_stops_per_leg.first > s.temp_stops_per_leg.second) {
    fail("temp_stops_per_leg");
  }
  for (Range r : {s.first_departure_s, s.base_dwell_s, s.client_dwell_s, s.speed_kmh, s.temp_dwell_s}) {
    if (!(r.lo > 0)) fail("dwell and speed ranges must be positive");
  }
  if (s.sigma_m < 0 || s.burst_probability < 0 || s.burst_probability > 1) fail("noise model");
}

/// Parses "B-1-2-1-B" into labels; 0 stands for the base.
std::vector<int> parse_pattern(const std::string& p) {
  std::vector<int> out;
  int next = 1;
  std::size_t pos = 0;
  while (pos <= p.size()) {
    std::size_t dash = p.find('-', pos);
    if (dash == std::string::npos) dash = p.size();
    const std::string tok = p.substr(pos, dash - pos);
    if (tok == "B") {
      out.push_back(0);
    } else {
      auto v = csv::parse_number<int>(tok);
      if (!v || *v < 1 || *v > next) throw InputError("bad chain pattern '" + p + "'");
      if (*v == next) ++next;
      out.push_back(*v);
    }
    pos = dash + 1;
  }
  if (out.size() < 3 || out.front() != 0 || out.back() != 0) throw InputError("bad chain pattern '" + p + "'");
  for (std::size_t i = 1; i + 1 < out.size(); ++i) {
    if (out[i] == 0) throw InputError("chain pattern '" + p + "' revisits the base");
    if (out[i] == out[i - 1]) throw InputError("chain pattern '" + p + "' repeats a stop");
  }
  return out;
}

struct Site {
  int id = 0;
  XY xy;
  LonLat pos;
  NodeId spur_end = 0;
};

struct City {
  LocalProjection proj;
  RoadGraph graph;
  std::unordered_map<NodeId, XY> node_xy;
  std::vector<Site> sites;
  std::vector<RestrictedArea> restricted;
  CityBoundary boundary;
};

City build_city(const SynthScenario& s, std::mt19937_64& rng) {
  City c;
  c.proj = LocalProjection(s.center);
  const int n = s.grid_n;
  const double half = (n - 1) * s.spacing_m / 2.0;
  auto corner = [&](int i, int j) { return XY{i * s.spacing_m - half, j * s.spacing_m - half}; };

  auto add_node = [&](NodeId id, XY xy) {
    c.graph.add_node(id, c.proj.inverse(xy));
    c.node_xy[id] = xy;
  };
  EdgeId next_edge = 1;
  auto add_road = [&](NodeId a, NodeId b, RoadClass cls) {
    const double len = haversine(c.proj.inverse(c.node_xy[a]), c.proj.inverse(c.node_xy[b]));
    c.graph.add_edge(next_edge++, a, b, len, cls);
    c.graph.add_edge(next_edge++, b, a, len, cls);
  };

  auto inter = [&](int i, int j) -> NodeId { return 1 + i * n + j; };
  auto hmid = [&](int i, int j) -> NodeId { return 100000 + i * n + j; };  // (i,j)-(i+1,j)
  auto vmid = [&](int i, int j) -> NodeId { return 200000 + i * n + j; };  // (i,j)-(i,j+1)

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) add_node(inter(i, j), corner(i, j));
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const XY p = corner(i, j);
      if (i + 1 < n) {
        add_node(hmid(i, j), {p.x + s.spacing_m / 2, p.y});
        add_road(inter(i, j), hmid(i, j), RoadClass::primary);
        add_road(hmid(i, j), inter(i + 1, j), RoadClass::primary);
      }
      if (j + 1 < n) {
        add_node(vmid(i, j), {p.x, p.y + s.spacing_m / 2});
        add_road(inter(i, j), vmid(i, j), RoadClass::primary);
        add_road(vmid(i, j), inter(i, j + 1), RoadClass::primary);
      }
    }
  }

  const int blocks = n - 1;
  const int r0 = (blocks - s.restricted_blocks) / 2;
  auto restricted_block = [&](int bi, int bj) {
    return s.restricted_blocks > 0 && bi >= r0 && bi < r0 + s.restricted_blocks && bj >= r0 &&
           bj < r0 + s.restricted_blocks;
  };

  std::uniform_int_distribution<int> side_dist(0, 3);
  int site_id = 0;
  for (int bi = 0; bi < blocks; ++bi) {
    for (int bj = 0; bj < blocks; ++bj) {
      const int side = side_dist(rng);  // drawn for every block to keep the stream stable
      if (restricted_block(bi, bj)) continue;
      NodeId junction = 0;
      double dx = 0, dy = 0;
      switch (side) {
        case 0: junction = hmid(bi, bj), dy = 1; break;       // south side, heading north
        case 1: junction = hmid(bi, bj + 1), dy = -1; break;  // north side
        case 2: junction = vmid(bi, bj), dx = 1; break;       // west side
        default: junction = vmid(bi + 1, bj), dx = -1; break; // east side
      }
      const XY j = c.node_xy[junction];
      const NodeId end = 300000 + site_id;
      add_node(end, {j.x + dx * s.spur_m, j.y + dy * s.spur_m});
      add_road(junction, end, RoadClass::tertiary);
      Site site;
      site.id = site_id++;
      site.xy = {j.x + dx * (s.spur_m + s.yard_m), j.y + dy * (s.spur_m + s.yard_m)};
      site.pos = c.proj.inverse(site.xy);
      site.spur_end = end;
      c.sites.push_back(site);
    }
  }
  c.graph.build_index();

  if (s.restricted_blocks > 0) {
    const double inset = std::min(100.0, s.spacing_m * 0.1);
    const XY lo = corner(r0, r0);
    const XY hi = corner(r0 + s.restricted_blocks, r0 + s.restricted_blocks);
    Ring ring = {c.proj.inverse({lo.x + inset, lo.y + inset}), c.proj.inverse({hi.x - inset, lo.y + inset}),
                 c.proj.inverse({hi.x - inset, hi.y - inset}), c.proj.inverse({lo.x + inset, hi.y - inset})};
    ring.push_back(ring.front());
    RestrictedArea area;
    area.label = "center";
    area.polygons = {{ring}};
    area.windows = {parse_time_window(s.restricted_window)};
    c.restricted.push_back(std::move(area));
  }

  const double m = half + 1000.0;
  Ring outer = {c.proj.inverse({-m, -m}), c.proj.inverse({m, -m}), c.proj.inverse({m, m}), c.proj.inverse({-m, m})};
  outer.push_back(outer.front());
  c.boundary.name = "synthetic city";
  c.boundary.polygons = {{outer}};
  return c;
}

struct Key {
  double t = 0.0;  // seconds after start_epoch
  XY p;
};

double uniform(std::mt19937_64& rng, Range r) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

int uniform_int(std::mt19937_64& rng, std::pair<int, int> r) {
  return std::uniform_int_distribution<int>(r.first, r.second)(rng);
}

double dist(XY a, XY b) { return std::hypot(a.x - b.x, a.y - b.y); }

XY lerp(XY a, XY b, double f) { return {a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f}; }

class Simulator {
 public:
  Simulator(const SynthScenario& s, const City& city, const TimedNetwork& net, std::mt19937_64& rng)
      : s_(s), city_(city), net_(net), rng_(rng) {}

  /// Route polyline from site a to site b for a departure at t (seconds after
  /// start). Segment k joins points k and k+1; the first and last two segments
  /// are yard and spur.
  std::vector<XY> route(const Site& a, const Site& b, double t) const {
    const RoadGraph& g = net_.at_time(s_.start_epoch + static_cast<std::int64_t>(t));
    auto p = shortest_path(g, a.spur_end, b.spur_end);
    if (!p) throw InputError(fmt::format("site {} cannot be reached from site {}", b.id, a.id));
    std::vector<XY> pts{a.xy};
    for (NodeId id : p->nodes) pts.push_back(city_.node_xy.at(id));
    pts.push_back(b.xy);
    return pts;
  }

  /// Appends the drive to `keys`, injecting temporary stops on primary
  /// roads. Returns the arrival time.
  double drive(const Site& a, const Site& b, double t, std::vector<Key>& keys, std::vector<TruthEvent>* events,
               const std::string& truck, bool temp_stops) {
    const auto pts = route(a, b, t);
    const double v = uniform(rng_, s_.speed_kmh) / 3.6;
    std::vector<double> cum{0.0};
    for (std::size_t i = 1; i < pts.size(); ++i) cum.push_back(cum.back() + dist(pts[i - 1], pts[i]));

    // Temporary stops: uniformly placed along the primary stretch, kept clear
    // of its ends.
    std::vector<std::pair<double, double>> temps;  // (arc, dwell)
    if (temp_stops && pts.size() >= 5) {
      const double lo = cum[2] + 150.0;
      const double hi = cum[pts.size() - 3] - 150.0;
      const int count = uniform_int(rng_, s_.temp_stops_per_leg);
      for (int k = 0; k < count && hi > lo; ++k) {
        temps.emplace_back(uniform(rng_, {lo, hi}), uniform(rng_, s_.temp_dwell_s));
      }
      std::sort(temps.begin(), temps.end());
    }

    std::size_t ti = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      while (ti < temps.size() && temps[ti].first < cum[i]) {
        const double arc = temps[ti].first;
        const XY at = lerp(pts[i - 1], pts[i], (arc - cum[i - 1]) / (cum[i] - cum[i - 1]));
        const double ta = t + (arc - cum[i - 1]) / v;
        keys.push_back({ta, at});
        const double td = ta + temps[ti].second;
        keys.push_back({td, at});
        if (events) {
          events->push_back({truck, city_.proj.inverse(at), static_cast<std::int64_t>(std::llround(ta)) + s_.start_epoch,
                             static_cast<std::int64_t>(std::llround(td)) + s_.start_epoch, TruthLabel::temp});
        }
        t = td - (arc - cum[i - 1]) / v;  // shift so the remaining segment keeps speed v
        ++ti;
      }
      t += (cum[i] - cum[i - 1]) / v;
      keys.push_back({t, pts[i]});
    }
    return t;
  }

  /// Samples fixes every sampling_s over [t0, t1] with positioning noise.
  std::vector<GpsRecord> sample(const std::vector<Key>& keys, double t0, double t1, const std::string& truck) {
    std::vector<GpsRecord> out;
    std::normal_distribution<double> noise(0.0, std::max(s_.sigma_m, 1e-12));
    std::normal_distribution<double> burst(0.0, std::max(s_.burst_sigma_m, 1e-12));
    std::bernoulli_distribution bursting(s_.burst_probability);
    std::size_t k = 0;
    for (long step = 0;; ++step) {
      const double t = t0 + static_cast<double>(step) * s_.sampling_s;
      if (t > t1 + 1e-9) break;
      while (k + 1 < keys.size() && keys[k + 1].t <= t) ++k;
      XY p = keys[k].p;
      if (k + 1 < keys.size() && keys[k + 1].t > keys[k].t) {
        const double f = std::clamp((t - keys[k].t) / (keys[k + 1].t - keys[k].t), 0.0, 1.0);
        p = lerp(keys[k].p, keys[k + 1].p, f);
      }
      if (s_.sigma_m > 0) {
        p.x += noise(rng_);
        p.y += noise(rng_);
      }
      if (s_.burst_probability > 0 && bursting(rng_)) {
        p.x += burst(rng_);
        p.y += burst(rng_);
      }
      GpsRecord r;
      r.truck_id = truck;
      r.timestamp = s_.start_epoch + static_cast<std::int64_t>(std::llround(t));
      const LonLat ll = city_.proj.inverse(p);
      // Device precision: 1e-7 degrees.
      r.lon = std::round(ll.lon * 1e7) / 1e7;
      r.lat = std::round(ll.lat * 1e7) / 1e7;
      out.push_back(std::move(r));
    }
    return out;
  }

 private:
  const SynthScenario& s_;
  const City& city_;
  const TimedNetwork& net_;
  std::mt19937_64& rng_;
};

/// Allocates chain patterns to exact counts by largest remainder.
std::vector<std::string> pattern_quota(const std::map<std::string, double>& mix, std::size_t total) {
  double sum = 0;
  for (const auto& [p, w] : mix) {
    if (!(w >= 0)) throw InputError("pattern shares must be non-negative");
    sum += w;
  }
  if (!(sum > 0)) throw InputError("pattern shares sum to zero");
  std::vector<std::pair<std::string, double>> exact;
  std::size_t assigned = 0;
  std::vector<std::size_t> counts;
  for (const auto& [p, w] : mix) {
    const double e = w / sum * static_cast<double>(total);
    counts.push_back(static_cast<std::size_t>(std::floor(e)));
    assigned += counts.back();
    exact.emplace_back(p, e - std::floor(e));
  }
  std::vector<std::size_t> order(exact.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return exact[a].second > exact[b].second; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[order[i % order.size()]];
  std::vector<std::string> out;
  for (std::size_t i = 0; i < exact.size(); ++i) out.insert(out.end(), counts[i], exact[i].first);
  return out;
}

}  // namespace

SynthOutput generate_scenario(const SynthScenario& s) {
  check(s);
  std::map<std::string, std::vector<int>> parsed;
  int max_clients = 0;
  for (const auto& [p, w] : s.pattern_mix) {
    parsed[p] = parse_pattern(p);
    max_clients = std::max(max_clients, *std::max_element(parsed[p].begin(), parsed[p].end()));
  }
  if (max_clients > s.clients_per_truck) throw InputError("a pattern needs more clients than clients_per_truck");

  std::mt19937_64 rng(s.seed);
  City city = build_city(s, rng);
  const TimedNetwork net(city.graph, city.restricted);
  Simulator sim(s, city, net, rng);

  const std::size_t need = static_cast<std::size_t>(s.fleet) + static_cast<std::size_t>(s.clients_per_truck);
  if (city.sites.size() < need) {
    throw InputError(fmt::format("city has {} sites, scenario needs at least {}", city.sites.size(), need));
  }
  std::vector<std::size_t> shuffled(city.sites.size());
  std::iota(shuffled.begin(), shuffled.end(), 0);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const std::vector<std::size_t> bases(shuffled.begin(), shuffled.begin() + s.fleet);
  const std::vector<std::size_t> client_pool(shuffled.begin() + s.fleet, shuffled.end());

  // Chains per truck-day first, so the pattern mix can be met exactly.
  std::vector<std::vector<int>> chains_per(static_cast<std::size_t>(s.fleet));
  std::size_t total_chains = 0;
  for (auto& row : chains_per) {
    for (int d = 0; d < s.days; ++d) {
      row.push_back(uniform_int(rng, s.chains_per_day));
      total_chains += static_cast<std::size_t>(row.back());
    }
  }
  auto quota = pattern_quota(s.pattern_mix, total_chains);
  std::shuffle(quota.begin(), quota.end(), rng);

  SynthOutput out;
  const double end_t = static_cast<double>(s.days) * 86400.0;
  std::size_t next_pattern = 0;

  for (int truck = 0; truck < s.fleet; ++truck) {
    const std::string id = fmt::format("T{:03d}", truck + 1);
    const Site& base = city.sites[bases[static_cast<std::size_t>(truck)]];

    // Clients far enough from the base.
    std::vector<std::size_t> pool;
    for (std::size_t c : client_pool) {
      if (dist(city.sites[c].xy, base.xy) >= s.min_client_separation_m) pool.push_back(c);
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    if (pool.size() > static_cast<std::size_t>(s.clients_per_truck)) pool.resize(static_cast<std::size_t>(s.clients_per_truck));
    if (pool.size() < static_cast<std::size_t>(max_clients)) {
      throw InputError(fmt::format("not enough clients around the base of {}", id));
    }

    std::vector<Key> keys{{0.0, base.xy}};
    std::vector<TruthEvent> events;
    double t = 0.0;
    double base_arrive = 0.0;
    for (int d = 0; d < s.days; ++d) {
      double depart = std::max(d * 86400.0 + uniform(rng, s.first_departure_s), t + 600.0);
      const int n_chains = chains_per[static_cast<std::size_t>(truck)][static_cast<std::size_t>(d)];
      for (int c = 0; c < n_chains; ++c) {
        if (c > 0) depart = t + uniform(rng, s.base_dwell_s);
        events.push_back({id, base.pos, static_cast<std::int64_t>(std::llround(base_arrive)) + s.start_epoch,
                          static_cast<std::int64_t>(std::llround(depart)) + s.start_epoch, TruthLabel::base});
        keys.push_back({depart, base.xy});
        t = depart;

        const std::string& pattern = quota[next_pattern++];
        out.truth.chains.push_back({id, pattern});
        const auto& labels = parsed.at(pattern);
        const int k = *std::max_element(labels.begin(), labels.end());

        // Pick k distinct clients pairwise apart.
        std::vector<std::size_t> chosen;
        for (int attempt = 0; attempt < 1000 && static_cast<int>(chosen.size()) < k; ++attempt) {
          const std::size_t cand = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
          const bool ok = std::all_of(chosen.begin(), chosen.end(), [&](std::size_t o) {
            return o != cand && dist(city.sites[o].xy, city.sites[cand].xy) >= s.min_client_separation_m;
          });
          if (ok) chosen.push_back(cand);
        }
        if (static_cast<int>(chosen.size()) < k) {
          throw InputError(fmt::format("cannot find {} separated clients for {}", k, id));
        }

        const Site* at = &base;
        for (std::size_t v = 1; v < labels.size(); ++v) {
          const Site& next = labels[v] == 0 ? base : city.sites[chosen[static_cast<std::size_t>(labels[v] - 1)]];
          t = sim.drive(*at, next, t, keys, &events, id, true);
          at = &next;
          if (labels[v] != 0) {
            const double leave = t + uniform(rng, s.client_dwell_s);
            events.push_back({id, next.pos, static_cast<std::int64_t>(std::llround(t)) + s.start_epoch,
                              static_cast<std::int64_t>(std::llround(leave)) + s.start_epoch, TruthLabel::client});
            keys.push_back({leave, next.xy});
            t = leave;
          }
        }
        base_arrive = t;
      }
      if (t >= end_t) throw InputError(fmt::format("schedule of {} overruns the scenario", id));
    }
    events.push_back({id, base.pos, static_cast<std::int64_t>(std::llround(base_arrive)) + s.start_epoch,
                      static_cast<std::int64_t>(std::llround(end_t)) + s.start_epoch, TruthLabel::base});
    keys.push_back({end_t, base.xy});

    Trajectory traj;
    traj.truck_id = id;
    traj.records = sim.sample(keys, 0.0, end_t, id);
    out.trajectories.push_back(std::move(traj));
    out.truth.events.insert(out.truth.events.end(), events.begin(), events.end());
  }

  // Calibration: single trips at night, when no area is restricted.
  for (int i = 0; i < s.calibration_trips; ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, city.sites.size() - 1);
    const Site& a = city.sites[pick(rng)];
    const Site* b = &city.sites[pick(rng)];
    while (b->id == a.id) b = &city.sites[pick(rng)];
    const double t0 = 2.0 * 3600;
    std::vector<Key> keys{{t0 - s.sampling_s, a.xy}, {t0, a.xy}};
    const double t1 = sim.drive(a, *b, t0, keys, nullptr, "cal", false);
    keys.push_back({t1 + s.sampling_s, b->xy});
    const auto fixes = sim.sample(keys, t0, t1 + s.sampling_s, "cal");
    double actual = 0.0;
    for (std::size_t f = 1; f < fixes.size(); ++f) actual += haversine(fixes[f - 1].position(), fixes[f].position());
    out.calibration.push_back({a.pos, b->pos, actual});
  }

  std::uniform_int_distribution<std::size_t> cat(0, kPoiCategories.size() - 1);
  for (const auto& site : city.sites) {
    out.pois.push_back({fmt::format("site-{}", site.id), site.pos, std::string(kPoiCategories[cat(rng)])});
  }
  out.graph = std::move(city.graph);
  out.boundary = std::move(city.boundary);
  out.restricted = std::move(city.restricted);
  return out;
}

namespace {

std::string boundary_geojson(const CityBoundary& b) {
  json coords = json::array();
  for (const auto& poly : b.polygons) {
    json rings = json::array();
    for (const auto& ring : poly) {
      json r = json::array();
      for (const auto& p : ring) r.push_back({p.lon, p.lat});
      rings.push_back(r);
    }
    coords.push_back(rings);
  }
  json doc = {{"type", "Feature"},
              {"properties", {{"name", b.name}}},
              {"geometry", {{"type", "MultiPolygon"}, {"coordinates", coords}}}};
  return doc.dump(1) + "\n";
}

}  // namespace

void write_scenario(const SynthOutput& out, const SynthScenario& scenario, const std::filesystem::path& dir) {
  csv::write_file(dir / "gps.csv", format_gps_csv(out.trajectories));
  csv::write_file(dir / "nodes.csv", format_nodes_csv(out.graph));
  csv::write_file(dir / "edges.csv", format_edges_csv(out.graph));
  csv::write_file(dir / "pois.geojson", format_pois(out.pois));
  csv::write_file(dir / "boundary.geojson", boundary_geojson(out.boundary));
  csv::write_file(dir / "restricted.geojson", format_restricted_areas(out.restricted));
  csv::write_file(dir / "calibration.csv", format_calibration_trips(out.calibration));
  csv::write_file(dir / "truth.csv", format_truth_csv(out.truth.events));

  json planned = json::object();
  for (const auto& c : out.truth.chains) planned[c.pattern] = planned.value(c.pattern, 0) + 1;
  json sc = scenario.to_json();
  sc["planned_patterns"] = planned;
  csv::write_file(dir / "scenario.json", sc.dump(2) + "\n");

  const json config = {
      {"inputs",
       {{"gps", "gps.csv"},
        {"nodes", "nodes.csv"},
        {"edges", "edges.csv"},
        {"pois", "pois.geojson"},
        {"boundary", "boundary.geojson"},
        {"restricted", "restricted.geojson"},
        {"calibration", "calibration.csv"},
        {"truth", "truth.csv"}}},
      {"output", "out"},
  };
  csv::write_file(dir / "config.json", config.dump(2) + "\n");
}

// --- truth files ----------------------------------------------------------------------------

std::string format_truth_csv(std::span<const TruthEvent> events) {
  std::string out = kTruthCsvHeader;
  out += '\n';
  for (const auto& e : events) {
    fmt::format_to(std::back_inserter(out), "{},{:.7f},{:.7f},{},{},{}\n", e.truck_id, e.pos.lon, e.pos.lat, e.arrive,
                   e.depart, to_string(e.label));
  }
  return out;
}

std::vector<TruthEvent> load_truth_csv(const std::filesystem::path& path) {
  std::vector<TruthEvent> events;
  csv::for_each_row(csv::read_file(path), kTruthCsvHeader, path, [&](std::size_t line, const auto& f) {
    auto bad = [&] { return InputError(fmt::format("{}:{}: malformed truth row", path.string(), line)); };
    if (f.size() != 6) throw bad();
    TruthEvent e;
    e.truck_id = std::string(f[0]);
    auto lon = csv::parse_number<double>(f[1]);
    auto lat = csv::parse_number<double>(f[2]);
    auto arr = csv::parse_number<std::int64_t>(f[3]);
    auto dep = csv::parse_number<std::int64_t>(f[4]);
    if (!lon || !lat || !arr || !dep) throw bad();
    e.pos = {*lon, *lat};
    e.arrive = *arr;
    e.depart = *dep;
    if (f[5] == "base") {
      e.label = TruthLabel::base;
    } else if (f[5] == "client") {
      e.label = TruthLabel::client;
    } else if (f[5] == "temp") {
      e.label = TruthLabel::temp;
    } else {
      throw bad();
    }
    events.push_back(std::move(e));
  });
  return events;
}

// --- scoring ----------------------------------------------------------------------------------

Score score_against_truth(std::span<const TripEnd> ends, std::span<const TruthEvent> truth,
                          const MatchOptions& options) {
  if (!(options.radius_m > 0) || options.window_s <= 0) {
    throw std::invalid_argument("match radius and window must be positive");
  }
  std::map<std::string, std::vector<const TruthEvent*>> by_truck;
  std::uint64_t n_truth = 0;
  for (const auto& e : truth) {
    if (e.label == TruthLabel::temp) continue;
    by_truck[e.truck_id].push_back(&e);
    ++n_truth;
  }
  if (n_truth == 0) throw DegenerateInput("ground truth has no base or client events");
  for (auto& [id, v] : by_truck) {
    std::stable_sort(v.begin(), v.end(), [](const TruthEvent* a, const TruthEvent* b) { return a->arrive < b->arrive; });
  }

  std::vector<const TripEnd*> kept;
  for (const auto& e : ends) {
    if (e.kept()) kept.push_back(&e);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const TripEnd* a, const TripEnd* b) {
    if (a->truck_id != b->truck_id) return a->truck_id < b->truck_id;
    return a->arrive_time < b->arrive_time;
  });

  Score s;
  std::map<const TruthEvent*, bool> used;
  for (const TripEnd* e : kept) {
    bool matched = false;
    auto it = by_truck.find(e->truck_id);
    if (it != by_truck.end()) {
      for (const TruthEvent* t : it->second) {
        if (used[t]) continue;
        const std::int64_t gap =
            std::max<std::int64_t>(0, std::max(e->arrive_time, t->arrive) - std::min(e->depart_time, t->depart));
        if (gap > options.window_s) continue;
        if (haversine(e->position(), t->pos) > options.radius_m) continue;
        used[t] = true;
        matched = true;
        break;
      }
    }
    matched ? ++s.na : ++s.nm;
  }
  s.ne = n_truth - s.na;
  s.precision = s.na + s.nm > 0 ? static_cast<double>(s.na) / static_cast<double>(s.na + s.nm) : 0.0;
  s.recall = static_cast<double>(s.na) / static_cast<double>(s.na + s.ne);
  return s;
}

}  // namespace tripends
