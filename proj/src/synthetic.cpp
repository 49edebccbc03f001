#include "powerformer/synthetic.hpp"

#include "powerformer/error.hpp"
#include "powerformer/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace powerformer {

SyntheticCase corridor_case(const CorridorOptions& o) {
  if (o.areas < 2 || o.buses_per_area < 2 || o.gens_per_area < 1 || o.gens_per_area > o.buses_per_area ||
      o.ties < 1 || o.ties > o.buses_per_area) {
    throw Error(ErrorCode::InvalidCase, "corridor dimensions out of range");
  }
  std::mt19937_64 rng(o.seed);
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  const int m = o.buses_per_area;
  auto bus_id = [m](int area, int local) { return area * m + local + 1; };

  GridCase grid;
  grid.name = "corridor" + std::to_string(o.areas * m);
  grid.base_mva = 100.0;

  auto add_branch = [&](int from, int to, double x) {
    Branch br;
    br.from = from;
    br.to = to;
    br.x = x;
    br.r = o.lossless ? 0.0 : 0.1 * x;
    br.b = o.lossless ? 0.0 : 0.02;
    br.rate = 0.0;
    grid.branches.push_back(br);
  };

  std::vector<std::set<int>> gen_local(static_cast<std::size_t>(o.areas));
  for (int a = 0; a < o.areas; ++a) {
    for (int j = 0; j < o.gens_per_area; ++j) gen_local[static_cast<std::size_t>(a)].insert(j * m / o.gens_per_area);
  }

  double scheduled = 0.0;
  for (int a = 0; a < o.areas; ++a) {
    for (int local : gen_local[static_cast<std::size_t>(a)]) {
      Generator g;
      g.bus = bus_id(a, local);
      g.qmax = 300.0;
      g.qmin = -300.0;
      g.vg = 1.0;
      GenCost c{uniform(0.005, 0.02), uniform(10.0, 30.0), uniform(50.0, 150.0)};
      const bool slack = a == o.areas - 1 && local == 0;
      if (slack) {
        g.pmax = 2000.0;
        g.pmin = 0.0;
        g.pg = 0.0;
      } else {
        g.pmax = std::round(uniform(80.0, 150.0));
        g.pmin = 0.1 * g.pmax;
        g.pg = std::round(uniform(0.45, 0.65) * g.pmax);
        scheduled += g.pg;
      }
      grid.generators.push_back(g);
      grid.gencost.push_back(c);
    }
  }

  // demand grows eastward so the western areas export across the sections
  std::vector<double> weight(static_cast<std::size_t>(o.areas * m), 0.0);
  for (int a = 0; a < o.areas; ++a) {
    for (int local = 0; local < m; ++local) {
      if (gen_local[static_cast<std::size_t>(a)].count(local)) continue;
      weight[static_cast<std::size_t>(a * m + local)] = (0.5 + a) * uniform(0.6, 1.4);
    }
  }
  const double total_weight = std::accumulate(weight.begin(), weight.end(), 0.0);
  const double demand = o.load_scale * scheduled / 0.85;

  for (int a = 0; a < o.areas; ++a) {
    for (int local = 0; local < m; ++local) {
      Bus b;
      b.id = bus_id(a, local);
      const bool has_gen = gen_local[static_cast<std::size_t>(a)].count(local) > 0;
      b.type = has_gen ? BusType::pv : BusType::pq;
      if (a == o.areas - 1 && local == 0) b.type = BusType::slack;
      const double share = total_weight > 0.0 ? weight[static_cast<std::size_t>(a * m + local)] / total_weight : 0.0;
      b.pd = std::round(demand * share * 10.0) / 10.0;
      b.qd = std::round(3.0 * b.pd) / 10.0;
      grid.buses.push_back(b);
    }
  }
  if (total_weight == 0.0) {
    // every bus carries a unit: put the demand on the non-slack buses evenly
    for (auto& b : grid.buses) {
      if (b.type != BusType::slack) {
        b.pd = std::round(demand / static_cast<double>(grid.buses.size() - 1) * 10.0) / 10.0;
        b.qd = std::round(3.0 * b.pd) / 10.0;
      }
    }
  }

  for (int a = 0; a < o.areas; ++a) {
    for (int local = 0; local + 1 < m; ++local) add_branch(bus_id(a, local), bus_id(a, local + 1), uniform(0.04, 0.1));
    if (m >= 4) add_branch(bus_id(a, 0), bus_id(a, m - 1), uniform(0.04, 0.1));
    if (m >= 6) add_branch(bus_id(a, 0), bus_id(a, m / 2), uniform(0.04, 0.1));
  }
  std::vector<Section> sections;
  for (int a = 0; a + 1 < o.areas; ++a) {
    Section s;
    s.id = a + 1;
    for (int t = 0; t < o.ties; ++t) {
      const int from = bus_id(a, m - 1 - t);
      const int to = bus_id(a + 1, t);
      add_branch(from, to, uniform(0.06, 0.12));
      s.lines.emplace_back(from, to);
    }
    sections.push_back(s);
  }
  validate(grid);

  const PowerFlowSolution base = solve_ac(grid);
  for (auto& s : sections) {
    s.p_min = -1.0;
    s.p_max = 1.0;
  }
  sections = load_section_config(write_section_config(sections), grid);
  for (auto& s : sections) {
    const double flow = section_flow(base, s).p;
    const double band = std::max(o.bound_margin * std::abs(flow), o.min_band);
    s.p_min = std::round(flow - band);
    s.p_max = std::round(flow + band);
  }

  // the slack unit starts at its solved output so the stored case is self-consistent
  const Eigen::VectorXd pg = generator_outputs(grid, base);
  for (std::size_t i = 0; i < grid.generators.size(); ++i) {
    if (grid.buses[static_cast<std::size_t>(grid.node_of(grid.generators[i].bus))].type == BusType::slack) {
      grid.generators[i].pg = std::round(pg[static_cast<Eigen::Index>(i)] * 100.0) / 100.0;
    }
  }
  return {std::move(grid), std::move(sections)};
}

SyntheticCase corridor9(std::uint64_t seed) {
  CorridorOptions o;
  o.areas = 3;
  o.buses_per_area = 3;
  o.gens_per_area = 2;
  o.ties = 2;
  o.seed = seed;
  SyntheticCase c = corridor_case(o);
  c.sections.resize(1);
  return c;
}

SyntheticCase corridor30(std::uint64_t seed) {
  CorridorOptions o;
  o.areas = 3;
  o.buses_per_area = 10;
  o.gens_per_area = 3;
  o.ties = 2;
  o.seed = seed;
  return corridor_case(o);
}

PowerGraph random_regular_graph(int n, int degree, std::uint64_t seed) {
  if (n < degree + 1 || (n * degree) % 2 != 0) {
    throw Error(ErrorCode::InvalidCase, "no simple " + std::to_string(degree) + "-regular graph on " +
                                            std::to_string(n) + " nodes");
  }
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::vector<int> stubs;
    for (int v = 0; v < n; ++v) stubs.insert(stubs.end(), static_cast<std::size_t>(degree), v);
    std::shuffle(stubs.begin(), stubs.end(), rng);
    std::set<std::pair<int, int>> edges;
    bool simple = true;
    for (std::size_t i = 0; i < stubs.size(); i += 2) {
      const int u = std::min(stubs[i], stubs[i + 1]);
      const int v = std::max(stubs[i], stubs[i + 1]);
      if (u == v || !edges.insert({u, v}).second) {
        simple = false;
        break;
      }
    }
    if (!simple) continue;
    PowerGraph g;
    g.n = n;
    g.edge_list.assign(edges.begin(), edges.end());
    for (int v = 0; v < n; ++v) g.node_index[v + 1] = v;
    return g;
  }
  throw Error(ErrorCode::ExhaustedAttempts, "could not draw a simple regular graph");
}

}  // namespace powerformer
