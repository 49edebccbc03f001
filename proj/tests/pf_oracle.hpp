#pragma once

#include "powerformer/grid.hpp"
#include "powerformer/powerflow.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <complex>

namespace pf_oracle {

using namespace powerformer;
using cd = std::complex<double>;

// Net complex injection at every node from branch pi-models and bus shunts, independent of any
// admittance-matrix assembly.
inline Eigen::VectorXcd injections_from_branches(const GridCase& g, const PowerFlowSolution& sol) {
  const auto n = static_cast<Eigen::Index>(g.buses.size());
  Eigen::VectorXcd v(n);
  for (Eigen::Index k = 0; k < n; ++k) v[k] = std::polar(sol.vm[k], sol.va[k]);
  Eigen::VectorXcd s = Eigen::VectorXcd::Zero(n);
  for (const auto& br : g.branches) {
    if (!br.in_service) continue;
    const int f = g.node_of(br.from), t = g.node_of(br.to);
    const cd y = 1.0 / cd(br.r, br.x);
    const cd half_b(0.0, br.b / 2.0);
    s[f] += v[f] * std::conj((v[f] - v[t]) * y + half_b * v[f]);
    s[t] += v[t] * std::conj((v[t] - v[f]) * y + half_b * v[t]);
  }
  const auto order = g.bus_order();
  for (Eigen::Index k = 0; k < n; ++k) {
    const Bus& b = g.buses[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
    s[k] += std::norm(v[k]) * cd(b.gs, -b.bs) / g.base_mva;
  }
  return s;
}

// Largest deviation from scheduled injections over the equations a power flow enforces.
inline double residual(const GridCase& g, const PowerFlowSolution& sol) {
  const Eigen::VectorXcd s = injections_from_branches(g, sol);
  const auto order = g.bus_order();
  double worst = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Bus& b = g.buses[static_cast<std::size_t>(order[k])];
    if (b.type == BusType::slack) continue;
    double p = -b.pd, q = -b.qd;
    bool has_gen = false;
    for (const auto& gen : g.generators) {
      if (gen.in_service && gen.bus == b.id) {
        p += gen.pg;
        q += gen.qg;
        has_gen = true;
      }
    }
    const auto i = static_cast<Eigen::Index>(k);
    worst = std::max(worst, std::abs(s[i].real() - p / g.base_mva));
    if (!(b.type == BusType::pv && has_gen)) worst = std::max(worst, std::abs(s[i].imag() - q / g.base_mva));
  }
  return worst;
}

}  // namespace pf_oracle
