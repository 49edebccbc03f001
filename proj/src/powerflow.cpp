#include "powerformer/powerflow.hpp"

#include "powerformer/error.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <queue>
#include <unordered_map>

namespace powerformer {

namespace {

using cd = std::complex<double>;
constexpr double kDeg = std::numbers::pi / 180.0;

struct Indexing {
  std::vector<int> order;  // node -> position in buses
  std::unordered_map<int, int> node;
  int slack = -1;
  std::vector<int> pv, pq;
};

Indexing index_buses(const GridCase& grid) {
  Indexing ix;
  ix.order = grid.bus_order();
  std::vector<bool> has_gen(ix.order.size(), false);
  for (std::size_t k = 0; k < ix.order.size(); ++k) {
    ix.node[grid.buses[static_cast<std::size_t>(ix.order[k])].id] = static_cast<int>(k);
  }
  for (const auto& g : grid.generators) {
    if (g.in_service) has_gen[static_cast<std::size_t>(ix.node.at(g.bus))] = true;
  }
  for (std::size_t k = 0; k < ix.order.size(); ++k) {
    const Bus& b = grid.buses[static_cast<std::size_t>(ix.order[k])];
    const int node = static_cast<int>(k);
    if (b.type == BusType::slack) {
      if (ix.slack >= 0) throw Error(ErrorCode::InvalidCase, "more than one slack bus");
      ix.slack = node;
    } else if (b.type == BusType::pv && has_gen[k]) {
      ix.pv.push_back(node);
    } else {
      // PV buses without an in-service unit are solved as PQ
      ix.pq.push_back(node);
    }
  }
  if (ix.slack < 0) throw Error(ErrorCode::NoSlackBus, "case has no slack bus");
  return ix;
}

Eigen::VectorXcd specified_injection(const GridCase& grid, const Indexing& ix) {
  const auto n = static_cast<Eigen::Index>(ix.order.size());
  Eigen::VectorXcd s = Eigen::VectorXcd::Zero(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Bus& b = grid.buses[static_cast<std::size_t>(ix.order[static_cast<std::size_t>(k)])];
    s[k] = cd(-b.pd, -b.qd);
  }
  for (const auto& g : grid.generators) {
    if (g.in_service) s[ix.node.at(g.bus)] += cd(g.pg, g.qg);
  }
  return s / grid.base_mva;
}

Eigen::VectorXd branch_active_dc(const GridCase& grid, const Indexing& ix, const Eigen::VectorXd& va) {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.branches.size()));
  for (std::size_t i = 0; i < grid.branches.size(); ++i) {
    const auto& br = grid.branches[i];
    if (!br.in_service) continue;
    p[static_cast<Eigen::Index>(i)] = (va[ix.node.at(br.from)] - va[ix.node.at(br.to)]) / br.x * grid.base_mva;
  }
  return p;
}

void fill_branch_flows(const GridCase& grid, const Indexing& ix, const Eigen::VectorXcd& v, PowerFlowSolution& sol) {
  const auto m = static_cast<Eigen::Index>(grid.branches.size());
  sol.branch_p = Eigen::VectorXd::Zero(m);
  sol.branch_q = Eigen::VectorXd::Zero(m);
  for (std::size_t i = 0; i < grid.branches.size(); ++i) {
    const auto& br = grid.branches[i];
    if (!br.in_service) continue;
    const cd ys = 1.0 / cd(br.r, br.x);
    const cd vf = v[ix.node.at(br.from)];
    const cd vt = v[ix.node.at(br.to)];
    const cd i_from = (ys + cd(0.0, br.b / 2.0)) * vf - ys * vt;
    const cd s_from = vf * std::conj(i_from) * grid.base_mva;
    sol.branch_p[static_cast<Eigen::Index>(i)] = s_from.real();
    sol.branch_q[static_cast<Eigen::Index>(i)] = s_from.imag();
  }
}

}  // namespace

Eigen::MatrixXcd build_ybus(const GridCase& grid) {
  const Indexing ix = index_buses(grid);
  const auto n = static_cast<Eigen::Index>(ix.order.size());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (std::size_t i = 0; i < grid.branches.size(); ++i) {
    const auto& br = grid.branches[i];
    if (!br.in_service) continue;
    if (br.r == 0.0 && br.x == 0.0) {
      throw Error(ErrorCode::SingularJacobian, "branch " + std::to_string(i) + " (" + std::to_string(br.from) + "-" +
                                                   std::to_string(br.to) + ") has zero impedance");
    }
    const cd ys = 1.0 / cd(br.r, br.x);
    const cd half_b(0.0, br.b / 2.0);
    const int f = ix.node.at(br.from);
    const int t = ix.node.at(br.to);
    y(f, f) += ys + half_b;
    y(t, t) += ys + half_b;
    y(f, t) -= ys;
    y(t, f) -= ys;
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    const Bus& b = grid.buses[static_cast<std::size_t>(ix.order[static_cast<std::size_t>(k)])];
    y(k, k) += cd(b.gs, b.bs) / grid.base_mva;
  }
  return y;
}

double ac_mismatch(const GridCase& grid, const Eigen::VectorXd& vm, const Eigen::VectorXd& va) {
  const Indexing ix = index_buses(grid);
  const Eigen::MatrixXcd y = build_ybus(grid);
  const Eigen::VectorXcd sbus = specified_injection(grid, ix);
  Eigen::VectorXcd v(vm.size());
  for (Eigen::Index k = 0; k < vm.size(); ++k) v[k] = std::polar(vm[k], va[k]);
  const Eigen::VectorXcd mis = v.cwiseProduct((y * v).conjugate()) - sbus;
  double worst = 0.0;
  for (int k : ix.pv) worst = std::max(worst, std::abs(mis[k].real()));
  for (int k : ix.pq) worst = std::max({worst, std::abs(mis[k].real()), std::abs(mis[k].imag())});
  return worst;
}

PowerFlowSolution solve_ac(const GridCase& grid, const AcOptions& options) {
  if (!(options.tol > 0.0)) throw Error(ErrorCode::InvalidCase, "tolerance must be positive");
  const Indexing ix = index_buses(grid);
  const Eigen::MatrixXcd ybus = build_ybus(grid);
  const Eigen::VectorXcd sbus = specified_injection(grid, ix);
  const auto n = static_cast<Eigen::Index>(ix.order.size());

  Eigen::VectorXd vm(n), va(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Bus& b = grid.buses[static_cast<std::size_t>(ix.order[static_cast<std::size_t>(k)])];
    const bool stored = !options.flat_start && b.vm > 0.0;
    vm[k] = stored ? b.vm : 1.0;
    va[k] = stored ? b.va * kDeg : 0.0;
  }
  const Bus& slack_bus = grid.buses[static_cast<std::size_t>(ix.order[static_cast<std::size_t>(ix.slack)])];
  va[ix.slack] = slack_bus.va * kDeg;
  for (const auto& g : grid.generators) {
    const int k = ix.node.at(g.bus);
    if (g.in_service && (k == ix.slack || std::find(ix.pv.begin(), ix.pv.end(), k) != ix.pv.end())) {
      vm[k] = g.vg;
    }
  }

  std::vector<int> pvpq = ix.pv;
  pvpq.insert(pvpq.end(), ix.pq.begin(), ix.pq.end());
  const auto npvpq = static_cast<Eigen::Index>(pvpq.size());
  const auto npq = static_cast<Eigen::Index>(ix.pq.size());

  Eigen::VectorXcd v(n);
  auto assemble = [&] {
    for (Eigen::Index k = 0; k < n; ++k) v[k] = std::polar(vm[k], va[k]);
  };
  Eigen::VectorXd f(npvpq + npq);
  auto evaluate = [&] {
    const Eigen::VectorXcd mis = v.cwiseProduct((ybus * v).conjugate()) - sbus;
    for (Eigen::Index i = 0; i < npvpq; ++i) f[i] = mis[pvpq[static_cast<std::size_t>(i)]].real();
    for (Eigen::Index i = 0; i < npq; ++i) f[npvpq + i] = mis[ix.pq[static_cast<std::size_t>(i)]].imag();
    return f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
  };

  assemble();
  double worst = evaluate();
  int iter = 0;
  while (worst > options.tol && iter < options.max_iter) {
    ++iter;
    // dS/dVa = j diag(V) conj(diag(I) - Y diag(V)),  dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
    const Eigen::VectorXcd ibus = ybus * v;
    const Eigen::VectorXcd vnorm = v.cwiseQuotient(vm.cast<cd>());
    Eigen::MatrixXcd ds_dva = -(ybus * v.asDiagonal());
    ds_dva.diagonal() += ibus;
    ds_dva = (v.asDiagonal() * ds_dva.conjugate()) * cd(0.0, 1.0);
    Eigen::MatrixXcd ds_dvm = v.asDiagonal() * (ybus * vnorm.asDiagonal()).conjugate();
    ds_dvm.diagonal() += ibus.conjugate().cwiseProduct(vnorm);

    Eigen::MatrixXd jac(npvpq + npq, npvpq + npq);
    for (Eigen::Index r = 0; r < npvpq; ++r) {
      const int br = pvpq[static_cast<std::size_t>(r)];
      for (Eigen::Index c = 0; c < npvpq; ++c) jac(r, c) = ds_dva(br, pvpq[static_cast<std::size_t>(c)]).real();
      for (Eigen::Index c = 0; c < npq; ++c) jac(r, npvpq + c) = ds_dvm(br, ix.pq[static_cast<std::size_t>(c)]).real();
    }
    for (Eigen::Index r = 0; r < npq; ++r) {
      const int br = ix.pq[static_cast<std::size_t>(r)];
      for (Eigen::Index c = 0; c < npvpq; ++c) {
        jac(npvpq + r, c) = ds_dva(br, pvpq[static_cast<std::size_t>(c)]).imag();
      }
      for (Eigen::Index c = 0; c < npq; ++c) {
        jac(npvpq + r, npvpq + c) = ds_dvm(br, ix.pq[static_cast<std::size_t>(c)]).imag();
      }
    }
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    const Eigen::VectorXd dx = lu.solve(-f);
    if (!dx.allFinite() || !(lu.rcond() > 1e-14)) {
      throw Error(ErrorCode::SingularJacobian, "Jacobian is singular at iteration " + std::to_string(iter) +
                                                   " (rcond " + std::to_string(lu.rcond()) + ")");
    }
    for (Eigen::Index i = 0; i < npvpq; ++i) va[pvpq[static_cast<std::size_t>(i)]] += dx[i];
    for (Eigen::Index i = 0; i < npq; ++i) vm[ix.pq[static_cast<std::size_t>(i)]] += dx[npvpq + i];
    assemble();
    worst = evaluate();
    if (!std::isfinite(worst)) break;
  }
  if (!(worst <= options.tol)) {
    throw Error(ErrorCode::NonConvergence, "no convergence after " + std::to_string(iter) +
                                               " iterations, max mismatch " + std::to_string(worst) + " p.u.");
  }

  PowerFlowSolution sol;
  sol.vm = vm;
  sol.va = va;
  const Eigen::VectorXcd s = v.cwiseProduct((ybus * v).conjugate()) * grid.base_mva;
  sol.p_inj = s.real();
  sol.q_inj = s.imag();
  fill_branch_flows(grid, ix, v, sol);
  sol.converged = true;
  sol.iterations = iter;
  sol.max_mismatch = worst;
  return sol;
}

PowerFlowSolution solve_dc(const GridCase& grid) {
  const Indexing ix = index_buses(grid);
  const auto n = static_cast<Eigen::Index>(ix.order.size());

  std::vector<std::vector<int>> neighbours(static_cast<std::size_t>(n));
  Eigen::MatrixXd bbus = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < grid.branches.size(); ++i) {
    const auto& br = grid.branches[i];
    if (!br.in_service) continue;
    if (!(br.x > 0.0)) {
      throw Error(ErrorCode::InvalidCase, "DC power flow needs x > 0 on branch " + std::to_string(i));
    }
    const int f = ix.node.at(br.from);
    const int t = ix.node.at(br.to);
    const double b = 1.0 / br.x;
    bbus(f, f) += b;
    bbus(t, t) += b;
    bbus(f, t) -= b;
    bbus(t, f) -= b;
    neighbours[static_cast<std::size_t>(f)].push_back(t);
    neighbours[static_cast<std::size_t>(t)].push_back(f);
  }

  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::queue<int> frontier;
  frontier.push(ix.slack);
  seen[static_cast<std::size_t>(ix.slack)] = true;
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (int w : neighbours[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(w)]) {
        seen[static_cast<std::size_t>(w)] = true;
        frontier.push(w);
      }
    }
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    if (!seen[static_cast<std::size_t>(k)]) {
      const Bus& b = grid.buses[static_cast<std::size_t>(ix.order[static_cast<std::size_t>(k)])];
      throw Error(ErrorCode::SingularSystem, "bus " + std::to_string(b.id) + " is not connected to the slack bus");
    }
  }

  Eigen::VectorXd pinj = specified_injection(grid, ix).real();
  for (Eigen::Index k = 0; k < n; ++k) {
    pinj[k] -= grid.buses[static_cast<std::size_t>(ix.order[static_cast<std::size_t>(k)])].gs / grid.base_mva;
  }

  std::vector<int> keep;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (k != ix.slack) keep.push_back(static_cast<int>(k));
  }
  const auto nr = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd bred(nr, nr);
  Eigen::VectorXd pred(nr);
  for (Eigen::Index r = 0; r < nr; ++r) {
    pred[r] = pinj[keep[static_cast<std::size_t>(r)]];
    for (Eigen::Index c = 0; c < nr; ++c) bred(r, c) = bbus(keep[static_cast<std::size_t>(r)], keep[static_cast<std::size_t>(c)]);
  }

  const double slack_angle =
      grid.buses[static_cast<std::size_t>(ix.order[static_cast<std::size_t>(ix.slack)])].va * kDeg;
  Eigen::VectorXd va = Eigen::VectorXd::Constant(n, slack_angle);
  if (nr > 0) {
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(bred);
    const Eigen::VectorXd theta = lu.solve(pred);
    if (!theta.allFinite()) throw Error(ErrorCode::SingularSystem, "reduced susceptance matrix is singular");
    for (Eigen::Index r = 0; r < nr; ++r) va[keep[static_cast<std::size_t>(r)]] += theta[r];
  }

  PowerFlowSolution sol;
  sol.vm = Eigen::VectorXd::Ones(n);
  sol.va = va;
  sol.p_inj = bbus * va * grid.base_mva;
  for (Eigen::Index k = 0; k < n; ++k) {
    sol.p_inj[k] += grid.buses[static_cast<std::size_t>(ix.order[static_cast<std::size_t>(k)])].gs;
  }
  sol.q_inj = Eigen::VectorXd::Zero(n);
  sol.branch_p = branch_active_dc(grid, ix, va);
  sol.branch_q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.branches.size()));
  sol.converged = true;
  sol.iterations = 1;
  sol.max_mismatch = 0.0;
  return sol;
}

Eigen::VectorXd generator_outputs(const GridCase& grid, const PowerFlowSolution& sol) {
  const Indexing ix = index_buses(grid);
  Eigen::VectorXd pg(static_cast<Eigen::Index>(grid.generators.size()));
  double slack_capacity = 0.0;
  for (std::size_t i = 0; i < grid.generators.size(); ++i) {
    const auto& g = grid.generators[i];
    pg[static_cast<Eigen::Index>(i)] = g.in_service ? g.pg : 0.0;
    if (g.in_service && ix.node.at(g.bus) == ix.slack) {
      slack_capacity += g.pmax;
    }
  }
  const Bus& sb = grid.buses[static_cast<std::size_t>(ix.order[static_cast<std::size_t>(ix.slack)])];
  // everything at the slack bus that is not load is slack generation
  const double slack_total = sol.p_inj[ix.slack] + sb.pd;
  int slack_units = 0;
  for (const auto& g : grid.generators) {
    if (g.in_service && ix.node.at(g.bus) == ix.slack) ++slack_units;
  }
  for (std::size_t i = 0; i < grid.generators.size(); ++i) {
    const auto& g = grid.generators[i];
    if (!g.in_service || ix.node.at(g.bus) != ix.slack) continue;
    const double share = slack_capacity > 0.0 ? g.pmax / slack_capacity : 1.0 / slack_units;
    pg[static_cast<Eigen::Index>(i)] = slack_total * share;
  }
  return pg;
}

double economic_cost(const GridCase& grid, const Eigen::VectorXd& pg) {
  double total = 0.0;
  for (std::size_t i = 0; i < grid.generators.size(); ++i) {
    if (!grid.generators[i].in_service) continue;
    const auto& c = grid.gencost[i];
    const double p = pg[static_cast<Eigen::Index>(i)];
    total += c.alpha * p * p + c.beta * p + c.lambda;
  }
  return total;
}

SectionFlow section_flow(const PowerFlowSolution& sol, const Section& section) {
  if (!sol.converged) throw Error(ErrorCode::NotConverged, "section flow needs a converged solution");
  SectionFlow out;
  for (std::size_t i = 0; i < section.branches.size(); ++i) {
    const auto b = static_cast<Eigen::Index>(section.branches[i]);
    if (b < 0 || b >= sol.branch_p.size()) {
      throw Error(ErrorCode::UnknownBranch, "section " + std::to_string(section.id) + " refers to branch " +
                                                std::to_string(b) + " outside the solution");
    }
    out.p += section.orientation[i] * sol.branch_p[b];
    out.q += section.orientation[i] * sol.branch_q[b];
  }
  out.within_p_bounds = section.p_min <= out.p && out.p <= section.p_max;
  if (section.q_min) out.within_q_bounds = out.within_q_bounds && *section.q_min <= out.q;
  if (section.q_max) out.within_q_bounds = out.within_q_bounds && out.q <= *section.q_max;
  return out;
}

FeatureScaler FeatureScaler::fit(const Eigen::MatrixXd& stacked) {
  FeatureScaler s;
  if (stacked.rows() == 0) return s;
  s.mean = stacked.colwise().mean();
  const Eigen::MatrixXd centered = stacked.rowwise() - s.mean;
  s.stddev = (centered.array().square().colwise().sum() / static_cast<double>(stacked.rows())).sqrt();
  return s;
}

Eigen::MatrixXd FeatureScaler::apply(const Eigen::MatrixXd& raw) const {
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    // relative threshold: a column that is constant up to rounding carries no information
    const double scale = std::max(1.0, std::abs(mean[c]));
    if (stddev[c] <= 1e-12 * scale) {
      out.col(c).setZero();
    } else {
      out.col(c) = (raw.col(c).array() - mean[c]) / stddev[c];
    }
  }
  return out;
}

Eigen::MatrixXd raw_state(const PowerFlowSolution& sol) {
  if (!sol.converged) throw Error(ErrorCode::NotConverged, "state features need a converged solution");
  Eigen::MatrixXd h(sol.vm.size(), 4);
  h.col(0) = sol.p_inj;
  h.col(1) = sol.q_inj;
  h.col(2) = sol.vm;
  h.col(3) = sol.va;
  return h;
}

Eigen::MatrixXd state_features(const PowerFlowSolution& sol, const std::optional<FeatureScaler>& scaler) {
  const Eigen::MatrixXd raw = raw_state(sol);
  const FeatureScaler s = scaler ? *scaler : FeatureScaler::fit(raw);
  return s.apply(raw);
}

}  // namespace powerformer
