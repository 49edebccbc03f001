#pragma once

#include "powerformer/grid.hpp"

#include <Eigen/Dense>

#include <optional>

namespace powerformer {

// All per-bus arrays are in node order (ascending bus id); per-branch arrays follow GridCase::branches.
struct PowerFlowSolution {
  Eigen::VectorXd vm;        // p.u.
  Eigen::VectorXd va;        // rad
  Eigen::VectorXd p_inj;     // MW, net injection
  Eigen::VectorXd q_inj;     // MVAr
  Eigen::VectorXd branch_p;  // MW, from side
  Eigen::VectorXd branch_q;  // MVAr, from side
  bool converged = false;
  int iterations = 0;
  double max_mismatch = 0.0;  // p.u.
};

struct AcOptions {
  double tol = 1e-8;
  int max_iter = 20;
  bool flat_start = false;
};

// Newton-Raphson in polar coordinates from the stored voltage profile.
// Throws NonConvergence (with the last mismatch in the message) or SingularJacobian.
PowerFlowSolution solve_ac(const GridCase& grid, const AcOptions& options = {});

// B*theta = P with the slack angle fixed. Throws SingularSystem for islanded networks.
PowerFlowSolution solve_dc(const GridCase& grid);

// Complex bus admittance matrix (dense, node order, p.u.). Throws SingularJacobian on zero-impedance branches.
Eigen::MatrixXcd build_ybus(const GridCase& grid);

// Max |S_calc - S_spec| over the equations a Newton solve would enforce, in p.u.
double ac_mismatch(const GridCase& grid, const Eigen::VectorXd& vm, const Eigen::VectorXd& va);

// Generator active outputs consistent with the solution: set points, with slack-bus units taking the
// balance (shared by Pmax when several units sit on the slack bus).
Eigen::VectorXd generator_outputs(const GridCase& grid, const PowerFlowSolution& sol);

// Quadratic dispatch cost, Sum alpha*P^2 + beta*P + lambda over in-service generators.
double economic_cost(const GridCase& grid, const Eigen::VectorXd& pg);

struct SectionFlow {
  double p = 0.0;  // MW
  double q = 0.0;  // MVAr
  bool within_p_bounds = false;
  bool within_q_bounds = true;  // true when the section carries no reactive bounds
};

SectionFlow section_flow(const PowerFlowSolution& sol, const Section& section);

// Column statistics frozen from a training set. Zero-variance columns standardize to zero.
struct FeatureScaler {
  Eigen::RowVector4d mean = Eigen::RowVector4d::Zero();
  Eigen::RowVector4d stddev = Eigen::RowVector4d::Ones();

  static FeatureScaler fit(const Eigen::MatrixXd& stacked_raw);  // rows = samples, 4 cols
  Eigen::MatrixXd apply(const Eigen::MatrixXd& raw) const;
};

// n x 4 matrix (P injection MW, Q injection MVAr, Vm p.u., Va rad) before standardization.
Eigen::MatrixXd raw_state(const PowerFlowSolution& sol);

// Standardized n x 4 state. Without a scaler the matrix's own column statistics are used.
Eigen::MatrixXd state_features(const PowerFlowSolution& sol, const std::optional<FeatureScaler>& scaler = {});

}  // namespace powerformer
