#pragma once

#include <functional>
#include <vector>

#include "causalcde/common.hpp"
#include "causalcde/svgp.hpp"

namespace causalcde {

// Bias-corrected Adam for ascent on an objective.
struct AdamState {
  VectorXd m;  // first moment
  VectorXd v;  // second moment
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState create(int n) {
    return {VectorXd::Zero(n), VectorXd::Zero(n), 0};
  }
};

// One ascent step; params and grads must match the state shape.
void adam_step(AdamState& state, VectorXd& params, const VectorXd& grads,
               double learning_rate);

// Augmented Lagrangian coefficients and their update schedule:
//   rho_{t+1} = rho_t + alpha_t h,
//   alpha_{t+1} = nu alpha_t if h > gamma h_prev else alpha_t.
struct AugLagState {
  int subproblem_index = 0;
  double alpha = 0.0;
  double rho = 0.0;
  double h_prev = 0.0;
  double nu = 10.0;
  double gamma = 0.9;
};

AugLagState auglag_update(const AugLagState& state, double h_current);

// Gradient of the bound in Gaussian expectation parameters
// (eta1, eta2) = (m, S + m m^T).
struct ExpectationGrads {
  VectorXd d_eta1;
  MatrixXd d_eta2;
};

ExpectationGrads to_expectation_grads(const VariationalGaussian& q,
                                      const VectorXd& d_mean,
                                      const MatrixXd& d_cov);

// One natural-gradient ascent step in the natural/expectation duality.
// Rejects and halves the step up to 5 times if the covariance leaves the
// positive definite cone; throws NumericalError on persistent failure.
VariationalGaussian natgrad_step(const VariationalGaussian& q,
                                 const ExpectationGrads& grads, double step);

// Finite-difference gradient verification report.
struct GradCheckReport {
  bool pass = false;
  double max_rel_error = 0.0;
  int worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<double> rel_errors;  // per checked coordinate
};

// Central differences (given step) against an analytic gradient, on the
// coordinate subset `indices` (all coordinates when empty). The objective
// must be deterministic.
GradCheckReport grad_check(
    const std::function<double(const VectorXd&)>& objective,
    const std::function<VectorXd(const VectorXd&)>& gradient,
    const VectorXd& params, double tol, double fd_step = 1e-5,
    std::vector<int> indices = {});

// Dense BFGS ascent with Armijo backtracking; used as the optional
// quasi-Newton refinement stage of the discrete fits.
struct BfgsResult {
  VectorXd params;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

BfgsResult bfgs_maximize(const std::function<double(const VectorXd&)>& objective,
                         const std::function<VectorXd(const VectorXd&)>& gradient,
                         VectorXd params, int max_iters, double grad_tol);

}  // namespace causalcde
