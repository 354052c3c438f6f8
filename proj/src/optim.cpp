#include "causalcde/optim.hpp"

#include <cmath>

namespace causalcde {

void adam_step(AdamState& state, VectorXd& params, const VectorXd& grads,
               double learning_rate) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ContractError("adam_step: shape mismatch");
  }
  if (!grads.allFinite()) throw NumericalError("adam_step: non-finite gradient");
  state.step += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v +
            (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params += learning_rate *
            (state.m / c1)
                .cwiseQuotient(((state.v / c2).cwiseSqrt().array() +
                                state.epsilon)
                                   .matrix());
}

AugLagState auglag_update(const AugLagState& state, double h_current) {
  if (!(h_current >= 0.0)) {
    throw ContractError("auglag_update: h must be nonnegative");
  }
  AugLagState next = state;
  next.subproblem_index = state.subproblem_index + 1;
  next.rho = state.rho + state.alpha * h_current;
  next.alpha = h_current > state.gamma * state.h_prev ? state.nu * state.alpha
                                                      : state.alpha;
  next.h_prev = h_current;
  return next;
}

ExpectationGrads to_expectation_grads(const VariationalGaussian& q,
                                      const VectorXd& d_mean,
                                      const MatrixXd& d_cov) {
  // With eta1 = m and eta2 = S + m m^T: S = eta2 - eta1 eta1^T, so
  // dL/d_eta1 = dL/dm - 2 (dL/dS) m and dL/d_eta2 = dL/dS (symmetric).
  const MatrixXd sym = 0.5 * (d_cov + d_cov.transpose());
  ExpectationGrads out;
  out.d_eta1 = d_mean - 2.0 * (sym * q.mean);
  out.d_eta2 = sym;
  return out;
}

VariationalGaussian natgrad_step(const VariationalGaussian& q,
                                 const ExpectationGrads& grads, double step) {
  q.validate();
  if (step == 0.0) return q;
  const int m = static_cast<int>(q.mean.size());
  const MatrixXd s = q.cov();
  // Natural parameters lambda1 = S^-1 m, lambda2 = -1/2 S^-1.
  Eigen::LLT<MatrixXd> llt_s(s);
  if (llt_s.info() != Eigen::Success) {
    throw NumericalError("natgrad_step: current covariance not PD");
  }
  const VectorXd lambda1 = llt_s.solve(q.mean);
  const MatrixXd s_inv = llt_s.solve(MatrixXd::Identity(m, m));
  const MatrixXd lambda2 = -0.5 * s_inv;

  double gamma = step;
  for (int attempt = 0; attempt < 6; ++attempt, gamma *= 0.5) {
    const VectorXd l1 = lambda1 + gamma * grads.d_eta1;
    const MatrixXd l2 = lambda2 + gamma * grads.d_eta2;
    // Recover S = -1/2 lambda2^-1; requires -lambda2 positive definite.
    const MatrixXd neg2 = -2.0 * l2;
    Eigen::LLT<MatrixXd> llt(0.5 * (neg2 + neg2.transpose()));
    if (llt.info() != Eigen::Success) continue;
    const MatrixXd s_new_inv = 0.5 * (neg2 + neg2.transpose());
    Eigen::LLT<MatrixXd> llt_inv(s_new_inv);
    const MatrixXd s_new = llt_inv.solve(MatrixXd::Identity(m, m));
    Eigen::LLT<MatrixXd> llt_new(0.5 * (s_new + s_new.transpose()));
    if (llt_new.info() != Eigen::Success) continue;
    VariationalGaussian out;
    out.mean = s_new * l1;
    out.cov_factor = llt_new.matrixL();
    return out;
  }
  throw NumericalError("natgrad_step: covariance left the PD cone after 5 halvings");
}

GradCheckReport grad_check(
    const std::function<double(const VectorXd&)>& objective,
    const std::function<VectorXd(const VectorXd&)>& gradient,
    const VectorXd& params, double tol, double fd_step,
    std::vector<int> indices) {
  const VectorXd analytic = gradient(params);
  if (analytic.size() != params.size()) {
    throw ContractError("grad_check: gradient size mismatch");
  }
  if (indices.empty()) {
    indices.resize(params.size());
    for (int i = 0; i < params.size(); ++i) indices[i] = i;
  }
  GradCheckReport report;
  report.rel_errors.reserve(indices.size());
  for (int idx : indices) {
    VectorXd p = params;
    p(idx) = params(idx) + fd_step;
    const double up = objective(p);
    p(idx) = params(idx) - fd_step;
    const double down = objective(p);
    const double numeric = (up - down) / (2.0 * fd_step);
    const double denom =
        std::max({std::abs(analytic(idx)), std::abs(numeric), 1e-4});
    const double rel = std::abs(analytic(idx) - numeric) / denom;
    report.rel_errors.push_back(rel);
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = idx;
      report.worst_analytic = analytic(idx);
      report.worst_numeric = numeric;
    }
  }
  report.pass = report.max_rel_error <= tol;
  return report;
}

BfgsResult bfgs_maximize(
    const std::function<double(const VectorXd&)>& objective,
    const std::function<VectorXd(const VectorXd&)>& gradient, VectorXd params,
    int max_iters, double grad_tol) {
  const int n = static_cast<int>(params.size());
  MatrixXd h_inv = MatrixXd::Identity(n, n);
  double value = objective(params);
  VectorXd grad = gradient(params);
  BfgsResult result;
  for (int iter = 0; iter < max_iters; ++iter) {
    if (grad.norm() < grad_tol) {
      result.converged = true;
      break;
    }
    VectorXd direction = h_inv * grad;
    if (direction.dot(grad) <= 0.0) {
      h_inv = MatrixXd::Identity(n, n);
      direction = grad;
    }
    // Armijo backtracking on the ascent direction.
    double t = 1.0;
    const double slope = grad.dot(direction);
    double new_value = value;
    VectorXd new_params = params;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
      new_params = params + t * direction;
      new_value = objective(new_params);
      if (std::isfinite(new_value) && new_value >= value + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const VectorXd new_grad = gradient(new_params);
    const VectorXd s = new_params - params;
    const VectorXd y = grad - new_grad;  // ascent: curvature uses -delta grad
    const double sy = s.dot(y);
    if (sy > 1e-10) {
      const VectorXd hy = h_inv * y;
      const double yhy = y.dot(hy);
      h_inv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
               (hy * s.transpose() + s * hy.transpose()) / sy;
    }
    params = new_params;
    value = new_value;
    grad = new_grad;
    result.iterations = iter + 1;
  }
  result.params = std::move(params);
  result.value = value;
  return result;
}

}  // namespace causalcde
