#include "causalcde/kernels.hpp"

#include <cmath>

namespace causalcde {

namespace {

constexpr double kSqrt3 = 1.7320508075688772935;
constexpr double kSqrt5 = 2.2360679774997896964;

void check_inputs(const NodeKernelParams& params, const MatrixXd& u,
                  const MatrixXd& v) {
  params.validate();
  if (u.cols() != params.input_dim || v.cols() != params.input_dim) {
    throw ContractError("eval_kernel: input column count must equal input_dim");
  }
}

void check_vec(const VectorXd& v, int n, const char* name) {
  if (v.size() != n) {
    throw ContractError(std::string("NodeKernelParams: ") + name +
                        " has wrong length");
  }
  for (int i = 0; i < n; ++i) {
    if (!(v(i) >= 0.0) || !std::isfinite(v(i))) {
      throw ContractError(std::string("NodeKernelParams: ") + name +
                          " must be finite and nonnegative");
    }
  }
}

}  // namespace

NodeKernelParams NodeKernelParams::zeros(int input_dim) {
  NodeKernelParams p;
  p.input_dim = input_dim;
  p.theta_lin = VectorXd::Zero(input_dim);
  p.theta_sqe = VectorXd::Zero(input_dim);
  p.theta_m12 = VectorXd::Zero(input_dim);
  p.theta_m32 = VectorXd::Zero(input_dim);
  p.theta_rq = VectorXd::Zero(input_dim);
  return p;
}

void NodeKernelParams::validate() const {
  if (input_dim < 1) {
    throw ContractError("NodeKernelParams: input_dim must be >= 1");
  }
  check_vec(theta_lin, input_dim, "theta_lin");
  check_vec(theta_sqe, input_dim, "theta_sqe");
  check_vec(theta_m12, input_dim, "theta_m12");
  check_vec(theta_m32, input_dim, "theta_m32");
  check_vec(theta_rq, input_dim, "theta_rq");
  if (theta_m52.size() > 0) check_vec(theta_m52, input_dim, "theta_m52");
  if (!(var_sqe >= 0.0 && var_m12 >= 0.0 && var_m32 >= 0.0 &&
        var_rq >= 0.0 && var_m52 >= 0.0)) {
    throw ContractError("NodeKernelParams: kernel variances must be >= 0");
  }
  if (!(rq_shape > 0.0)) {
    throw ContractError("NodeKernelParams: rq_shape must be > 0");
  }
}

MatrixXd eval_kernel(const NodeKernelParams& params, const MatrixXd& u,
                     const MatrixXd& v, KernelKind which) {
  check_inputs(params, u, v);
  const auto n = u.rows();
  const auto m = v.rows();
  const int dims = params.input_dim;
  MatrixXd k = MatrixXd::Zero(n, m);

  const bool want_sum = which == KernelKind::kSum;
  if (want_sum || which == KernelKind::kLin) {
    for (int d = 0; d < dims; ++d) {
      if (params.theta_lin(d) != 0.0) {
        k.noalias() += params.theta_lin(d) * (u.col(d) * v.col(d).transpose());
      }
    }
  }
  if ((want_sum || which == KernelKind::kSqe) && params.var_sqe != 0.0) {
    MatrixXd acc = MatrixXd::Zero(n, m);
    for (int d = 0; d < dims; ++d) {
      const double t2 = params.theta_sqe(d) * params.theta_sqe(d);
      const MatrixXd delta =
          u.col(d).replicate(1, m) - v.col(d).transpose().replicate(n, 1);
      acc += (-0.5 * t2 * delta.array().square()).exp().matrix();
    }
    k += params.var_sqe * acc;
  }
  if ((want_sum || which == KernelKind::kM12) && params.var_m12 != 0.0) {
    MatrixXd acc = MatrixXd::Zero(n, m);
    for (int d = 0; d < dims; ++d) {
      const MatrixXd r = (u.col(d).replicate(1, m) -
                          v.col(d).transpose().replicate(n, 1))
                             .cwiseAbs();
      acc += (-params.theta_m12(d) * r.array()).exp().matrix();
    }
    k += params.var_m12 * acc;
  }
  if ((want_sum || which == KernelKind::kM32) && params.var_m32 != 0.0) {
    MatrixXd acc = MatrixXd::Zero(n, m);
    for (int d = 0; d < dims; ++d) {
      const MatrixXd r = (u.col(d).replicate(1, m) -
                          v.col(d).transpose().replicate(n, 1))
                             .cwiseAbs();
      const Eigen::ArrayXXd s = kSqrt3 * params.theta_m32(d) * r.array();
      acc += ((1.0 + s) * (-s).exp()).matrix();
    }
    k += params.var_m32 * acc;
  }
  if (which == KernelKind::kM52) {
    if (params.theta_m52.size() == 0) {
      throw ContractError("eval_kernel: theta_m52 not configured");
    }
    MatrixXd acc = MatrixXd::Zero(n, m);
    for (int d = 0; d < dims; ++d) {
      const MatrixXd r = (u.col(d).replicate(1, m) -
                          v.col(d).transpose().replicate(n, 1))
                             .cwiseAbs();
      const Eigen::ArrayXXd s = kSqrt5 * params.theta_m52(d) * r.array();
      acc += ((1.0 + s + s.square() / 3.0) * (-s).exp()).matrix();
    }
    k += params.var_m52 * acc;
  }
  if ((want_sum || which == KernelKind::kRq) && params.var_rq != 0.0) {
    MatrixXd acc = MatrixXd::Zero(n, m);
    const double a = params.rq_shape;
    for (int d = 0; d < dims; ++d) {
      const double t2 = params.theta_rq(d) * params.theta_rq(d);
      const MatrixXd delta =
          u.col(d).replicate(1, m) - v.col(d).transpose().replicate(n, 1);
      acc += (1.0 + t2 / (2.0 * a) * delta.array().square())
                 .pow(-a)
                 .matrix();
    }
    k += params.var_rq * acc;
  }
  return k;
}

VectorXd eval_kernel_diag(const NodeKernelParams& params, const MatrixXd& u,
                          KernelKind which) {
  check_inputs(params, u, u);
  const auto n = u.rows();
  const int dims = params.input_dim;
  VectorXd k = VectorXd::Zero(n);
  const bool want_sum = which == KernelKind::kSum;
  if (want_sum || which == KernelKind::kLin) {
    for (int d = 0; d < dims; ++d) {
      if (params.theta_lin(d) != 0.0) {
        k += params.theta_lin(d) * u.col(d).cwiseAbs2();
      }
    }
  }
  // Stationary summands are constant on the diagonal: one sigma^2 per dim.
  double stationary = 0.0;
  if (want_sum || which == KernelKind::kSqe) stationary += params.var_sqe;
  if (want_sum || which == KernelKind::kM12) stationary += params.var_m12;
  if (want_sum || which == KernelKind::kM32) stationary += params.var_m32;
  if (want_sum || which == KernelKind::kRq) stationary += params.var_rq;
  if (which == KernelKind::kM52) stationary += params.var_m52;
  k.array() += stationary * dims;
  return k;
}

KernelGrads kernel_vjp(const NodeKernelParams& params, const MatrixXd& u,
                       const MatrixXd& v, KernelKind which,
                       const MatrixXd& g) {
  check_inputs(params, u, v);
  if (g.rows() != u.rows() || g.cols() != v.rows()) {
    throw ContractError("kernel_vjp: cotangent shape mismatch");
  }
  const auto n = u.rows();
  const auto m = v.rows();
  const int dims = params.input_dim;
  KernelGrads out;
  out.theta_lin = VectorXd::Zero(dims);
  out.theta_sqe = VectorXd::Zero(dims);
  out.theta_m12 = VectorXd::Zero(dims);
  out.theta_m32 = VectorXd::Zero(dims);
  out.theta_rq = VectorXd::Zero(dims);
  out.theta_m52 = VectorXd::Zero(dims);
  out.du = MatrixXd::Zero(n, dims);
  out.dv = MatrixXd::Zero(m, dims);

  const bool want_sum = which == KernelKind::kSum;
  const bool lin_active = (params.theta_lin.array() != 0.0).any();
  if ((want_sum || which == KernelKind::kLin) && lin_active) {
    for (int d = 0; d < dims; ++d) {
      out.theta_lin(d) = (g.array() *
                          (u.col(d) * v.col(d).transpose()).array())
                             .sum();
      out.du.col(d) += params.theta_lin(d) * (g * v.col(d));
      out.dv.col(d) += params.theta_lin(d) * (g.transpose() * u.col(d));
    }
  }
  if ((want_sum || which == KernelKind::kSqe) && params.var_sqe != 0.0) {
    double dvar = 0.0;
    for (int d = 0; d < dims; ++d) {
      const double theta = params.theta_sqe(d);
      const MatrixXd delta =
          u.col(d).replicate(1, m) - v.col(d).transpose().replicate(n, 1);
      const Eigen::ArrayXXd e =
          (-0.5 * theta * theta * delta.array().square()).exp();
      dvar += (g.array() * e).sum();
      out.theta_sqe(d) = params.var_sqe *
                         (g.array() * e * (-theta) * delta.array().square())
                             .sum();
      const MatrixXd dk_ddelta =
          (params.var_sqe * g.array() * e * (-theta * theta) * delta.array())
              .matrix();
      out.du.col(d) += dk_ddelta.rowwise().sum();
      out.dv.col(d) -= dk_ddelta.colwise().sum().transpose();
    }
    out.var_sqe = dvar;
  }
  if ((want_sum || which == KernelKind::kM12) && params.var_m12 != 0.0) {
    double dvar = 0.0;
    for (int d = 0; d < dims; ++d) {
      const double theta = params.theta_m12(d);
      const MatrixXd delta =
          u.col(d).replicate(1, m) - v.col(d).transpose().replicate(n, 1);
      const Eigen::ArrayXXd r = delta.array().abs();
      const Eigen::ArrayXXd e = (-theta * r).exp();
      dvar += (g.array() * e).sum();
      out.theta_m12(d) = params.var_m12 * (g.array() * e * (-r)).sum();
      const MatrixXd dk_ddelta =
          (params.var_m12 * g.array() * e * (-theta) * delta.array().sign())
              .matrix();
      out.du.col(d) += dk_ddelta.rowwise().sum();
      out.dv.col(d) -= dk_ddelta.colwise().sum().transpose();
    }
    out.var_m12 = dvar;
  }
  if ((want_sum || which == KernelKind::kM32) && params.var_m32 != 0.0) {
    double dvar = 0.0;
    for (int d = 0; d < dims; ++d) {
      const double theta = params.theta_m32(d);
      const MatrixXd delta =
          u.col(d).replicate(1, m) - v.col(d).transpose().replicate(n, 1);
      const Eigen::ArrayXXd r = delta.array().abs();
      const Eigen::ArrayXXd s = kSqrt3 * theta * r;
      const Eigen::ArrayXXd e = (-s).exp();
      dvar += (g.array() * (1.0 + s) * e).sum();
      // d/ds [(1+s)e^-s] = -s e^-s
      const Eigen::ArrayXXd dk_ds = params.var_m32 * g.array() * (-s) * e;
      out.theta_m32(d) = (dk_ds * kSqrt3 * r).sum();
      const MatrixXd dk_ddelta =
          (dk_ds * kSqrt3 * theta * delta.array().sign()).matrix();
      out.du.col(d) += dk_ddelta.rowwise().sum();
      out.dv.col(d) -= dk_ddelta.colwise().sum().transpose();
    }
    out.var_m32 = dvar;
  }
  if (which == KernelKind::kM52) {
    double dvar = 0.0;
    for (int d = 0; d < dims; ++d) {
      const double theta = params.theta_m52(d);
      const MatrixXd delta =
          u.col(d).replicate(1, m) - v.col(d).transpose().replicate(n, 1);
      const Eigen::ArrayXXd r = delta.array().abs();
      const Eigen::ArrayXXd s = kSqrt5 * theta * r;
      const Eigen::ArrayXXd e = (-s).exp();
      dvar += (g.array() * (1.0 + s + s.square() / 3.0) * e).sum();
      // d/ds [(1+s+s^2/3)e^-s] = -(s + s^2)/3 e^-s
      const Eigen::ArrayXXd dk_ds =
          params.var_m52 * g.array() * (-(s + s.square()) / 3.0) * e;
      out.theta_m52(d) = (dk_ds * kSqrt5 * r).sum();
      const MatrixXd dk_ddelta =
          (dk_ds * kSqrt5 * theta * delta.array().sign()).matrix();
      out.du.col(d) += dk_ddelta.rowwise().sum();
      out.dv.col(d) -= dk_ddelta.colwise().sum().transpose();
    }
    out.var_m52 = dvar;
  }
  if ((want_sum || which == KernelKind::kRq) && params.var_rq != 0.0) {
    double dvar = 0.0;
    double dshape = 0.0;
    const double a = params.rq_shape;
    for (int d = 0; d < dims; ++d) {
      const double theta = params.theta_rq(d);
      const MatrixXd delta =
          u.col(d).replicate(1, m) - v.col(d).transpose().replicate(n, 1);
      const Eigen::ArrayXXd q =
          theta * theta / (2.0 * a) * delta.array().square();
      const Eigen::ArrayXXd base = (1.0 + q).pow(-a);
      dvar += (g.array() * base).sum();
      const Eigen::ArrayXXd basem1 = (1.0 + q).pow(-a - 1.0);
      out.theta_rq(d) = params.var_rq *
                        (g.array() * basem1 * (-theta) *
                         delta.array().square())
                            .sum();
      dshape += params.var_rq *
                (g.array() * base * (-(1.0 + q).log() + q / (1.0 + q))).sum();
      const MatrixXd dk_ddelta =
          (params.var_rq * g.array() * basem1 * (-theta * theta) *
           delta.array())
              .matrix();
      out.du.col(d) += dk_ddelta.rowwise().sum();
      out.dv.col(d) -= dk_ddelta.colwise().sum().transpose();
    }
    out.var_rq = dvar;
    out.rq_shape = dshape;
  }
  return out;
}

KernelGrads kernel_diag_vjp(const NodeKernelParams& params, const MatrixXd& u,
                            KernelKind which, const VectorXd& g) {
  check_inputs(params, u, u);
  if (g.size() != u.rows()) {
    throw ContractError("kernel_diag_vjp: cotangent shape mismatch");
  }
  const int dims = params.input_dim;
  KernelGrads out;
  out.theta_lin = VectorXd::Zero(dims);
  out.theta_sqe = VectorXd::Zero(dims);
  out.theta_m12 = VectorXd::Zero(dims);
  out.theta_m32 = VectorXd::Zero(dims);
  out.theta_rq = VectorXd::Zero(dims);
  out.theta_m52 = VectorXd::Zero(dims);
  out.du = MatrixXd::Zero(u.rows(), dims);
  out.dv = MatrixXd::Zero(u.rows(), dims);

  const bool want_sum = which == KernelKind::kSum;
  const double gsum = g.sum();
  if (want_sum || which == KernelKind::kLin) {
    for (int d = 0; d < dims; ++d) {
      out.theta_lin(d) = g.dot(u.col(d).cwiseAbs2());
      out.du.col(d) +=
          2.0 * params.theta_lin(d) * g.cwiseProduct(u.col(d));
    }
  }
  if (want_sum || which == KernelKind::kSqe) out.var_sqe = dims * gsum;
  if (want_sum || which == KernelKind::kM12) out.var_m12 = dims * gsum;
  if (want_sum || which == KernelKind::kM32) out.var_m32 = dims * gsum;
  if (want_sum || which == KernelKind::kRq) out.var_rq = dims * gsum;
  if (which == KernelKind::kM52) out.var_m52 = dims * gsum;
  return out;
}

VectorXd dependence_weights(const NodeKernelParams& params) {
  params.validate();
  const int observed = params.input_dim - 1;
  VectorXd w(observed);
  for (int d = 0; d < observed; ++d) {
    w(d) = params.theta_lin(d) + params.theta_sqe(d) + params.theta_m12(d) +
           params.theta_m32(d) + params.theta_rq(d);
  }
  return w;
}

double latent_dependence_weight(const NodeKernelParams& params) {
  const int d = params.latent_index();
  return params.theta_lin(d) + params.theta_sqe(d) + params.theta_m12(d) +
         params.theta_m32(d) + params.theta_rq(d);
}

}  // namespace causalcde
