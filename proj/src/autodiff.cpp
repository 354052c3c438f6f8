#include "causalcde/autodiff.hpp"

#include <cmath>
#include <utility>

#include "causalcde/matrix_exp.hpp"

namespace causalcde::ad {

int Tape::push(MatrixXd value, bool requires_grad, std::function<void()> fn) {
  Node node;
  if (requires_grad) {
    node.grad = MatrixXd::Zero(value.rows(), value.cols());
  }
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.backprop = std::move(fn);
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accum(Var v, const MatrixXd& g) {
  if (needs(v)) nodes_[v.i].grad += g;
}

Var Tape::var(MatrixXd value) { return {push(std::move(value), true, nullptr)}; }

Var Tape::constant(MatrixXd value) {
  return {push(std::move(value), false, nullptr)};
}

Var Tape::add(Var a, Var b) {
  const int out = push(value(a) + value(b), needs(a) || needs(b), nullptr);
  nodes_[out].backprop = [this, a, b, out] {
    accum(a, nodes_[out].grad);
    accum(b, nodes_[out].grad);
  };
  return {out};
}

Var Tape::sub(Var a, Var b) {
  const int out = push(value(a) - value(b), needs(a) || needs(b), nullptr);
  nodes_[out].backprop = [this, a, b, out] {
    accum(a, nodes_[out].grad);
    accum(b, -nodes_[out].grad);
  };
  return {out};
}

Var Tape::neg(Var a) { return scale(a, -1.0); }

Var Tape::scale(Var a, double c) {
  const int out = push(c * value(a), needs(a), nullptr);
  nodes_[out].backprop = [this, a, c, out] {
    accum(a, c * nodes_[out].grad);
  };
  return {out};
}

Var Tape::matmul(Var a, Var b) {
  const int out = push(value(a) * value(b), needs(a) || needs(b), nullptr);
  nodes_[out].backprop = [this, a, b, out] {
    const MatrixXd& g = nodes_[out].grad;
    if (needs(a)) accum(a, g * value(b).transpose());
    if (needs(b)) accum(b, value(a).transpose() * g);
  };
  return {out};
}

Var Tape::transpose(Var a) {
  const int out = push(value(a).transpose(), needs(a), nullptr);
  nodes_[out].backprop = [this, a, out] {
    accum(a, nodes_[out].grad.transpose());
  };
  return {out};
}

Var Tape::cwise_mul(Var a, Var b) {
  const int out =
      push(value(a).cwiseProduct(value(b)), needs(a) || needs(b), nullptr);
  nodes_[out].backprop = [this, a, b, out] {
    const MatrixXd& g = nodes_[out].grad;
    if (needs(a)) accum(a, g.cwiseProduct(value(b)));
    if (needs(b)) accum(b, g.cwiseProduct(value(a)));
  };
  return {out};
}

Var Tape::cwise_max(Var a, double floor) {
  const int out = push(value(a).cwiseMax(floor), needs(a), nullptr);
  nodes_[out].backprop = [this, a, floor, out] {
    const MatrixXd mask =
        (value(a).array() > floor).cast<double>().matrix();
    accum(a, nodes_[out].grad.cwiseProduct(mask));
  };
  return {out};
}

Var Tape::exp(Var a) {
  const int out = push(value(a).array().exp().matrix(), needs(a), nullptr);
  nodes_[out].backprop = [this, a, out] {
    accum(a, nodes_[out].grad.cwiseProduct(nodes_[out].value));
  };
  return {out};
}

Var Tape::log(Var a) {
  const int out = push(value(a).array().log().matrix(), needs(a), nullptr);
  nodes_[out].backprop = [this, a, out] {
    accum(a, nodes_[out].grad.cwiseQuotient(value(a)));
  };
  return {out};
}

Var Tape::square(Var a) {
  const int out = push(value(a).cwiseAbs2(), needs(a), nullptr);
  nodes_[out].backprop = [this, a, out] {
    accum(a, 2.0 * nodes_[out].grad.cwiseProduct(value(a)));
  };
  return {out};
}

Var Tape::softplus_all(Var a) {
  MatrixXd v = value(a);
  for (int j = 0; j < v.cols(); ++j) {
    for (int i = 0; i < v.rows(); ++i) v(i, j) = softplus(v(i, j));
  }
  const int out = push(std::move(v), needs(a), nullptr);
  nodes_[out].backprop = [this, a, out] {
    MatrixXd d = value(a);
    for (int j = 0; j < d.cols(); ++j) {
      for (int i = 0; i < d.rows(); ++i) d(i, j) = sigmoid(d(i, j));
    }
    accum(a, nodes_[out].grad.cwiseProduct(d));
  };
  return {out};
}

Var Tape::relu(Var a) {
  const int out = push(value(a).cwiseMax(0.0), needs(a), nullptr);
  nodes_[out].backprop = [this, a, out] {
    const MatrixXd mask = (value(a).array() > 0.0).cast<double>().matrix();
    accum(a, nodes_[out].grad.cwiseProduct(mask));
  };
  return {out};
}

Var Tape::col(Var a, int j) {
  const int out = push(value(a).col(j), needs(a), nullptr);
  nodes_[out].backprop = [this, a, j, out] {
    if (!needs(a)) return;
    MatrixXd g = MatrixXd::Zero(value(a).rows(), value(a).cols());
    g.col(j) = nodes_[out].grad;
    accum(a, g);
  };
  return {out};
}

Var Tape::add_rowvec(Var a, Var row) {
  MatrixXd v = value(a);
  v.rowwise() += value(row).row(0);
  const int out = push(std::move(v), needs(a) || needs(row), nullptr);
  nodes_[out].backprop = [this, a, row, out] {
    accum(a, nodes_[out].grad);
    if (needs(row)) accum(row, nodes_[out].grad.colwise().sum());
  };
  return {out};
}

Var Tape::mul_scalar(Var a, Var s) {
  const double sv = scalar_value(s);
  const int out = push(sv * value(a), needs(a) || needs(s), nullptr);
  nodes_[out].backprop = [this, a, s, sv, out] {
    const MatrixXd& g = nodes_[out].grad;
    if (needs(a)) accum(a, sv * g);
    if (needs(s)) {
      accum(s, MatrixXd::Constant(1, 1, g.cwiseProduct(value(a)).sum()));
    }
  };
  return {out};
}

Var Tape::div_scalar(Var a, Var s) {
  const double sv = scalar_value(s);
  const int out = push(value(a) / sv, needs(a) || needs(s), nullptr);
  nodes_[out].backprop = [this, a, s, sv, out] {
    const MatrixXd& g = nodes_[out].grad;
    if (needs(a)) accum(a, g / sv);
    if (needs(s)) {
      accum(s, MatrixXd::Constant(
                   1, 1, -g.cwiseProduct(nodes_[out].value).sum() / sv));
    }
  };
  return {out};
}

Var Tape::sum(Var a) {
  const int out =
      push(MatrixXd::Constant(1, 1, value(a).sum()), needs(a), nullptr);
  nodes_[out].backprop = [this, a, out] {
    if (!needs(a)) return;
    accum(a, MatrixXd::Constant(value(a).rows(), value(a).cols(),
                                nodes_[out].grad(0, 0)));
  };
  return {out};
}

Var Tape::colwise_sqnorm(Var a) {
  const int out = push(value(a).colwise().squaredNorm().transpose(), needs(a),
                       nullptr);
  nodes_[out].backprop = [this, a, out] {
    if (!needs(a)) return;
    const MatrixXd& g = nodes_[out].grad;  // cols x 1
    MatrixXd d = 2.0 * value(a);
    for (int j = 0; j < d.cols(); ++j) d.col(j) *= g(j, 0);
    accum(a, d);
  };
  return {out};
}

Var Tape::segment(Var a, int offset, int rows) {
  if (value(a).cols() != 1 || offset < 0 || offset + rows > value(a).rows()) {
    throw ContractError("Tape::segment: out of range or not a column vector");
  }
  const int out = push(value(a).block(offset, 0, rows, 1), needs(a), nullptr);
  nodes_[out].backprop = [this, a, offset, rows, out] {
    if (!needs(a)) return;
    MatrixXd g = MatrixXd::Zero(value(a).rows(), 1);
    g.block(offset, 0, rows, 1) = nodes_[out].grad;
    accum(a, g);
  };
  return {out};
}

Var Tape::reshape(Var a, int rows, int cols) {
  if (value(a).size() != rows * cols) {
    throw ContractError("Tape::reshape: size mismatch");
  }
  MatrixXd v = Eigen::Map<const MatrixXd>(value(a).data(), rows, cols);
  const int out = push(std::move(v), needs(a), nullptr);
  nodes_[out].backprop = [this, a, out] {
    if (!needs(a)) return;
    accum(a, Eigen::Map<const MatrixXd>(nodes_[out].grad.data(),
                                        value(a).rows(), value(a).cols()));
  };
  return {out};
}

Var Tape::cholesky(Var a, double jitter) {
  MatrixXd m = value(a);
  if (!m.allFinite()) {
    throw NumericalError("Tape::cholesky: non-finite input");
  }
  m.diagonal().array() += jitter;
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("Tape::cholesky: factorization failed");
  }
  const int out = push(MatrixXd(llt.matrixL()), needs(a), nullptr);
  nodes_[out].backprop = [this, a, out] {
    if (!needs(a)) return;
    const MatrixXd& l = nodes_[out].value;
    // Murray (2016): A_bar = 0.5 L^-T (phi(L^T L_bar) + phi(L^T L_bar)^T) L^-1
    // with phi = lower triangle, diagonal halved.
    MatrixXd p = (l.transpose() * nodes_[out].grad).eval();
    MatrixXd phi = p.triangularView<Eigen::Lower>();
    phi.diagonal() *= 0.5;
    MatrixXd sym = phi + phi.transpose();
    MatrixXd tmp =
        l.transpose().triangularView<Eigen::Upper>().solve(sym);
    MatrixXd a_bar =
        l.transpose()
            .triangularView<Eigen::Upper>()
            .solve(tmp.transpose())
            .transpose();
    accum(a, 0.25 * (a_bar + a_bar.transpose()));
  };
  return {out};
}

Var Tape::solve_lower(Var l, Var b) {
  MatrixXd x = value(l).triangularView<Eigen::Lower>().solve(value(b));
  const int out = push(std::move(x), needs(l) || needs(b), nullptr);
  nodes_[out].backprop = [this, l, b, out] {
    const MatrixXd b_bar = value(l)
                               .transpose()
                               .triangularView<Eigen::Upper>()
                               .solve(nodes_[out].grad);
    accum(b, b_bar);
    if (needs(l)) {
      MatrixXd l_bar = -(b_bar * nodes_[out].value.transpose());
      accum(l, MatrixXd(l_bar.triangularView<Eigen::Lower>()));
    }
  };
  return {out};
}

Var Tape::solve_lower_t(Var l, Var b) {
  MatrixXd x =
      value(l).transpose().triangularView<Eigen::Upper>().solve(value(b));
  const int out = push(std::move(x), needs(l) || needs(b), nullptr);
  nodes_[out].backprop = [this, l, b, out] {
    const MatrixXd b_bar =
        value(l).triangularView<Eigen::Lower>().solve(nodes_[out].grad);
    accum(b, b_bar);
    if (needs(l)) {
      MatrixXd l_bar = -(nodes_[out].value * b_bar.transpose());
      accum(l, MatrixXd(l_bar.triangularView<Eigen::Lower>()));
    }
  };
  return {out};
}

Var Tape::log_diag_sum(Var l) {
  const int out = push(
      MatrixXd::Constant(1, 1, value(l).diagonal().array().log().sum()),
      needs(l), nullptr);
  nodes_[out].backprop = [this, l, out] {
    if (!needs(l)) return;
    MatrixXd g = MatrixXd::Zero(value(l).rows(), value(l).cols());
    g.diagonal() =
        nodes_[out].grad(0, 0) * value(l).diagonal().cwiseInverse();
    accum(l, g);
  };
  return {out};
}

Var Tape::lower_tri_from_raw(Var raw, int m) {
  const VectorXd& r = value(raw).col(0);
  if (r.size() != m * (m + 1) / 2) {
    throw ContractError("lower_tri_from_raw: packed length mismatch");
  }
  MatrixXd l = MatrixXd::Zero(m, m);
  int k = 0;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j <= i; ++j, ++k) {
      l(i, j) = (i == j) ? softplus(r(k)) : r(k);
    }
  }
  const int out = push(std::move(l), needs(raw), nullptr);
  nodes_[out].backprop = [this, raw, m, out] {
    if (!needs(raw)) return;
    const MatrixXd& g = nodes_[out].grad;
    const VectorXd& r = value(raw).col(0);
    MatrixXd d = MatrixXd::Zero(r.size(), 1);
    int k = 0;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j <= i; ++j, ++k) {
        d(k, 0) = (i == j) ? g(i, j) * sigmoid(r(k)) : g(i, j);
      }
    }
    accum(raw, d);
  };
  return {out};
}

Var Tape::softplus_masked(
    Var raw, const Eigen::Array<bool, Eigen::Dynamic, 1>& active,
    double frozen_value) {
  const VectorXd& r = value(raw).col(0);
  if (r.size() != active.size()) {
    throw ContractError("softplus_masked: mask length mismatch");
  }
  MatrixXd v(r.size(), 1);
  for (int i = 0; i < r.size(); ++i) {
    v(i, 0) = active(i) ? softplus(r(i)) : frozen_value;
  }
  const int out = push(std::move(v), needs(raw), nullptr);
  nodes_[out].backprop = [this, raw, active, out] {
    if (!needs(raw)) return;
    const VectorXd& r = value(raw).col(0);
    MatrixXd d = MatrixXd::Zero(r.size(), 1);
    for (int i = 0; i < r.size(); ++i) {
      if (active(i)) d(i, 0) = nodes_[out].grad(i, 0) * sigmoid(r(i));
    }
    accum(raw, d);
  };
  return {out};
}

Var Tape::reparam_stack(Var mu, Var log_scale, const MatrixXd& eps,
                        double exp_factor) {
  const auto b = value(mu).rows();
  const auto mc = eps.cols();
  if (value(log_scale).rows() != b || eps.rows() != b) {
    throw ContractError("reparam_stack: shape mismatch");
  }
  MatrixXd w(b * mc, 1);
  for (int s = 0; s < mc; ++s) {
    for (int n = 0; n < b; ++n) {
      w(s * b + n, 0) = value(mu)(n, 0) +
                        std::exp(exp_factor * value(log_scale)(n, 0)) *
                            eps(n, s);
    }
  }
  const int out = push(std::move(w), needs(mu) || needs(log_scale), nullptr);
  nodes_[out].backprop = [this, mu, log_scale, eps, exp_factor, out] {
    const auto b = value(mu).rows();
    const auto mc = eps.cols();
    const MatrixXd& g = nodes_[out].grad;
    MatrixXd dmu = MatrixXd::Zero(b, 1);
    MatrixXd dls = MatrixXd::Zero(b, 1);
    for (int s = 0; s < mc; ++s) {
      for (int n = 0; n < b; ++n) {
        const double gv = g(s * b + n, 0);
        dmu(n, 0) += gv;
        dls(n, 0) += gv * exp_factor *
                     std::exp(exp_factor * value(log_scale)(n, 0)) * eps(n, s);
      }
    }
    accum(mu, dmu);
    accum(log_scale, dls);
  };
  return {out};
}

NodeKernelParams Tape::materialize_params(const KernelParamVars& p) const {
  NodeKernelParams kp;
  kp.input_dim = static_cast<int>(value(p.theta_lin).rows());
  kp.theta_lin = value(p.theta_lin).col(0);
  kp.theta_sqe = value(p.theta_sqe).col(0);
  kp.theta_m12 = value(p.theta_m12).col(0);
  kp.theta_m32 = value(p.theta_m32).col(0);
  kp.theta_rq = value(p.theta_rq).col(0);
  kp.var_sqe = scalar_value(p.var_sqe);
  kp.var_m12 = scalar_value(p.var_m12);
  kp.var_m32 = scalar_value(p.var_m32);
  kp.var_rq = scalar_value(p.var_rq);
  kp.rq_shape = scalar_value(p.rq_shape);
  return kp;
}

MatrixXd Tape::materialize_points(const PointSet& s, int input_dim) const {
  if (s.full.valid()) return value(s.full);
  MatrixXd pts(s.fixed.rows(), input_dim);
  pts.leftCols(input_dim - 1) = s.fixed;
  pts.col(input_dim - 1) = value(s.latent).col(0);
  return pts;
}

void Tape::scatter_kernel_grads(const KernelParamVars& p, const PointSet& u,
                                const PointSet& v, bool same_set,
                                const KernelGrads& kg) {
  accum(p.theta_lin, kg.theta_lin);
  accum(p.theta_sqe, kg.theta_sqe);
  accum(p.theta_m12, kg.theta_m12);
  accum(p.theta_m32, kg.theta_m32);
  accum(p.theta_rq, kg.theta_rq);
  accum(p.var_sqe, MatrixXd::Constant(1, 1, kg.var_sqe));
  accum(p.var_m12, MatrixXd::Constant(1, 1, kg.var_m12));
  accum(p.var_m32, MatrixXd::Constant(1, 1, kg.var_m32));
  accum(p.var_rq, MatrixXd::Constant(1, 1, kg.var_rq));
  accum(p.rq_shape, MatrixXd::Constant(1, 1, kg.rq_shape));
  const int latent_col = static_cast<int>(kg.du.cols()) - 1;
  MatrixXd du = kg.du;
  if (same_set) du += kg.dv;
  if (u.full.valid()) {
    accum(u.full, du);
  } else if (u.latent.valid()) {
    accum(u.latent, du.col(latent_col));
  }
  if (!same_set) {
    if (v.full.valid()) {
      accum(v.full, kg.dv);
    } else if (v.latent.valid()) {
      accum(v.latent, kg.dv.col(latent_col));
    }
  }
}

Var Tape::kernel_gram(const KernelParamVars& p, const PointSet& u,
                      const PointSet& v, KernelKind which) {
  const NodeKernelParams kp = materialize_params(p);
  auto pu = std::make_shared<const MatrixXd>(
      materialize_points(u, kp.input_dim));
  const bool same_set = u.full.valid() && v.full.valid() && u.full.i == v.full.i;
  auto pv = same_set ? pu
                     : std::make_shared<const MatrixXd>(
                           materialize_points(v, kp.input_dim));
  const bool any = needs(p.theta_lin) || needs(p.theta_sqe) ||
                   needs(p.theta_m12) || needs(p.theta_m32) ||
                   needs(p.theta_rq) || needs(p.var_sqe) || needs(p.var_m12) ||
                   needs(p.var_m32) || needs(p.var_rq) || needs(p.rq_shape) ||
                   needs(u.full) || needs(u.latent) || needs(v.full) ||
                   needs(v.latent);
  const int out = push(eval_kernel(kp, *pu, *pv, which), any, nullptr);
  const Var u_full = u.full, u_latent = u.latent;
  const Var v_full = v.full, v_latent = v.latent;
  nodes_[out].backprop = [this, p, u_full, u_latent, v_full, v_latent, which,
                          same_set, pu, pv, out] {
    const NodeKernelParams kp = materialize_params(p);
    const KernelGrads kg = kernel_vjp(kp, *pu, *pv, which, nodes_[out].grad);
    PointSet us, vs;
    us.full = u_full;
    us.latent = u_latent;
    vs.full = v_full;
    vs.latent = v_latent;
    scatter_kernel_grads(p, us, vs, same_set, kg);
  };
  return {out};
}

Var Tape::kernel_diag(const KernelParamVars& p, const PointSet& u,
                      KernelKind which) {
  const NodeKernelParams kp = materialize_params(p);
  auto pu = std::make_shared<const MatrixXd>(
      materialize_points(u, kp.input_dim));
  const bool any = needs(p.theta_lin) || needs(p.theta_sqe) ||
                   needs(p.theta_m12) || needs(p.theta_m32) ||
                   needs(p.theta_rq) || needs(p.var_sqe) || needs(p.var_m12) ||
                   needs(p.var_m32) || needs(p.var_rq) || needs(p.rq_shape) ||
                   needs(u.full) || needs(u.latent);
  const int out = push(eval_kernel_diag(kp, *pu, which), any, nullptr);
  const Var u_full = u.full, u_latent = u.latent;
  nodes_[out].backprop = [this, p, u_full, u_latent, which, pu, out] {
    const NodeKernelParams kp = materialize_params(p);
    const KernelGrads kg =
        kernel_diag_vjp(kp, *pu, which, nodes_[out].grad.col(0));
    PointSet us;
    us.full = u_full;
    us.latent = u_latent;
    scatter_kernel_grads(p, us, us, true, kg);
  };
  return {out};
}

Var Tape::trace_expm(Var a) {
  const MatrixXd e = matrix_exp(value(a));
  const int out = push(MatrixXd::Constant(1, 1, e.trace()), needs(a), nullptr);
  nodes_[out].backprop = [this, a, e, out] {
    accum(a, nodes_[out].grad(0, 0) * e.transpose());
  };
  return {out};
}

Var Tape::gamma_log_prior(Var theta, double eta, double beta) {
  if (eta <= 0.0 || beta <= 0.0) {
    throw ContractError("gamma_log_prior: eta and beta must be positive");
  }
  const MatrixXd& t = value(theta);
  const double norm = eta * std::log(beta) - std::lgamma(eta);
  double total = 0.0;
  for (int j = 0; j < t.cols(); ++j) {
    for (int i = 0; i < t.rows(); ++i) {
      if (!(t(i, j) >= 0.0)) {
        throw ContractError("gamma_log_prior: theta must be nonnegative");
      }
      total += norm - beta * t(i, j);
      if (eta != 1.0) total += (eta - 1.0) * std::log(t(i, j));
    }
  }
  const int out = push(MatrixXd::Constant(1, 1, total), needs(theta), nullptr);
  nodes_[out].backprop = [this, theta, eta, beta, out] {
    if (!needs(theta)) return;
    const MatrixXd& t = value(theta);
    MatrixXd d(t.rows(), t.cols());
    for (int j = 0; j < t.cols(); ++j) {
      for (int i = 0; i < t.rows(); ++i) {
        d(i, j) = -beta;
        if (eta != 1.0) d(i, j) += (eta - 1.0) / t(i, j);
      }
    }
    accum(theta, nodes_[out].grad(0, 0) * d);
  };
  return {out};
}

Var Tape::adjacency_from_rows(const std::vector<Var>& rows) {
  const int d = static_cast<int>(rows.size());
  MatrixXd a = MatrixXd::Zero(d, d);
  bool any = false;
  for (int i = 0; i < d; ++i) {
    if (value(rows[i]).rows() != d - 1) {
      throw ContractError("adjacency_from_rows: row length must be d-1");
    }
    any = any || needs(rows[i]);
    int k = 0;
    for (int j = 0; j < d; ++j) {
      if (j != i) a(i, j) = value(rows[i])(k++, 0);
    }
  }
  const int out = push(std::move(a), any, nullptr);
  nodes_[out].backprop = [this, rows, d, out] {
    const MatrixXd& g = nodes_[out].grad;
    for (int i = 0; i < d; ++i) {
      if (!needs(rows[i])) continue;
      MatrixXd dr(d - 1, 1);
      int k = 0;
      for (int j = 0; j < d; ++j) {
        if (j != i) dr(k++, 0) = g(i, j);
      }
      accum(rows[i], dr);
    }
  };
  return {out};
}

void Tape::backward(Var loss) {
  if (value(loss).rows() != 1 || value(loss).cols() != 1) {
    throw ContractError("Tape::backward: loss must be a scalar");
  }
  nodes_[loss.i].grad(0, 0) = 1.0;
  for (int i = loss.i; i >= 0; --i) {
    if (nodes_[i].backprop && nodes_[i].requires_grad) nodes_[i].backprop();
  }
}

}  // namespace causalcde::ad
