// Shared test fixtures for the GP modules.
#pragma once

#include <utility>

#include "causalcde/rng.hpp"
#include "causalcde/svgp.hpp"

namespace helpers {

using namespace causalcde;

inline NodeKernelParams random_kernel_params(int dims, Rng& rng,
                                             double theta_lo = 0.1,
                                             double theta_hi = 1.5) {
  NodeKernelParams p = NodeKernelParams::zeros(dims);
  auto fill = [&](VectorXd& v) {
    for (int d = 0; d < dims; ++d) v(d) = rng.uniform(theta_lo, theta_hi);
  };
  fill(p.theta_lin);
  fill(p.theta_sqe);
  fill(p.theta_m12);
  fill(p.theta_m32);
  fill(p.theta_rq);
  p.var_sqe = rng.uniform(0.2, 1.5);
  p.var_m12 = rng.uniform(0.2, 1.5);
  p.var_m32 = rng.uniform(0.2, 1.5);
  p.var_rq = rng.uniform(0.2, 1.5);
  p.rq_shape = rng.uniform(0.5, 3.0);
  return p;
}

// Writes constrained kernel values into a node's raw vector.
inline void set_kernel_params(NodeModel& node, const NodeKernelParams& p) {
  const VectorXd* thetas[5] = {&p.theta_lin, &p.theta_sqe, &p.theta_m12,
                               &p.theta_m32, &p.theta_rq};
  for (int k = 0; k < 5; ++k) {
    for (int d = 0; d < node.input_dim(); ++d) {
      node.set_theta_raw(k, d, softplus_inv((*thetas[k])(d)));
    }
  }
  node.raw(node.layout.kernel_vars + 0) = softplus_inv(p.var_sqe);
  node.raw(node.layout.kernel_vars + 1) = softplus_inv(p.var_m12);
  node.raw(node.layout.kernel_vars + 2) = softplus_inv(p.var_m32);
  node.raw(node.layout.kernel_vars + 3) = softplus_inv(p.var_rq);
  node.raw(node.layout.rq_shape) = softplus_inv(p.rq_shape);
}

inline void set_noise_var(NodeModel& node, double noise_var) {
  node.raw(node.layout.noise) = softplus_inv(noise_var);
}

// Pins every kernel family's latent weight at the frozen placeholder so the
// bound no longer depends on the latent samples.
inline void freeze_latent(NodeModel& node) {
  for (int k = 0; k < 5; ++k) {
    node.freeze_theta(k, node.input_dim() - 1);
  }
}

// Titsias-optimal q(u) for the (jittered) no-latent regression model.
inline VariationalGaussian optimal_qu(const NodeKernelParams& params,
                                      const MatrixXd& z, const MatrixXd& x,
                                      const VectorXd& y, double noise_var,
                                      double jitter) {
  MatrixXd k_uu = eval_kernel(params, z, z, KernelKind::kSum);
  k_uu.diagonal().array() += jitter;
  const MatrixXd k_uf = eval_kernel(params, z, x, KernelKind::kSum);
  const MatrixXd sigma = k_uu + k_uf * k_uf.transpose() / noise_var;
  const Eigen::LLT<MatrixXd> llt(sigma);
  const MatrixXd sigma_inv_kuu =
      llt.solve(k_uu);  // Sigma^-1 Kuu
  VariationalGaussian q;
  q.mean = k_uu * llt.solve(k_uf * y) / noise_var;
  const MatrixXd s = k_uu * sigma_inv_kuu;
  const Eigen::LLT<MatrixXd> llt_s(0.5 * (s + s.transpose()));
  q.cov_factor = llt_s.matrixL();
  return q;
}

// A fully initialized encoder-mode node over random data; the encoder is
// zero-initialized so q(w) is the standard normal prior.
inline std::pair<NodeModel, MatrixXd> random_node_with_data(
    int n, int data_dim, int target, int m_inducing, Rng& rng,
    EncoderConfig enc = EncoderConfig{8, 2}) {
  MatrixXd data = rng.normal_matrix(n, data_dim);
  std::vector<int> observed;
  for (int j = 0; j < data_dim; ++j) {
    if (j != target) observed.push_back(j);
  }
  NodeModel node =
      NodeModel::create(data_dim, target, observed, m_inducing,
                        LatentMode::kEncoder, QuMode::kNatural, enc, n);
  set_kernel_params(node, random_kernel_params(node.input_dim(), rng));
  set_noise_var(node, rng.uniform(0.05, 0.5));
  MatrixXd z(m_inducing, node.input_dim());
  for (int r = 0; r < m_inducing; ++r) {
    const int row = static_cast<int>(rng.uniform_index(n));
    for (size_t c = 0; c < observed.size(); ++c) z(r, c) = data(row, observed[c]);
    z(r, node.input_dim() - 1) = rng.normal();
  }
  node.set_inducing_inputs(z);
  return {std::move(node), std::move(data)};
}

}  // namespace helpers
