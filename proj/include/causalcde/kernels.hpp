#pragma once

#include "causalcde/common.hpp"

namespace causalcde {

enum class KernelKind { kSum, kLin, kSqe, kM12, kM32, kM52, kRq };

// Hyperparameters of the additive per-dimension kernel for one node's GP.
// Input dimension counts the node's latent coordinate, reserved at the LAST
// index; the remaining dimensions are the observed inputs in caller order.
// theta_* are dependence/precision weights per input dimension, var_* the
// kernel amplitudes and rq_shape the rational-quadratic shape (one per node).
// The m52 entries exist for data generation only and never enter the sum.
struct NodeKernelParams {
  int input_dim = 0;
  VectorXd theta_lin, theta_sqe, theta_m12, theta_m32, theta_rq;
  VectorXd theta_m52;  // optional; empty unless data generation uses it
  double var_sqe = 1.0, var_m12 = 1.0, var_m32 = 1.0, var_rq = 1.0;
  double var_m52 = 0.0;
  double rq_shape = 1.0;

  static NodeKernelParams zeros(int input_dim);
  void validate() const;
  int latent_index() const { return input_dim - 1; }
};

// Gram matrix between row-point sets U (n x input_dim) and V (m x input_dim).
// kSum = lin + sqe + m12 + m32 + rq.
MatrixXd eval_kernel(const NodeKernelParams& params, const MatrixXd& u,
                     const MatrixXd& v, KernelKind which);

// diag(K(U, U)) without forming the full Gram matrix.
VectorXd eval_kernel_diag(const NodeKernelParams& params, const MatrixXd& u,
                          KernelKind which);

// Parameter- and input-space cotangents of a Gram matrix evaluation.
struct KernelGrads {
  VectorXd theta_lin, theta_sqe, theta_m12, theta_m32, theta_rq, theta_m52;
  double var_sqe = 0.0, var_m12 = 0.0, var_m32 = 0.0, var_rq = 0.0;
  double var_m52 = 0.0;
  double rq_shape = 0.0;
  MatrixXd du, dv;
};

// Accumulates gradients of sum(G .* K(U,V)) with respect to every kernel
// parameter and both input sets. Matches eval_kernel(params, u, v, which).
KernelGrads kernel_vjp(const NodeKernelParams& params, const MatrixXd& u,
                       const MatrixXd& v, KernelKind which, const MatrixXd& g);

// Same for sum(g .* diag(K(U,U))).
KernelGrads kernel_diag_vjp(const NodeKernelParams& params, const MatrixXd& u,
                            KernelKind which, const VectorXd& g);

// Per observed dimension: theta_lin + theta_sqe + theta_m12 + theta_m32 +
// theta_rq. The latent entry is excluded (see latent_dependence_weight).
VectorXd dependence_weights(const NodeKernelParams& params);

double latent_dependence_weight(const NodeKernelParams& params);

}  // namespace causalcde
