#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "causalcde/common.hpp"
#include "causalcde/kernels.hpp"

namespace causalcde::ad {

// Handle to a tape node.
struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

// Reverse-mode tape over dense matrices. Scalars are 1x1 matrices. Values
// are computed eagerly on op creation; backward() accumulates cotangents in
// reverse order. Single-threaded; one tape per loss evaluation.
class Tape {
 public:
  Var var(MatrixXd value);       // leaf with gradient
  Var constant(MatrixXd value);  // leaf without gradient
  Var scalar(double value) { return constant(MatrixXd::Constant(1, 1, value)); }

  const MatrixXd& value(Var v) const { return nodes_[v.i].value; }
  const MatrixXd& grad(Var v) const { return nodes_[v.i].grad; }
  double scalar_value(Var v) const { return nodes_[v.i].value(0, 0); }

  // Elementwise and structural ops.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var neg(Var a);
  Var scale(Var a, double c);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var cwise_mul(Var a, Var b);
  Var cwise_max(Var a, double floor);
  Var exp(Var a);
  Var log(Var a);
  Var square(Var a);
  Var softplus_all(Var a);
  Var relu(Var a);
  Var col(Var a, int j);
  Var add_rowvec(Var a, Var row);   // broadcast row over all rows of a
  Var mul_scalar(Var a, Var s);     // s is 1x1
  Var div_scalar(Var a, Var s);     // s is 1x1
  Var sum(Var a);                   // 1x1
  Var colwise_sqnorm(Var a);        // (cols x 1) vector of squared col norms
  Var segment(Var a, int offset, int rows);  // slice of a column vector
  Var reshape(Var a, int rows, int cols);    // column-major reinterpret

  // Linear algebra.
  Var cholesky(Var a, double jitter);     // chol(a + jitter*I), lower
  Var solve_lower(Var l, Var b);          // L^-1 B
  Var solve_lower_t(Var l, Var b);        // L^-T B
  Var log_diag_sum(Var l);                // sum(log(diag(l))), 1x1

  // Domain-specific fused nodes.

  // Lower-triangular factor from packed raws; diagonal mapped via softplus.
  Var lower_tri_from_raw(Var raw, int m);

  // Elementwise softplus with a freeze mask: output = softplus(raw) where
  // active, else frozen_value with zero gradient.
  Var softplus_masked(Var raw, const Eigen::Array<bool, Eigen::Dynamic, 1>& active,
                      double frozen_value);

  // Stacked reparameterised latent samples: row s*b+n = mu_n +
  // exp(exp_factor * log_scale_n) * eps(n, s).
  Var reparam_stack(Var mu, Var log_scale, const MatrixXd& eps,
                    double exp_factor);

  // Gram matrix of the five-kernel sum (or a single family). Either side is
  // (fixed observed columns, latent column Var) or a full Var matrix.
  struct PointSet {
    MatrixXd fixed;   // n x (input_dim - 1), ignored when full.valid()
    Var latent = {};  // n x 1
    Var full = {};    // n x input_dim
  };
  struct KernelParamVars {
    Var theta_lin, theta_sqe, theta_m12, theta_m32, theta_rq;
    Var var_sqe, var_m12, var_m32, var_rq;
    Var rq_shape;
  };
  Var kernel_gram(const KernelParamVars& p, const PointSet& u,
                  const PointSet& v, KernelKind which);
  Var kernel_diag(const KernelParamVars& p, const PointSet& u,
                  KernelKind which);

  // Tr(exp(A)), 1x1; gradient is exp(A)^T.
  Var trace_expm(Var a);

  // Sum over entries of the Gamma(eta, beta) log density.
  Var gamma_log_prior(Var theta, double eta, double beta);

  // D x D adjacency assembled from per-row weight vectors: row i holds
  // rows[i] scattered over columns j != i in ascending j order.
  Var adjacency_from_rows(const std::vector<Var>& rows);

  void backward(Var loss);

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    MatrixXd value;
    MatrixXd grad;
    bool requires_grad = false;
    std::function<void()> backprop;  // null for leaves/constants
  };

  int push(MatrixXd value, bool requires_grad, std::function<void()> fn);
  void accum(Var v, const MatrixXd& g);
  bool needs(Var v) const { return v.valid() && nodes_[v.i].requires_grad; }

  NodeKernelParams materialize_params(const KernelParamVars& p) const;
  MatrixXd materialize_points(const PointSet& s, int input_dim) const;
  void scatter_kernel_grads(const KernelParamVars& p, const PointSet& u,
                            const PointSet& v, bool same_set,
                            const KernelGrads& kg);

  std::vector<Node> nodes_;
};

}  // namespace causalcde::ad
