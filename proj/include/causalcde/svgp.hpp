#pragma once

#include <array>
#include <utility>
#include <vector>

#include "causalcde/autodiff.hpp"
#include "causalcde/common.hpp"
#include "causalcde/kernels.hpp"
#include "causalcde/rng.hpp"

namespace causalcde {

// Gaussian variational state q(u) = N(mean, cov_factor cov_factor^T).
struct VariationalGaussian {
  VectorXd mean;
  MatrixXd cov_factor;  // lower triangular, positive diagonal

  MatrixXd cov() const { return cov_factor * cov_factor.transpose(); }
  static VariationalGaussian identity(int m);
  void validate() const;
};

// Latent-variable encoder: a multilayer perceptron x_batch -> (mu, raw_var)
// with ReLU activations; variances are exp(raw_var).
struct EncoderConfig {
  int hidden = 128;
  int num_layers = 5;  // linear layers, ReLU between all but the last
};

struct EncoderParams {
  std::vector<MatrixXd> weights;            // (in x out) per layer
  std::vector<Eigen::RowVectorXd> biases;

  static EncoderParams init(int input_dim, const EncoderConfig& cfg, Rng& rng);
  int parameter_count() const;
};

// (mu, var) per batch row; var strictly positive.
std::pair<VectorXd, VectorXd> encode(const EncoderParams& enc,
                                     const MatrixXd& x_batch);

enum class LatentMode { kEncoder, kFreeForm };
enum class QuMode { kNatural, kRawFactor };

// Offsets into NodeModel::raw. All positive quantities are stored as
// unconstrained raws mapped through softplus (encoder and free-form latent
// scales use exp, applied at evaluation time).
struct NodeLayout {
  int input_dim = 0;
  int m_inducing = 0;
  std::array<int, 5> theta = {};  // lin, sqe, m12, m32, rq raws
  int kernel_vars = 0;            // 4 raws: var_sqe, var_m12, var_m32, var_rq
  int rq_shape = 0;
  int noise = 0;
  int z = 0;                      // m_inducing x input_dim, column-major
  int qu = -1;                    // kRawFactor: mean then packed factor
  int encoder = -1;               // kEncoder: weights/biases layer by layer
  std::vector<std::pair<int, int>> encoder_shapes;  // (in, out)
  int latent = -1;                // kFreeForm: mu then log-std, train_n each
  int total = 0;
};

// One variable's GP-CDE: kernel hyperparameters, noise variance, inducing
// inputs, Gaussian variational state and a latent path (amortised encoder or
// free-form per-point parameters). Frozen kernel dimensions are pinned at
// kFrozenTheta with exactly zero gradient.
struct NodeModel {
  int data_dim = 0;
  int target = 0;
  std::vector<int> observed;  // data columns used as GP inputs, in order
  int m_inducing = 0;
  LatentMode latent_mode = LatentMode::kEncoder;
  QuMode qu_mode = QuMode::kNatural;
  EncoderConfig encoder_cfg;
  int train_n = 0;  // kFreeForm only
  double jitter = 1e-6;

  VectorXd raw;
  NodeLayout layout;
  std::array<Eigen::Array<bool, Eigen::Dynamic, 1>, 5> active;
  // Structurally disabled kernel families contribute nothing and receive no
  // gradient (the discrete mode uses linear + squared exponential only).
  std::array<bool, 5> family_enabled = {true, true, true, true, true};
  VectorXd qu_mean;   // kNatural only
  MatrixXd qu_cov;    // kNatural only

  static NodeModel create(int data_dim, int target, std::vector<int> observed,
                          int m_inducing, LatentMode latent_mode,
                          QuMode qu_mode, const EncoderConfig& encoder_cfg,
                          int train_n);

  int input_dim() const { return static_cast<int>(observed.size()) + 1; }
  NodeKernelParams kernel_params() const;
  double noise_var() const;
  MatrixXd inducing_inputs() const;
  void set_inducing_inputs(const MatrixXd& z);
  VariationalGaussian q_u() const;
  void set_q_u(const VariationalGaussian& q);
  EncoderParams encoder() const;
  void set_encoder(const EncoderParams& enc);
  // Per-dimension mask: true iff any kernel family is active for that dim.
  Eigen::Array<bool, Eigen::Dynamic, 1> active_mask() const;

  // Raw accessors used by the training schedule.
  double theta_value(int family, int dim) const;
  void set_theta_raw(int family, int dim, double raw_value);
  double theta_raw(int family, int dim) const;
  void freeze_theta(int family, int dim);
  void unfreeze_theta(int family, int dim);
};

inline constexpr double kFrozenTheta = 1e-15;

// Sparse-GP predictive moments at assembled inputs (observed + latent
// columns). Jitter starts at node.jitter and escalates x10 up to 3 times.
std::pair<VectorXd, VectorXd> q_f_moments(const NodeModel& node,
                                          const MatrixXd& inputs);

// Closed-form Gaussian KLs: (KL[q(u)||N(0, K_uu)], KL[q(w)||N(0, I)]) where
// q(w) has per-point means mu and variances var.
std::pair<double, double> kl_terms(const NodeModel& node, const VectorXd& mu,
                                   const VectorXd& var);

// Gradients of a node bound with respect to every parameter group.
struct NodeGrads {
  VectorXd raw;      // same layout as NodeModel::raw
  VectorXd qu_mean;  // kNatural only
  MatrixXd qu_cov;   // kNatural only
};

struct NodeElboResult {
  double value = 0.0;
  NodeGrads grads;
};

// Monte-Carlo evidence lower bound for one node on a batch:
//   (N/b) <<log p(x_i | f)>_q(f)>_q(w) - KL[q(u)||p(u)] - (N/b) sum KL[q(w_n)]
// with the inner expectation in closed form for the Gaussian likelihood.
// Deterministic given the rng state.
double node_elbo(const NodeModel& node, const MatrixXd& x_batch,
                 int mc_samples, int dataset_size, Rng& rng);

NodeElboResult node_elbo_with_grads(const NodeModel& node,
                                    const MatrixXd& x_batch, int mc_samples,
                                    int dataset_size, Rng& rng);

// Sum of node_elbo over all nodes with a shared batch; node i consumes the
// derived stream rng.derive(i.target).
double model_elbo(const std::vector<NodeModel>& nodes, const MatrixXd& x_batch,
                  int dataset_size, int mc_samples, const Rng& rng);

namespace detail {

// Tape handles for one node's bound; used by the training loss to couple
// nodes through the adjacency penalty.
struct NodeTapeVars {
  ad::Var elbo;
  ad::Var raw_leaf;
  ad::Var qu_mean_leaf;
  ad::Var qu_cov_leaf;
  std::array<ad::Var, 5> theta;  // masked constrained values, input_dim x 1
};

NodeTapeVars build_node_elbo_tape(ad::Tape& tape, const NodeModel& node,
                                  const MatrixXd& x_batch, int mc_samples,
                                  int dataset_size, const MatrixXd& eps,
                                  double jitter);

}  // namespace detail

// log N(y | 0, K(X, X) + noise_var I) by dense factorization. Test oracle.
double exact_gp_lml(const NodeKernelParams& kernel, const MatrixXd& x,
                    const VectorXd& y, double noise_var);

// Titsias collapsed bound for the no-latent regression case; equals
// exact_gp_lml when Z = X (up to jitter) and never exceeds it.
double collapsed_bound_no_latent(const NodeKernelParams& kernel,
                                 const MatrixXd& z, const MatrixXd& x,
                                 const VectorXd& y, double noise_var,
                                 double jitter = 1e-10);

}  // namespace causalcde
