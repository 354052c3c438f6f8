#pragma once

#include <optional>
#include <string>
#include <vector>

#include "causalcde/graph.hpp"
#include "causalcde/optim.hpp"
#include "causalcde/svgp.hpp"

namespace causalcde {

// Training configuration. Defaults are the paper-scale settings; the desk
// profile trades fidelity for CI runtime.
struct TrainConfig {
  // Model size / bound estimation.
  int m_inducing = 400;
  int batch = 128;       // <= 0 means full batch
  int mc_samples = 100;
  EncoderConfig encoder;

  // Schedule.
  int t0 = 30000;          // minimum warm-up steps
  int tf = 30000;          // cool-down steps
  int t_conv = 2000;       // convergence window
  double epsilon_h = 1e-8;
  int max_subproblems = 64;
  double lr_warmup = 0.05;
  double lr_constraint_high = 0.01;  // while h > 0.1
  double lr_constraint_low = 0.005;
  double lr_cooldown = 0.01;
  double natgrad_step_size = 0.1;

  // Augmented Lagrangian.
  double nu = 10.0;
  double gamma = 0.9;
  int alpha_calib_steps = 500;    // penalty-free warm-up prefix sizing alpha0
  double alpha0_fraction = 0.05;  // alpha0 |h|^2 = fraction * |elbo scale|
  double alpha0_override = -1.0;  // used verbatim when >= 0

  // Priors and thresholds.
  double prior_shape = 1.0;  // eta
  double prior_rate = 10.0;  // beta
  double warmup_theta_floor = 1e-4;
  double frozen_value = 1e-15;
  double final_linvar_thresh = 1e-4;
  double final_theta_thresh = 0.05;

  // Discrete (enumeration) mode.
  int discrete_m_inducing = 200;
  int discrete_mc_samples = 100;
  int discrete_adam_steps = 4000;
  int discrete_decay_steps = 1000;
  double discrete_lr = 0.05;
  bool discrete_bfgs = false;  // quasi-Newton refinement; Adam decay otherwise
  int discrete_bfgs_iters = 150;
  int eval_mc_samples = 64;  // final fixed-seed score evaluation
  int dgpcde_cap = 4;

  double jitter = 1e-6;
};

TrainConfig paper_profile();
TrainConfig desk_profile();

// The continuous-relaxation model: one GP-CDE per variable, node i taking
// every column except i plus its latent coordinate as inputs.
struct CgpCdeModel {
  std::vector<NodeModel> nodes;
  void validate() const;
};

CgpCdeModel init_continuous_model(const MatrixXd& data,
                                  const TrainConfig& config, Rng& rng);

// A_ij = dependence weight of input j in node i's kernel (edge j -> i).
WeightedAdjacency adjacency_from_params(const CgpCdeModel& model);

// Sum over entries of log Gamma(theta | shape, rate).
double log_prior_theta(const VectorXd& theta_all, double shape, double rate);

// Eq.-(10)-style objective: model ELBO + log p(theta)
//   - alpha |h(A)|^2 - (rho / 2) h(A).
double training_loss(const CgpCdeModel& model, const MatrixXd& x_batch,
                     int dataset_size, const TrainConfig& config,
                     const AugLagState& auglag, const Rng& rng);

struct TrainingLossResult {
  double value = 0.0;
  double elbo = 0.0;
  double h = 0.0;
  std::vector<NodeGrads> node_grads;
};

TrainingLossResult training_loss_with_grads(const CgpCdeModel& model,
                                            const MatrixXd& x_batch,
                                            int dataset_size,
                                            const TrainConfig& config,
                                            const AugLagState& auglag,
                                            const Rng& rng);

// Final matrix threshold: an edge is dropped when its linear weight and the
// summed weight of the four stationary families are both below their floors.
bool final_threshold_removes(double lin_weight, double stationary_weight,
                             const TrainConfig& config);

struct TraceRow {
  long step = 0;
  int phase = 0;  // 0 warm-up, 1 constrained, 2 cool-down
  int subproblem = 0;
  double loss = 0.0;
  double elbo = 0.0;
  double h = 0.0;
  double alpha = 0.0;
  double rho = 0.0;
};

struct DiscoveryResult {
  WeightedAdjacency adjacency{MatrixXd::Zero(1, 1)};
  Dag graph{Dag::empty(1)};
  double final_elbo = 0.0;
  std::vector<TraceRow> trace;
  int subproblems = 0;
  std::uint64_t seed = 0;
  double alpha0 = 0.0;
  std::vector<double> h_history;         // h at each subproblem boundary
  std::vector<long> phase_boundaries;    // steps where a phase ended
  std::vector<std::string> deviations;   // schedule irregularities
  bool diverged = false;
  std::string divergence_reason;
};

// Algorithm: warm-up (>= t0 steps, then theta floor freeze), constrained
// subproblems with natural-gradient + Adam steps and auglag updates until
// h < epsilon_h, cool-down on the thresholded DAG with surviving-edge
// reinitialization, then the final threshold. Deterministic given the seed.
DiscoveryResult train_continuous(const MatrixXd& data,
                                 const TrainConfig& config,
                                 std::uint64_t seed);

// Runs train_continuous per seed (worker pool sized by `threads`, or
// CAUSAL_CDE_THREADS / hardware when 0) and keeps the highest final ELBO.
// Throws NumericalError when every restart diverged.
std::pair<DiscoveryResult, std::vector<DiscoveryResult>> run_restarts(
    const MatrixXd& data, const TrainConfig& config,
    const std::vector<std::uint64_t>& seeds, int threads = 0);

// One DGP-CDE fit: per-node GP-CDEs with inputs restricted to the graph's
// parents plus the latent coordinate, linear + squared exponential kernel,
// free-form per-point latents, full batch.
struct DiscreteFit {
  double score = 0.0;  // elbo + log_prior at the fitted parameters
  double elbo = 0.0;
  double log_prior = 0.0;
  std::string refinement;  // "bfgs" or "adam_decay"
  bool diverged = false;
  std::uint64_t seed = 0;
};

DiscreteFit fit_discrete(const MatrixXd& data, const Dag& dag,
                         const TrainConfig& config, std::uint64_t seed);

struct RankedGraph {
  Dag graph{Dag::empty(1)};
  double score = 0.0;
  double elbo = 0.0;
  int restarts_used = 0;
};

// Fits every DAG on data.cols() nodes (restarts_per_graph seeds each,
// derived from base_seed), keeps the best fit per graph and returns the
// descending ranking; the MAP graph is the first element.
std::vector<RankedGraph> select_discrete(const MatrixXd& data,
                                         const TrainConfig& config,
                                         int restarts_per_graph,
                                         std::uint64_t base_seed,
                                         int threads = 0);

}  // namespace causalcde
