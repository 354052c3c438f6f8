#include "causalcde/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include "causalcde/threadpool.hpp"

namespace causalcde {

namespace {

constexpr std::uint64_t kInitStream = 0x100;
constexpr std::uint64_t kBatchStream = 0x200;
constexpr std::uint64_t kMcStream = 0x300;
constexpr std::uint64_t kEvalStream = 0x400;

void check_standardized(const MatrixXd& data) {
  for (int j = 0; j < data.cols(); ++j) {
    const double mean = data.col(j).mean();
    const double var =
        (data.col(j).array() - mean).square().sum() / data.rows();
    if (std::abs(mean) > 1e-6 || std::abs(var - 1.0) > 1e-2) {
      throw ContractError(
          "train_continuous: data must be standardized (column " +
          std::to_string(j) + ")");
    }
  }
}

MatrixXd sample_inducing_rows(const MatrixXd& data,
                              const std::vector<int>& observed, int m,
                              Rng& rng) {
  const int n = static_cast<int>(data.rows());
  MatrixXd z(m, observed.size() + 1);
  for (int r = 0; r < m; ++r) {
    const int row = static_cast<int>(rng.uniform_index(n));
    for (size_t c = 0; c < observed.size(); ++c) {
      z(r, c) = data(row, observed[c]);
    }
  }
  for (int r = 0; r < m; ++r) z(r, observed.size()) = rng.normal();
  return z;
}

// Rolling convergence statistic over the bound: converged when the gap
// between the window mean and the recent-half mean falls below the window
// standard deviation.
class ConvergenceWindow {
 public:
  explicit ConvergenceWindow(int capacity) : capacity_(capacity) {}

  void push(double v) {
    values_.push_back(v);
    if (static_cast<int>(values_.size()) > capacity_) values_.pop_front();
  }

  void clear() { values_.clear(); }

  bool converged() const {
    if (static_cast<int>(values_.size()) < capacity_) return false;
    const double full_mean =
        std::accumulate(values_.begin(), values_.end(), 0.0) / values_.size();
    const auto half_begin = values_.begin() + values_.size() / 2;
    const double half_mean =
        std::accumulate(half_begin, values_.end(), 0.0) /
        std::distance(half_begin, values_.end());
    double sq = 0.0;
    for (double v : values_) sq += (v - full_mean) * (v - full_mean);
    const double stddev = std::sqrt(sq / values_.size());
    return std::abs(full_mean - half_mean) < stddev;
  }

 private:
  int capacity_;
  std::deque<double> values_;
};

struct ModelTape {
  ad::Var loss;
  ad::Var elbo_sum;
  ad::Var h;
  std::vector<detail::NodeTapeVars> nodes;
};

// Full Eq.-(10) objective on one tape: per-node bounds, theta prior,
// adjacency penalty.
ModelTape build_training_tape(ad::Tape& tape, const CgpCdeModel& model,
                              const MatrixXd& x_batch, int dataset_size,
                              const TrainConfig& config, double alpha,
                              double rho, int mc_samples,
                              const std::vector<MatrixXd>& eps,
                              double jitter) {
  const int d = static_cast<int>(model.nodes.size());
  ModelTape out;
  ad::Var elbo_sum;
  ad::Var prior_sum;
  std::vector<ad::Var> weight_rows(d);
  for (int i = 0; i < d; ++i) {
    const NodeModel& node = model.nodes[i];
    detail::NodeTapeVars vars = detail::build_node_elbo_tape(
        tape, node, x_batch, mc_samples, dataset_size, eps[i], jitter);
    elbo_sum = i == 0 ? vars.elbo : tape.add(elbo_sum, vars.elbo);
    const int observed = node.input_dim() - 1;
    ad::Var row;
    bool have_row = false;
    for (int k = 0; k < 5; ++k) {
      if (!node.family_enabled[k]) continue;
      const ad::Var obs_theta = tape.segment(vars.theta[k], 0, observed);
      row = have_row ? tape.add(row, obs_theta) : obs_theta;
      have_row = true;
      const ad::Var contribution = tape.gamma_log_prior(
          obs_theta, config.prior_shape, config.prior_rate);
      prior_sum = prior_sum.valid() ? tape.add(prior_sum, contribution)
                                    : contribution;
    }
    weight_rows[i] = row;
    out.nodes.push_back(vars);
  }
  out.elbo_sum = elbo_sum;

  const ad::Var a = tape.adjacency_from_rows(weight_rows);
  out.h = tape.add(tape.trace_expm(a), tape.scalar(-static_cast<double>(d)));

  ad::Var loss = elbo_sum;
  if (prior_sum.valid()) loss = tape.add(loss, prior_sum);
  if (alpha != 0.0) loss = tape.sub(loss, tape.scale(tape.square(out.h), alpha));
  if (rho != 0.0) loss = tape.sub(loss, tape.scale(out.h, 0.5 * rho));
  out.loss = loss;
  return out;
}

struct StepInfo {
  double loss = 0.0;
  double elbo = 0.0;
  double h = 0.0;
};

// One natural-gradient + Adam step on the full objective.
class ContinuousTrainer {
 public:
  ContinuousTrainer(CgpCdeModel& model, const MatrixXd& data,
                    const TrainConfig& config, std::uint64_t seed)
      : model_(model),
        data_(data),
        config_(config),
        n_(static_cast<int>(data.rows())),
        batch_rng_(Rng(seed).derive(kBatchStream)) {
    const Rng base(seed);
    for (size_t i = 0; i < model.nodes.size(); ++i) {
      mc_rngs_.push_back(base.derive(kMcStream + i));
      adam_.push_back(
          AdamState::create(static_cast<int>(model.nodes[i].raw.size())));
    }
  }

  StepInfo step(double lr, double alpha, double rho) {
    const MatrixXd batch = draw_batch();
    std::vector<MatrixXd> eps;
    eps.reserve(model_.nodes.size());
    for (auto& rng : mc_rngs_) {
      eps.push_back(rng.normal_matrix(static_cast<int>(batch.rows()),
                                      config_.mc_samples));
    }
    double jitter = config_.jitter;
    for (int attempt = 0; attempt <= 3; ++attempt, jitter *= 10.0) {
      try {
        ad::Tape tape;
        const ModelTape built =
            build_training_tape(tape, model_, batch, n_, config_, alpha, rho,
                                config_.mc_samples, eps, jitter);
        StepInfo info{tape.scalar_value(built.loss),
                      tape.scalar_value(built.elbo_sum),
                      tape.scalar_value(built.h)};
        if (!std::isfinite(info.loss)) {
          throw NumericalError("training step produced a non-finite loss");
        }
        tape.backward(built.loss);
        for (size_t i = 0; i < model_.nodes.size(); ++i) {
          NodeModel& node = model_.nodes[i];
          const auto& vars = built.nodes[i];
          const VariationalGaussian q{node.qu_mean,
                                      MatrixXd(Eigen::LLT<MatrixXd>(node.qu_cov)
                                                   .matrixL())};
          const ExpectationGrads eg = to_expectation_grads(
              q, tape.grad(vars.qu_mean_leaf).col(0),
              tape.grad(vars.qu_cov_leaf));
          const VariationalGaussian q_next =
              natgrad_step(q, eg, config_.natgrad_step_size);
          node.qu_mean = q_next.mean;
          node.qu_cov = q_next.cov();
          VectorXd grad = tape.grad(vars.raw_leaf).col(0);
          adam_step(adam_[i], node.raw, grad, lr);
        }
        return info;
      } catch (const NumericalError&) {
        if (attempt == 3) throw;
      }
    }
    throw NumericalError("ContinuousTrainer::step: unreachable");
  }

  double current_h() const {
    return acyclicity(adjacency_from_params(model_));
  }

  // Fresh moment estimates; called at subproblem and phase boundaries so a
  // new penalty scale starts from clean optimizer state.
  void reset_adam() {
    for (size_t i = 0; i < model_.nodes.size(); ++i) {
      adam_[i] = AdamState::create(static_cast<int>(model_.nodes[i].raw.size()));
    }
  }

 private:
  MatrixXd draw_batch() {
    const int b = config_.batch <= 0 ? n_ : std::min(config_.batch, n_);
    if (b >= n_) return data_;
    MatrixXd batch(b, data_.cols());
    for (int r = 0; r < b; ++r) {
      batch.row(r) = data_.row(batch_rng_.uniform_index(n_));
    }
    return batch;
  }

  CgpCdeModel& model_;
  const MatrixXd& data_;
  const TrainConfig& config_;
  int n_;
  Rng batch_rng_;
  std::vector<Rng> mc_rngs_;
  std::vector<AdamState> adam_;
};

// Adjacency for thresholding: entries whose every kernel family is frozen
// carry only the numerical placeholder and count as structural zeros.
WeightedAdjacency thresholding_adjacency(const CgpCdeModel& model) {
  const int d = static_cast<int>(model.nodes.size());
  MatrixXd a = adjacency_from_params(model).entries();
  for (int i = 0; i < d; ++i) {
    const NodeModel& node = model.nodes[i];
    int slot = 0;
    for (int j = 0; j < d; ++j) {
      if (j == i) continue;
      bool any_active = false;
      for (int k = 0; k < 5; ++k) {
        if (node.family_enabled[k] && node.active[k](slot)) any_active = true;
      }
      if (!any_active) a(i, j) = 0.0;
      ++slot;
    }
  }
  return WeightedAdjacency(a);
}

}  // namespace

TrainConfig paper_profile() { return TrainConfig{}; }

TrainConfig desk_profile() {
  TrainConfig config;
  config.m_inducing = 64;
  config.batch = 0;  // full batch
  config.mc_samples = 25;
  config.t0 = 3000;
  config.tf = 3000;
  config.discrete_m_inducing = 64;
  config.discrete_mc_samples = 25;
  config.discrete_adam_steps = 1500;
  config.discrete_decay_steps = 500;
  return config;
}

void CgpCdeModel::validate() const {
  const int d = static_cast<int>(nodes.size());
  for (int i = 0; i < d; ++i) {
    if (nodes[i].target != i || nodes[i].data_dim != d) {
      throw ContractError("CgpCdeModel: node/data dimension mismatch");
    }
  }
}

CgpCdeModel init_continuous_model(const MatrixXd& data,
                                  const TrainConfig& config, Rng& rng) {
  const int d = static_cast<int>(data.cols());
  const int n = static_cast<int>(data.rows());
  if (d < 2) throw ContractError("init_continuous_model: need at least 2 columns");
  CgpCdeModel model;
  for (int i = 0; i < d; ++i) {
    std::vector<int> observed;
    for (int j = 0; j < d; ++j) {
      if (j != i) observed.push_back(j);
    }
    NodeModel node = NodeModel::create(
        d, i, observed, config.m_inducing, LatentMode::kEncoder,
        QuMode::kNatural, config.encoder, n);
    node.jitter = config.jitter;
    Rng node_rng = rng.derive(kInitStream + i);
    const int dims = node.input_dim();
    // theta ~ U(0.01, 1) except the linear kernel at 0.25.
    for (int k = 0; k < 5; ++k) {
      for (int dd = 0; dd < dims; ++dd) {
        const double value = k == 0 ? 0.25 : node_rng.uniform(0.01, 1.0);
        node.set_theta_raw(k, dd, softplus_inv(value));
      }
    }
    for (int k = 0; k < 4; ++k) {
      node.raw(node.layout.kernel_vars + k) = softplus_inv(1.0);
    }
    node.raw(node.layout.rq_shape) =
        softplus_inv(node_rng.uniform(0.1, 10.0));
    const double kappa = node_rng.uniform(50.0, 100.0);
    node.raw(node.layout.noise) = softplus_inv(1.0 / (kappa * kappa));
    node.set_inducing_inputs(
        sample_inducing_rows(data, node.observed, config.m_inducing,
                             node_rng));
    node.set_encoder(EncoderParams::init(d, config.encoder, node_rng));
    model.nodes.push_back(std::move(node));
  }
  return model;
}

WeightedAdjacency adjacency_from_params(const CgpCdeModel& model) {
  model.validate();
  const int d = static_cast<int>(model.nodes.size());
  MatrixXd a = MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    const VectorXd weights = dependence_weights(model.nodes[i].kernel_params());
    int slot = 0;
    for (int j = 0; j < d; ++j) {
      if (j == i) continue;
      a(i, j) = weights(slot++);
    }
  }
  return WeightedAdjacency(a);
}

double log_prior_theta(const VectorXd& theta_all, double shape, double rate) {
  if (shape <= 0.0 || rate <= 0.0) {
    throw ContractError("log_prior_theta: shape and rate must be positive");
  }
  double total = 0.0;
  const double norm = shape * std::log(rate) - std::lgamma(shape);
  for (int i = 0; i < theta_all.size(); ++i) {
    if (!(theta_all(i) >= 0.0)) {
      throw ContractError("log_prior_theta: theta must be nonnegative");
    }
    total += norm - rate * theta_all(i);
    if (shape != 1.0) total += (shape - 1.0) * std::log(theta_all(i));
  }
  return total;
}

double training_loss(const CgpCdeModel& model, const MatrixXd& x_batch,
                     int dataset_size, const TrainConfig& config,
                     const AugLagState& auglag, const Rng& rng) {
  model.validate();
  std::vector<MatrixXd> eps;
  for (const NodeModel& node : model.nodes) {
    Rng node_rng = rng.derive(static_cast<std::uint64_t>(node.target));
    eps.push_back(node_rng.normal_matrix(static_cast<int>(x_batch.rows()),
                                         config.mc_samples));
  }
  ad::Tape tape;
  const ModelTape built =
      build_training_tape(tape, model, x_batch, dataset_size, config,
                          auglag.alpha, auglag.rho, config.mc_samples, eps,
                          config.jitter);
  const double value = tape.scalar_value(built.loss);
  if (!std::isfinite(value)) {
    throw NumericalError("training_loss: non-finite value");
  }
  return value;
}

TrainingLossResult training_loss_with_grads(const CgpCdeModel& model,
                                            const MatrixXd& x_batch,
                                            int dataset_size,
                                            const TrainConfig& config,
                                            const AugLagState& auglag,
                                            const Rng& rng) {
  model.validate();
  std::vector<MatrixXd> eps;
  for (const NodeModel& node : model.nodes) {
    Rng node_rng = rng.derive(static_cast<std::uint64_t>(node.target));
    eps.push_back(node_rng.normal_matrix(static_cast<int>(x_batch.rows()),
                                         config.mc_samples));
  }
  ad::Tape tape;
  const ModelTape built =
      build_training_tape(tape, model, x_batch, dataset_size, config,
                          auglag.alpha, auglag.rho, config.mc_samples, eps,
                          config.jitter);
  TrainingLossResult result;
  result.value = tape.scalar_value(built.loss);
  result.elbo = tape.scalar_value(built.elbo_sum);
  result.h = tape.scalar_value(built.h);
  if (!std::isfinite(result.value)) {
    throw NumericalError("training_loss_with_grads: non-finite value");
  }
  tape.backward(built.loss);
  for (size_t i = 0; i < model.nodes.size(); ++i) {
    NodeGrads grads;
    grads.raw = tape.grad(built.nodes[i].raw_leaf).col(0);
    if (model.nodes[i].qu_mode == QuMode::kNatural) {
      grads.qu_mean = tape.grad(built.nodes[i].qu_mean_leaf).col(0);
      grads.qu_cov = tape.grad(built.nodes[i].qu_cov_leaf);
    }
    result.node_grads.push_back(std::move(grads));
  }
  return result;
}

bool final_threshold_removes(double lin_weight, double stationary_weight,
                             const TrainConfig& config) {
  return lin_weight < config.final_linvar_thresh &&
         stationary_weight < config.final_theta_thresh;
}

DiscoveryResult train_continuous(const MatrixXd& data,
                                 const TrainConfig& config,
                                 std::uint64_t seed) {
  check_standardized(data);
  DiscoveryResult result;
  result.seed = seed;
  try {
    Rng rng(seed);
    CgpCdeModel model = init_continuous_model(data, config, rng);
    const int d = static_cast<int>(data.cols());

    // Snapshot of the initial theta raws for the cool-down reinitialization.
    std::vector<std::array<VectorXd, 5>> initial_theta(d);
    for (int i = 0; i < d; ++i) {
      for (int k = 0; k < 5; ++k) {
        initial_theta[i][k] = VectorXd(model.nodes[i].input_dim());
        for (int dd = 0; dd < model.nodes[i].input_dim(); ++dd) {
          initial_theta[i][k](dd) = model.nodes[i].theta_raw(k, dd);
        }
      }
    }

    ContinuousTrainer trainer(model, data, config, seed);
    const double h_init = acyclicity(adjacency_from_params(model));
    long step = 0;
    double alpha = 0.0;
    double rho = 0.0;
    double elbo_accum = 0.0;

    auto record = [&](int phase, int subproblem, const StepInfo& info) {
      result.trace.push_back(TraceRow{step, phase, subproblem, info.loss,
                                      info.elbo, info.h, alpha, rho});
    };

    // Warm-up: subproblem 0, at least t0 steps. The first alpha_calib_steps
    // run penalty-free to estimate the bound's scale for alpha0.
    const int calib = std::min(config.alpha_calib_steps, config.t0);
    auto compute_alpha0 = [&]() {
      if (config.alpha0_override >= 0.0) {
        result.alpha0 = config.alpha0_override;
      } else {
        const double scale = std::abs(elbo_accum / std::max<long>(1, step));
        result.alpha0 = scale > 0.0
                            ? config.alpha0_fraction * scale /
                                  std::max(h_init * h_init, 1e-12)
                            : 1.0;
      }
      alpha = result.alpha0;
    };
    StepInfo info;
    for (long k = 0; k < config.t0; ++k) {
      if (k == calib && k > 0) compute_alpha0();
      info = trainer.step(config.lr_warmup, alpha, rho);
      elbo_accum += info.elbo;
      record(0, 0, info);
      ++step;
    }
    if (alpha == 0.0) compute_alpha0();
    result.phase_boundaries.push_back(step);

    // Warm-up threshold: freeze small dependence weights at the placeholder.
    for (int i = 0; i < d; ++i) {
      NodeModel& node = model.nodes[i];
      const int observed = node.input_dim() - 1;
      for (int k = 0; k < 5; ++k) {
        if (!node.family_enabled[k]) continue;
        for (int dd = 0; dd < observed; ++dd) {
          if (node.theta_value(k, dd) < config.warmup_theta_floor) {
            node.freeze_theta(k, dd);
          }
        }
      }
    }

    // Constrained phase: finish subproblem 0 and follow-up subproblems until
    // h < epsilon_h at a convergence point.
    AugLagState auglag;
    auglag.alpha = alpha;
    auglag.rho = rho;
    auglag.nu = config.nu;
    auglag.gamma = config.gamma;
    auglag.h_prev = h_init;
    trainer.reset_adam();
    ConvergenceWindow window(config.t_conv);
    double h_now = trainer.current_h();
    result.h_history.push_back(h_now);
    long subproblem_steps = 0;
    const long subproblem_cap = 20L * config.t_conv;
    bool constrained_done = h_now < config.epsilon_h;
    while (!constrained_done) {
      const double lr = info.h > 0.1 ? config.lr_constraint_high
                                     : config.lr_constraint_low;
      info = trainer.step(lr, alpha, rho);
      window.push(info.elbo);
      record(1, auglag.subproblem_index, info);
      ++step;
      ++subproblem_steps;
      if (!window.converged() && subproblem_steps < subproblem_cap) continue;
      if (subproblem_steps >= subproblem_cap) {
        result.deviations.push_back("subproblem step cap reached");
      }
      h_now = info.h;
      result.h_history.push_back(h_now);
      if (h_now < config.epsilon_h) break;
      if (auglag.subproblem_index >= config.max_subproblems) {
        result.deviations.push_back(
            "max_subproblems reached before h < epsilon_h; proceeding to "
            "cool-down thresholding");
        break;
      }
      auglag = auglag_update(auglag, h_now);
      alpha = auglag.alpha;
      rho = auglag.rho;
      trainer.reset_adam();
      window.clear();
      subproblem_steps = 0;
    }
    result.subproblems = auglag.subproblem_index + 1;
    result.phase_boundaries.push_back(step);

    // Cool-down: zero the penalty, threshold to an exact DAG, reinitialize
    // surviving edges, keep training, then apply the final threshold.
    auto [dag, pruned] = threshold_to_dag(thresholding_adjacency(model));
    for (int i = 0; i < d; ++i) {
      NodeModel& node = model.nodes[i];
      int slot = 0;
      for (int j = 0; j < d; ++j) {
        if (j == i) continue;
        const bool surviving = dag.has_edge(j, i);
        for (int k = 0; k < 5; ++k) {
          if (!node.family_enabled[k]) continue;
          if (surviving) {
            node.unfreeze_theta(k, slot);
            node.set_theta_raw(k, slot, initial_theta[i][k](slot));
          } else {
            node.freeze_theta(k, slot);
          }
        }
        ++slot;
      }
    }
    alpha = 0.0;
    rho = 0.0;
    trainer.reset_adam();
    std::deque<double> cooldown_elbos;
    const int elbo_window = std::min(config.t_conv, config.tf);
    for (long k = 0; k < config.tf; ++k) {
      info = trainer.step(config.lr_cooldown, alpha, rho);
      record(2, result.subproblems, info);
      cooldown_elbos.push_back(info.elbo);
      if (static_cast<int>(cooldown_elbos.size()) > elbo_window) {
        cooldown_elbos.pop_front();
      }
      ++step;
    }
    result.phase_boundaries.push_back(step);
    result.final_elbo =
        cooldown_elbos.empty()
            ? -std::numeric_limits<double>::infinity()
            : std::accumulate(cooldown_elbos.begin(), cooldown_elbos.end(),
                              0.0) /
                  cooldown_elbos.size();

    // Final threshold: drop edges whose linear weight and remaining
    // dependence mass are both below their floors.
    MatrixXd final_weights = MatrixXd::Zero(d, d);
    std::vector<std::pair<int, int>> final_edges;
    for (const auto& [parent, child] : dag.edges()) {
      const NodeModel& node = model.nodes[child];
      int slot = 0;
      for (int j = 0; j < d; ++j) {
        if (j == child) continue;
        if (j == parent) break;
        ++slot;
      }
      const double lin = node.theta_value(0, slot);
      double rest = 0.0;
      for (int k = 1; k < 5; ++k) {
        if (node.family_enabled[k]) rest += node.theta_value(k, slot);
      }
      if (final_threshold_removes(lin, rest, config)) continue;
      final_edges.emplace_back(parent, child);
      final_weights(child, parent) = lin + rest;
    }
    result.graph = Dag(d, std::move(final_edges));
    result.adjacency = WeightedAdjacency(std::move(final_weights));
  } catch (const std::exception& err) {
    result.diverged = true;
    result.divergence_reason = err.what();
  }
  return result;
}

std::pair<DiscoveryResult, std::vector<DiscoveryResult>> run_restarts(
    const MatrixXd& data, const TrainConfig& config,
    const std::vector<std::uint64_t>& seeds, int threads) {
  if (seeds.empty()) throw ContractError("run_restarts: need at least one seed");
  std::vector<DiscoveryResult> results(seeds.size());
  run_parallel(static_cast<int>(seeds.size()), threads, [&](int task) {
    results[task] = train_continuous(data, config, seeds[task]);
  });
  int best = -1;
  for (size_t i = 0; i < results.size(); ++i) {
    if (results[i].diverged || !std::isfinite(results[i].final_elbo)) continue;
    if (best < 0 || results[i].final_elbo > results[best].final_elbo ||
        (results[i].final_elbo == results[best].final_elbo &&
         results[i].seed < results[best].seed)) {
      best = static_cast<int>(i);
    }
  }
  if (best < 0) {
    throw NumericalError("run_restarts: every restart diverged");
  }
  return {results[best], results};
}

namespace {

NodeModel init_discrete_node(const MatrixXd& data, int target,
                             const std::vector<int>& parents,
                             const TrainConfig& config, Rng& node_rng) {
  const int n = static_cast<int>(data.rows());
  const int m = std::min(config.discrete_m_inducing, n);
  NodeModel node = NodeModel::create(
      static_cast<int>(data.cols()), target, parents, m, LatentMode::kFreeForm,
      QuMode::kRawFactor, EncoderConfig{}, n);
  node.jitter = config.jitter;
  node.family_enabled = {true, true, false, false, false};
  const int dims = node.input_dim();
  for (int k = 0; k < 5; ++k) {
    for (int dd = 0; dd < dims; ++dd) {
      const double value =
          node.family_enabled[k] ? node_rng.uniform(1.0, 100.0) : 1.0;
      node.set_theta_raw(k, dd, softplus_inv(value));
    }
  }
  for (int k = 0; k < 4; ++k) {
    node.raw(node.layout.kernel_vars + k) = softplus_inv(1.0);
  }
  node.raw(node.layout.rq_shape) = softplus_inv(1.0);
  node.raw(node.layout.noise) =
      softplus_inv(node_rng.uniform(1e-4, 1e-2));
  node.set_inducing_inputs(
      sample_inducing_rows(data, node.observed, m, node_rng));
  // q(u): zero mean, identity factor.
  const int qu = node.layout.qu;
  node.raw.segment(qu, m).setZero();
  int idx = qu + m;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j <= i; ++j, ++idx) {
      node.raw(idx) = (i == j) ? softplus_inv(1.0) : 0.0;
    }
  }
  // Latents: mean 0.1 x_i, log standard deviation from U(0, 0.1).
  node.raw.segment(node.layout.latent, n) = 0.1 * data.col(target);
  for (int r = 0; r < n; ++r) {
    node.raw(node.layout.latent + n + r) =
        std::log(std::max(node_rng.uniform(0.0, 0.1), 1e-4));
  }
  return node;
}

// Gamma prior value and raw-space gradient over the observed theta entries
// of the enabled kernel families.
double add_theta_prior_grad(const NodeModel& node, const TrainConfig& config,
                            VectorXd* grad_raw) {
  double total = 0.0;
  const int observed = node.input_dim() - 1;
  const double norm =
      config.prior_shape * std::log(config.prior_rate) -
      std::lgamma(config.prior_shape);
  for (int k = 0; k < 5; ++k) {
    if (!node.family_enabled[k]) continue;
    for (int dd = 0; dd < observed; ++dd) {
      const double theta = node.theta_value(k, dd);
      total += norm - config.prior_rate * theta;
      double d_theta = -config.prior_rate;
      if (config.prior_shape != 1.0) {
        total += (config.prior_shape - 1.0) * std::log(theta);
        d_theta += (config.prior_shape - 1.0) / theta;
      }
      if (grad_raw && node.active[k](dd)) {
        (*grad_raw)(node.layout.theta[k] + dd) +=
            d_theta * sigmoid(node.theta_raw(k, dd));
      }
    }
  }
  return total;
}

}  // namespace

DiscreteFit fit_discrete(const MatrixXd& data, const Dag& dag,
                         const TrainConfig& config, std::uint64_t seed) {
  if (data.cols() != dag.dim()) {
    throw ContractError("fit_discrete: data/graph dimension mismatch");
  }
  if (dag.dim() > config.dgpcde_cap) {
    throw ContractError("fit_discrete: dimension exceeds the enumeration cap");
  }
  DiscreteFit fit;
  fit.seed = seed;
  fit.refinement = config.discrete_bfgs ? "bfgs" : "adam_decay";
  try {
    const Rng base(seed);
    const int d = dag.dim();
    const int n = static_cast<int>(data.rows());
    double elbo_total = 0.0;
    double prior_total = 0.0;
    for (int i = 0; i < d; ++i) {
      Rng init_rng = base.derive(kInitStream + i);
      NodeModel node =
          init_discrete_node(data, i, dag.parents(i), config, init_rng);
      Rng mc_rng = base.derive(kMcStream + i);
      AdamState adam = AdamState::create(static_cast<int>(node.raw.size()));
      for (int k = 0; k < config.discrete_adam_steps; ++k) {
        NodeElboResult eval = node_elbo_with_grads(
            node, data, config.discrete_mc_samples, n, mc_rng);
        add_theta_prior_grad(node, config, &eval.grads.raw);
        adam_step(adam, node.raw, eval.grads.raw, config.discrete_lr);
      }
      if (config.discrete_bfgs) {
        // Quasi-Newton refinement on a fixed noise draw.
        Rng eps_rng = base.derive(kMcStream + 0x50 + i);
        const MatrixXd eps =
            eps_rng.normal_matrix(n, config.discrete_mc_samples);
        NodeModel work = node;
        auto objective = [&](const VectorXd& raw) {
          work.raw = raw;
          ad::Tape tape;
          const auto built = detail::build_node_elbo_tape(
              tape, work, data, config.discrete_mc_samples, n, eps,
              config.jitter);
          double value = tape.scalar_value(built.elbo);
          value += add_theta_prior_grad(work, config, nullptr);
          return value;
        };
        auto gradient = [&](const VectorXd& raw) {
          work.raw = raw;
          ad::Tape tape;
          const auto built = detail::build_node_elbo_tape(
              tape, work, data, config.discrete_mc_samples, n, eps,
              config.jitter);
          tape.backward(built.elbo);
          VectorXd grad = tape.grad(built.raw_leaf).col(0);
          add_theta_prior_grad(work, config, &grad);
          return grad;
        };
        const BfgsResult refined = bfgs_maximize(
            objective, gradient, node.raw, config.discrete_bfgs_iters, 1e-5);
        node.raw = refined.params;
      } else {
        for (int k = 0; k < config.discrete_decay_steps; ++k) {
          const double lr =
              config.discrete_lr *
              std::pow(0.01, static_cast<double>(k + 1) /
                                 config.discrete_decay_steps);
          NodeElboResult eval = node_elbo_with_grads(
              node, data, config.discrete_mc_samples, n, mc_rng);
          add_theta_prior_grad(node, config, &eval.grads.raw);
          adam_step(adam, node.raw, eval.grads.raw, lr);
        }
      }
      // Fixed-stream evaluation keeps the selection score deterministic.
      Rng eval_rng = base.derive(kEvalStream + i);
      elbo_total += node_elbo(node, data, config.eval_mc_samples, n, eval_rng);
      prior_total += add_theta_prior_grad(node, config, nullptr);
    }
    fit.elbo = elbo_total;
    fit.log_prior = prior_total;
    fit.score = elbo_total + prior_total;
    if (!std::isfinite(fit.score)) {
      throw NumericalError("fit_discrete: non-finite score");
    }
  } catch (const std::exception&) {
    fit.diverged = true;
    fit.score = -std::numeric_limits<double>::infinity();
    fit.elbo = fit.score;
  }
  return fit;
}

std::vector<RankedGraph> select_discrete(const MatrixXd& data,
                                         const TrainConfig& config,
                                         int restarts_per_graph,
                                         std::uint64_t base_seed,
                                         int threads) {
  if (restarts_per_graph < 1) {
    throw ContractError("select_discrete: need at least one restart per graph");
  }
  const int d = static_cast<int>(data.cols());
  const std::vector<Dag> graphs = enumerate_dags(d, config.dgpcde_cap);
  const int num_graphs = static_cast<int>(graphs.size());

  Rng seed_rng(base_seed);
  std::vector<std::uint64_t> seeds(num_graphs * restarts_per_graph);
  for (auto& s : seeds) s = seed_rng.next_u64();

  std::vector<DiscreteFit> fits(seeds.size());
  run_parallel(static_cast<int>(seeds.size()), threads, [&](int task) {
    const int graph = task / restarts_per_graph;
    fits[task] = fit_discrete(data, graphs[graph], config, seeds[task]);
  });

  std::vector<RankedGraph> ranking;
  ranking.reserve(num_graphs);
  for (int g = 0; g < num_graphs; ++g) {
    RankedGraph entry;
    entry.graph = graphs[g];
    entry.score = -std::numeric_limits<double>::infinity();
    entry.elbo = entry.score;
    for (int r = 0; r < restarts_per_graph; ++r) {
      const DiscreteFit& fit = fits[g * restarts_per_graph + r];
      if (fit.diverged) continue;
      ++entry.restarts_used;
      if (fit.score > entry.score) {
        entry.score = fit.score;
        entry.elbo = fit.elbo;
      }
    }
    ranking.push_back(std::move(entry));
  }
  std::stable_sort(ranking.begin(), ranking.end(),
                   [](const RankedGraph& a, const RankedGraph& b) {
                     return a.score > b.score;
                   });
  return ranking;
}

}  // namespace causalcde
