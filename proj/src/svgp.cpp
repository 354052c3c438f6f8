#include "causalcde/svgp.hpp"

#include <cmath>
#include <sstream>

namespace causalcde {

namespace {

constexpr int kJitterRetries = 3;  // escalations of x10 after the base value

MatrixXd tile_rows(const MatrixXd& x, int times) {
  MatrixXd out(x.rows() * times, x.cols());
  for (int s = 0; s < times; ++s) out.middleRows(s * x.rows(), x.rows()) = x;
  return out;
}

}  // namespace

VariationalGaussian VariationalGaussian::identity(int m) {
  return {VectorXd::Zero(m), MatrixXd::Identity(m, m)};
}

void VariationalGaussian::validate() const {
  const auto m = mean.size();
  if (cov_factor.rows() != m || cov_factor.cols() != m) {
    throw ContractError("VariationalGaussian: factor shape mismatch");
  }
  for (int i = 0; i < m; ++i) {
    if (!(cov_factor(i, i) > 0.0)) {
      throw ContractError("VariationalGaussian: factor diagonal must be positive");
    }
    for (int j = i + 1; j < m; ++j) {
      if (cov_factor(i, j) != 0.0) {
        throw ContractError("VariationalGaussian: factor must be lower triangular");
      }
    }
  }
}

EncoderParams EncoderParams::init(int input_dim, const EncoderConfig& cfg,
                                  Rng& rng) {
  if (cfg.num_layers < 1 || cfg.hidden < 1) {
    throw ContractError("EncoderParams: invalid architecture");
  }
  const double stddev = std::sqrt(2.0 / cfg.hidden);
  EncoderParams enc;
  for (int layer = 0; layer < cfg.num_layers; ++layer) {
    const int in = layer == 0 ? input_dim : cfg.hidden;
    const int out = layer == cfg.num_layers - 1 ? 2 : cfg.hidden;
    MatrixXd w(in, out);
    for (int j = 0; j < out; ++j) {
      for (int i = 0; i < in; ++i) w(i, j) = rng.truncated_normal(stddev);
    }
    enc.weights.push_back(std::move(w));
    enc.biases.emplace_back(Eigen::RowVectorXd::Zero(out));
  }
  return enc;
}

int EncoderParams::parameter_count() const {
  int n = 0;
  for (size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<int>(weights[l].size() + biases[l].size());
  }
  return n;
}

std::pair<VectorXd, VectorXd> encode(const EncoderParams& enc,
                                     const MatrixXd& x_batch) {
  MatrixXd h = x_batch;
  for (size_t l = 0; l < enc.weights.size(); ++l) {
    h = (h * enc.weights[l]).rowwise() + enc.biases[l];
    if (l + 1 < enc.weights.size()) h = h.cwiseMax(0.0);
  }
  if (h.cols() != 2) throw ContractError("encode: output width must be 2");
  if (!h.allFinite()) {
    std::ostringstream msg;
    msg << "encode: non-finite activation in output layer (batch of "
        << x_batch.rows() << " points)";
    throw NumericalError(msg.str());
  }
  return {h.col(0), h.col(1).array().exp().matrix()};
}

NodeModel NodeModel::create(int data_dim, int target,
                            std::vector<int> observed, int m_inducing,
                            LatentMode latent_mode, QuMode qu_mode,
                            const EncoderConfig& encoder_cfg, int train_n) {
  if (m_inducing < 1) throw ContractError("NodeModel: m_inducing must be >= 1");
  NodeModel node;
  node.data_dim = data_dim;
  node.target = target;
  node.observed = std::move(observed);
  node.m_inducing = m_inducing;
  node.latent_mode = latent_mode;
  node.qu_mode = qu_mode;
  node.encoder_cfg = encoder_cfg;
  node.train_n = train_n;

  const int dims = node.input_dim();
  NodeLayout& lay = node.layout;
  lay.input_dim = dims;
  lay.m_inducing = m_inducing;
  int off = 0;
  for (int k = 0; k < 5; ++k) {
    lay.theta[k] = off;
    off += dims;
  }
  lay.kernel_vars = off;
  off += 4;
  lay.rq_shape = off++;
  lay.noise = off++;
  lay.z = off;
  off += m_inducing * dims;
  if (qu_mode == QuMode::kRawFactor) {
    lay.qu = off;
    off += m_inducing + m_inducing * (m_inducing + 1) / 2;
  }
  if (latent_mode == LatentMode::kEncoder) {
    lay.encoder = off;
    for (int layer = 0; layer < encoder_cfg.num_layers; ++layer) {
      const int in = layer == 0 ? data_dim : encoder_cfg.hidden;
      const int out = layer == encoder_cfg.num_layers - 1 ? 2
                                                          : encoder_cfg.hidden;
      lay.encoder_shapes.emplace_back(in, out);
      off += in * out + out;
    }
  } else {
    if (train_n < 1) {
      throw ContractError("NodeModel: free-form latents need train_n >= 1");
    }
    lay.latent = off;
    off += 2 * train_n;
  }
  lay.total = off;
  node.raw = VectorXd::Zero(off);
  for (auto& mask : node.active) {
    mask = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(dims, true);
  }
  if (qu_mode == QuMode::kNatural) {
    node.qu_mean = VectorXd::Zero(m_inducing);
    node.qu_cov = MatrixXd::Identity(m_inducing, m_inducing);
  }
  return node;
}

NodeKernelParams NodeModel::kernel_params() const {
  const int dims = input_dim();
  NodeKernelParams p = NodeKernelParams::zeros(dims);
  VectorXd* thetas[5] = {&p.theta_lin, &p.theta_sqe, &p.theta_m12,
                         &p.theta_m32, &p.theta_rq};
  for (int k = 0; k < 5; ++k) {
    if (!family_enabled[k]) continue;  // stays exactly zero
    for (int d = 0; d < dims; ++d) {
      (*thetas[k])(d) =
          active[k](d) ? softplus(raw(layout.theta[k] + d)) : kFrozenTheta;
    }
  }
  p.var_sqe = family_enabled[1] ? softplus(raw(layout.kernel_vars + 0)) : 0.0;
  p.var_m12 = family_enabled[2] ? softplus(raw(layout.kernel_vars + 1)) : 0.0;
  p.var_m32 = family_enabled[3] ? softplus(raw(layout.kernel_vars + 2)) : 0.0;
  p.var_rq = family_enabled[4] ? softplus(raw(layout.kernel_vars + 3)) : 0.0;
  p.rq_shape = softplus(raw(layout.rq_shape));
  return p;
}

double NodeModel::noise_var() const { return softplus(raw(layout.noise)); }

MatrixXd NodeModel::inducing_inputs() const {
  return Eigen::Map<const MatrixXd>(raw.data() + layout.z, m_inducing,
                                    input_dim());
}

void NodeModel::set_inducing_inputs(const MatrixXd& z) {
  if (z.rows() != m_inducing || z.cols() != input_dim()) {
    throw ContractError("set_inducing_inputs: shape mismatch");
  }
  Eigen::Map<MatrixXd>(raw.data() + layout.z, m_inducing, input_dim()) = z;
}

VariationalGaussian NodeModel::q_u() const {
  if (qu_mode == QuMode::kNatural) {
    Eigen::LLT<MatrixXd> llt(qu_cov);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("NodeModel::q_u: covariance not positive definite");
    }
    return {qu_mean, MatrixXd(llt.matrixL())};
  }
  const int m = m_inducing;
  VariationalGaussian q;
  q.mean = raw.segment(layout.qu, m);
  q.cov_factor = MatrixXd::Zero(m, m);
  int k = layout.qu + m;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j <= i; ++j, ++k) {
      q.cov_factor(i, j) = (i == j) ? softplus(raw(k)) : raw(k);
    }
  }
  return q;
}

void NodeModel::set_q_u(const VariationalGaussian& q) {
  q.validate();
  if (q.mean.size() != m_inducing) {
    throw ContractError("set_q_u: dimension mismatch");
  }
  if (qu_mode == QuMode::kNatural) {
    qu_mean = q.mean;
    qu_cov = q.cov();
    return;
  }
  const int m = m_inducing;
  raw.segment(layout.qu, m) = q.mean;
  int k = layout.qu + m;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j <= i; ++j, ++k) {
      raw(k) = (i == j) ? softplus_inv(q.cov_factor(i, j)) : q.cov_factor(i, j);
    }
  }
}

EncoderParams NodeModel::encoder() const {
  if (latent_mode != LatentMode::kEncoder) {
    throw ContractError("NodeModel::encoder: node has free-form latents");
  }
  EncoderParams enc;
  int off = layout.encoder;
  for (const auto& [in, out] : layout.encoder_shapes) {
    enc.weights.push_back(
        Eigen::Map<const MatrixXd>(raw.data() + off, in, out));
    off += in * out;
    enc.biases.emplace_back(
        Eigen::Map<const Eigen::RowVectorXd>(raw.data() + off, out));
    off += out;
  }
  return enc;
}

void NodeModel::set_encoder(const EncoderParams& enc) {
  int off = layout.encoder;
  for (size_t l = 0; l < layout.encoder_shapes.size(); ++l) {
    const auto& [in, out] = layout.encoder_shapes[l];
    if (enc.weights[l].rows() != in || enc.weights[l].cols() != out) {
      throw ContractError("set_encoder: layer shape mismatch");
    }
    Eigen::Map<MatrixXd>(raw.data() + off, in, out) = enc.weights[l];
    off += in * out;
    Eigen::Map<Eigen::RowVectorXd>(raw.data() + off, out) = enc.biases[l];
    off += out;
  }
}

Eigen::Array<bool, Eigen::Dynamic, 1> NodeModel::active_mask() const {
  Eigen::Array<bool, Eigen::Dynamic, 1> mask =
      Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(input_dim(), false);
  for (int k = 0; k < 5; ++k) mask = mask || active[k];
  return mask;
}

double NodeModel::theta_value(int family, int dim) const {
  return active[family](dim) ? softplus(raw(layout.theta[family] + dim))
                             : kFrozenTheta;
}

double NodeModel::theta_raw(int family, int dim) const {
  return raw(layout.theta[family] + dim);
}

void NodeModel::set_theta_raw(int family, int dim, double raw_value) {
  raw(layout.theta[family] + dim) = raw_value;
}

void NodeModel::freeze_theta(int family, int dim) {
  active[family](dim) = false;
}

void NodeModel::unfreeze_theta(int family, int dim) {
  active[family](dim) = true;
}

namespace detail {

// Assembles the bound on the tape. eps is the (b x mc) reparameterisation
// noise; jitter applies to K_uu.
NodeTapeVars build_node_elbo_tape(ad::Tape& tape, const NodeModel& node,
                                  const MatrixXd& x_batch, int mc_samples,
                                  int dataset_size, const MatrixXd& eps,
                                  double jitter) {
  const int b = static_cast<int>(x_batch.rows());
  const int dims = node.input_dim();
  const int m = node.m_inducing;
  const int n_st = b * mc_samples;
  const double factor = static_cast<double>(dataset_size) / b;

  NodeTapeVars out;
  out.raw_leaf = tape.var(node.raw);

  ad::Tape::KernelParamVars kp;
  ad::Var theta_vars[5];
  for (int k = 0; k < 5; ++k) {
    theta_vars[k] =
        node.family_enabled[k]
            ? tape.softplus_masked(
                  tape.segment(out.raw_leaf, node.layout.theta[k], dims),
                  node.active[k], kFrozenTheta)
            : tape.constant(MatrixXd::Zero(dims, 1));
  }
  kp.theta_lin = theta_vars[0];
  kp.theta_sqe = theta_vars[1];
  kp.theta_m12 = theta_vars[2];
  kp.theta_m32 = theta_vars[3];
  kp.theta_rq = theta_vars[4];
  for (int k = 0; k < 5; ++k) out.theta[k] = theta_vars[k];
  auto family_var = [&](int family, int raw_offset) {
    return node.family_enabled[family]
               ? tape.softplus_all(tape.segment(out.raw_leaf, raw_offset, 1))
               : tape.scalar(0.0);
  };
  kp.var_sqe = family_var(1, node.layout.kernel_vars + 0);
  kp.var_m12 = family_var(2, node.layout.kernel_vars + 1);
  kp.var_m32 = family_var(3, node.layout.kernel_vars + 2);
  kp.var_rq = family_var(4, node.layout.kernel_vars + 3);
  kp.rq_shape =
      tape.softplus_all(tape.segment(out.raw_leaf, node.layout.rq_shape, 1));
  const ad::Var noise =
      tape.softplus_all(tape.segment(out.raw_leaf, node.layout.noise, 1));

  const ad::Var z = tape.reshape(
      tape.segment(out.raw_leaf, node.layout.z, m * dims), m, dims);

  // Variational state.
  ad::Var qu_mean, ls;
  if (node.qu_mode == QuMode::kNatural) {
    out.qu_mean_leaf = tape.var(node.qu_mean);
    out.qu_cov_leaf = tape.var(node.qu_cov);
    qu_mean = out.qu_mean_leaf;
    ls = tape.cholesky(out.qu_cov_leaf, 0.0);
  } else {
    qu_mean = tape.segment(out.raw_leaf, node.layout.qu, m);
    ls = tape.lower_tri_from_raw(
        tape.segment(out.raw_leaf, node.layout.qu + m, m * (m + 1) / 2), m);
  }

  // Latent path: per-point Gaussian parameters and stacked samples.
  ad::Var w_mu, w_logscale;
  double exp_factor;
  if (node.latent_mode == LatentMode::kEncoder) {
    ad::Var h = tape.constant(x_batch);
    int off = node.layout.encoder;
    const int layers = static_cast<int>(node.layout.encoder_shapes.size());
    for (int l = 0; l < layers; ++l) {
      const auto& [in, width] = node.layout.encoder_shapes[l];
      ad::Var w = tape.reshape(tape.segment(out.raw_leaf, off, in * width),
                               in, width);
      off += in * width;
      ad::Var bias = tape.transpose(tape.segment(out.raw_leaf, off, width));
      off += width;
      h = tape.add_rowvec(tape.matmul(h, w), bias);
      if (l + 1 < layers) h = tape.relu(h);
    }
    w_mu = tape.col(h, 0);
    w_logscale = tape.col(h, 1);  // log variance; scale = exp(0.5 raw)
    exp_factor = 0.5;
  } else {
    w_mu = tape.segment(out.raw_leaf, node.layout.latent, b);
    w_logscale = tape.segment(out.raw_leaf, node.layout.latent + b, b);
    exp_factor = 1.0;  // log standard deviation
  }
  const ad::Var w_st = tape.reparam_stack(w_mu, w_logscale, eps, exp_factor);

  // Observed input columns, tiled once per Monte Carlo sample.
  MatrixXd x_obs(b, dims - 1);
  for (size_t c = 0; c < node.observed.size(); ++c) {
    x_obs.col(c) = x_batch.col(node.observed[c]);
  }
  const MatrixXd x_obs_st = tile_rows(x_obs, mc_samples);

  ad::Tape::PointSet f_points;
  f_points.fixed = x_obs_st;
  f_points.latent = w_st;
  ad::Tape::PointSet z_points;
  z_points.full = z;

  const ad::Var k_uu = tape.kernel_gram(kp, z_points, z_points,
                                        KernelKind::kSum);
  const ad::Var l = tape.cholesky(k_uu, jitter);
  const ad::Var k_uf =
      tape.kernel_gram(kp, z_points, f_points, KernelKind::kSum);
  const ad::Var k_ff_diag = tape.kernel_diag(kp, f_points, KernelKind::kSum);

  const ad::Var a = tape.solve_lower(l, k_uf);         // M x n_st
  const ad::Var beta = tape.solve_lower(l, qu_mean);   // M x 1
  const ad::Var fmean = tape.matmul(tape.transpose(a), beta);
  const ad::Var q_diag = tape.colwise_sqnorm(a);
  const ad::Var c = tape.solve_lower_t(l, a);          // K^-1 K_uf
  const ad::Var s_half = tape.matmul(tape.transpose(ls), c);
  const ad::Var s_diag = tape.colwise_sqnorm(s_half);
  const ad::Var fvar =
      tape.cwise_max(tape.add(tape.sub(k_ff_diag, q_diag), s_diag), 0.0);

  // Closed-form Gaussian expected log likelihood.
  const MatrixXd x_target_st =
      tile_rows(x_batch.col(node.target), mc_samples);
  const ad::Var resid = tape.sub(tape.constant(x_target_st), fmean);
  const ad::Var quad = tape.sum(tape.add(tape.square(resid), fvar));
  ad::Var loglik = tape.scale(tape.div_scalar(quad, noise), -0.5);
  loglik = tape.add(loglik, tape.scale(tape.log(noise), -0.5 * n_st));
  loglik =
      tape.add(loglik, tape.scalar(-0.5 * n_st * kLogTwoPi));
  const ad::Var data_term = tape.scale(loglik, factor / mc_samples);

  // KL[q(u) || N(0, K_uu)].
  const ad::Var tr_term = tape.sum(tape.square(tape.solve_lower(l, ls)));
  const ad::Var maha = tape.sum(tape.square(beta));
  ad::Var kl_u = tape.scale(tape.add(tr_term, maha), 0.5);
  kl_u = tape.add(kl_u, tape.scalar(-0.5 * m));
  kl_u = tape.sub(kl_u, tape.log_diag_sum(ls));
  kl_u = tape.add(kl_u, tape.log_diag_sum(l));

  // Sum over the batch of KL[q(w_n) || N(0, 1)].
  ad::Var logvar = node.latent_mode == LatentMode::kEncoder
                       ? w_logscale
                       : tape.scale(w_logscale, 2.0);
  ad::Var kl_w = tape.add(tape.sum(tape.square(w_mu)),
                          tape.sum(tape.exp(logvar)));
  kl_w = tape.sub(kl_w, tape.sum(logvar));
  kl_w = tape.add(kl_w, tape.scalar(-1.0 * b));
  kl_w = tape.scale(kl_w, 0.5);

  ad::Var elbo = tape.sub(data_term, kl_u);
  elbo = tape.sub(elbo, tape.scale(kl_w, factor));
  out.elbo = elbo;
  return out;
}

}  // namespace detail

namespace {

void check_elbo_inputs(const NodeModel& node, const MatrixXd& x_batch,
                       int mc_samples, int dataset_size) {
  if (x_batch.cols() != node.data_dim) {
    throw ContractError("node_elbo: batch column count mismatch");
  }
  if (x_batch.rows() > dataset_size) {
    throw ContractError("node_elbo: batch larger than dataset_size");
  }
  if (x_batch.rows() < 1 || mc_samples < 1) {
    throw ContractError("node_elbo: batch and mc_samples must be nonempty");
  }
  if (node.latent_mode == LatentMode::kFreeForm &&
      x_batch.rows() != node.train_n) {
    throw ContractError(
        "node_elbo: free-form latents require the full dataset as the batch");
  }
}

}  // namespace

std::pair<VectorXd, VectorXd> q_f_moments(const NodeModel& node,
                                          const MatrixXd& inputs) {
  if (inputs.cols() != node.input_dim()) {
    throw ContractError("q_f_moments: input column count mismatch");
  }
  const NodeKernelParams params = node.kernel_params();
  const MatrixXd z = node.inducing_inputs();
  const VariationalGaussian q = node.q_u();
  const MatrixXd k_uu = eval_kernel(params, z, z, KernelKind::kSum);
  const MatrixXd k_uf = eval_kernel(params, z, inputs, KernelKind::kSum);
  const VectorXd k_ff = eval_kernel_diag(params, inputs, KernelKind::kSum);
  if (!k_uu.allFinite() || !k_uf.allFinite() || !k_ff.allFinite()) {
    throw NumericalError("q_f_moments: non-finite kernel matrices");
  }

  double jitter = node.jitter;
  for (int attempt = 0; attempt <= kJitterRetries; ++attempt, jitter *= 10.0) {
    MatrixXd k_jittered = k_uu;
    k_jittered.diagonal().array() += jitter;
    Eigen::LLT<MatrixXd> llt(k_jittered);
    if (llt.info() != Eigen::Success) continue;
    const MatrixXd l = llt.matrixL();
    const MatrixXd a = l.triangularView<Eigen::Lower>().solve(k_uf);
    const VectorXd beta = l.triangularView<Eigen::Lower>().solve(q.mean);
    const VectorXd fmean = a.transpose() * beta;
    const MatrixXd c =
        l.transpose().triangularView<Eigen::Upper>().solve(a);
    const MatrixXd s_half = q.cov_factor.transpose() * c;
    VectorXd fvar = k_ff - a.colwise().squaredNorm().transpose() +
                    s_half.colwise().squaredNorm().transpose();
    fvar = fvar.cwiseMax(0.0);
    return {fmean, fvar};
  }
  throw NumericalError("q_f_moments: Cholesky failed after jitter escalation");
}

std::pair<double, double> kl_terms(const NodeModel& node, const VectorXd& mu,
                                   const VectorXd& var) {
  if (mu.size() != var.size()) {
    throw ContractError("kl_terms: mu and var must have equal length");
  }
  for (int i = 0; i < var.size(); ++i) {
    if (!(var(i) > 0.0)) throw ContractError("kl_terms: variances must be positive");
  }
  const NodeKernelParams params = node.kernel_params();
  const MatrixXd z = node.inducing_inputs();
  const VariationalGaussian q = node.q_u();
  q.validate();
  MatrixXd k_uu = eval_kernel(params, z, z, KernelKind::kSum);
  k_uu.diagonal().array() += node.jitter;
  Eigen::LLT<MatrixXd> llt(k_uu);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("kl_terms: prior covariance not positive definite");
  }
  const MatrixXd l = llt.matrixL();
  const MatrixXd ls_solve =
      l.triangularView<Eigen::Lower>().solve(q.cov_factor);
  const VectorXd beta = l.triangularView<Eigen::Lower>().solve(q.mean);
  double kl_u = 0.5 * (ls_solve.squaredNorm() + beta.squaredNorm() -
                       node.m_inducing);
  kl_u -= q.cov_factor.diagonal().array().log().sum();
  kl_u += l.diagonal().array().log().sum();

  double kl_w = 0.0;
  for (int i = 0; i < mu.size(); ++i) {
    kl_w += 0.5 * (mu(i) * mu(i) + var(i) - 1.0 - std::log(var(i)));
  }
  return {std::max(kl_u, 0.0), std::max(kl_w, 0.0)};
}

double node_elbo(const NodeModel& node, const MatrixXd& x_batch,
                 int mc_samples, int dataset_size, Rng& rng) {
  check_elbo_inputs(node, x_batch, mc_samples, dataset_size);
  const MatrixXd eps =
      rng.normal_matrix(static_cast<int>(x_batch.rows()), mc_samples);
  double jitter = node.jitter;
  for (int attempt = 0; attempt <= kJitterRetries; ++attempt, jitter *= 10.0) {
    try {
      ad::Tape tape;
      const detail::NodeTapeVars built = detail::build_node_elbo_tape(
          tape, node, x_batch, mc_samples, dataset_size, eps, jitter);
      const double value = tape.scalar_value(built.elbo);
      if (!std::isfinite(value)) {
        throw NumericalError("node_elbo: non-finite bound");
      }
      return value;
    } catch (const NumericalError&) {
      if (attempt == kJitterRetries) throw;
    }
  }
  throw NumericalError("node_elbo: unreachable");
}

NodeElboResult node_elbo_with_grads(const NodeModel& node,
                                    const MatrixXd& x_batch, int mc_samples,
                                    int dataset_size, Rng& rng) {
  check_elbo_inputs(node, x_batch, mc_samples, dataset_size);
  const MatrixXd eps =
      rng.normal_matrix(static_cast<int>(x_batch.rows()), mc_samples);
  double jitter = node.jitter;
  for (int attempt = 0; attempt <= kJitterRetries; ++attempt, jitter *= 10.0) {
    try {
      ad::Tape tape;
      const detail::NodeTapeVars built = detail::build_node_elbo_tape(
          tape, node, x_batch, mc_samples, dataset_size, eps, jitter);
      const double value = tape.scalar_value(built.elbo);
      if (!std::isfinite(value)) {
        throw NumericalError("node_elbo: non-finite bound");
      }
      tape.backward(built.elbo);
      NodeElboResult result;
      result.value = value;
      result.grads.raw = tape.grad(built.raw_leaf).col(0);
      if (node.qu_mode == QuMode::kNatural) {
        result.grads.qu_mean = tape.grad(built.qu_mean_leaf).col(0);
        result.grads.qu_cov = tape.grad(built.qu_cov_leaf);
      }
      return result;
    } catch (const NumericalError&) {
      if (attempt == kJitterRetries) throw;
    }
  }
  throw NumericalError("node_elbo_with_grads: unreachable");
}

double model_elbo(const std::vector<NodeModel>& nodes, const MatrixXd& x_batch,
                  int dataset_size, int mc_samples, const Rng& rng) {
  double total = 0.0;
  for (const NodeModel& node : nodes) {
    Rng node_rng = rng.derive(static_cast<std::uint64_t>(node.target));
    total += node_elbo(node, x_batch, mc_samples, dataset_size, node_rng);
  }
  return total;
}

double exact_gp_lml(const NodeKernelParams& kernel, const MatrixXd& x,
                    const VectorXd& y, double noise_var) {
  const auto n = x.rows();
  if (n > 2000) throw ContractError("exact_gp_lml: n must be <= 2000");
  if (y.size() != n) throw ContractError("exact_gp_lml: y length mismatch");
  if (!(noise_var > 0.0)) {
    throw ContractError("exact_gp_lml: noise_var must be positive");
  }
  MatrixXd c = eval_kernel(kernel, x, x, KernelKind::kSum);
  c.diagonal().array() += noise_var;
  Eigen::LLT<MatrixXd> llt(c);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("exact_gp_lml: factorization failed");
  }
  const MatrixXd l = llt.matrixL();
  const VectorXd alpha = l.triangularView<Eigen::Lower>().solve(y);
  return -0.5 * n * kLogTwoPi - l.diagonal().array().log().sum() -
         0.5 * alpha.squaredNorm();
}

double collapsed_bound_no_latent(const NodeKernelParams& kernel,
                                 const MatrixXd& z, const MatrixXd& x,
                                 const VectorXd& y, double noise_var,
                                 double jitter) {
  const auto n = x.rows();
  const auto m = z.rows();
  if (m > n) throw ContractError("collapsed_bound_no_latent: M must be <= N");
  if (!(noise_var > 0.0)) {
    throw ContractError("collapsed_bound_no_latent: noise_var must be positive");
  }
  MatrixXd k_uu = eval_kernel(kernel, z, z, KernelKind::kSum);
  k_uu.diagonal().array() += jitter;
  Eigen::LLT<MatrixXd> llt(k_uu);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("collapsed_bound_no_latent: K_uu factorization failed");
  }
  const MatrixXd l = llt.matrixL();
  const MatrixXd k_uf = eval_kernel(kernel, z, x, KernelKind::kSum);
  const double sigma = std::sqrt(noise_var);
  const MatrixXd a = l.triangularView<Eigen::Lower>().solve(k_uf) / sigma;
  MatrixXd b = a * a.transpose();
  b.diagonal().array() += 1.0;
  Eigen::LLT<MatrixXd> llt_b(b);
  if (llt_b.info() != Eigen::Success) {
    throw NumericalError("collapsed_bound_no_latent: B factorization failed");
  }
  const MatrixXd lb = llt_b.matrixL();
  const VectorXd ay = a * y;
  const VectorXd c_vec =
      lb.triangularView<Eigen::Lower>().solve(ay) / sigma;
  const double kff_trace =
      eval_kernel_diag(kernel, x, KernelKind::kSum).sum();
  return -0.5 * n * kLogTwoPi - lb.diagonal().array().log().sum() -
         0.5 * n * std::log(noise_var) - 0.5 * y.squaredNorm() / noise_var +
         0.5 * c_vec.squaredNorm() -
         (kff_trace - noise_var * a.squaredNorm()) / (2.0 * noise_var);
}

}  // namespace causalcde
