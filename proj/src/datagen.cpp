#include "causalcde/datagen.hpp"

#include <cmath>
#include <sstream>

#include "causalcde/kernels.hpp"

namespace causalcde {

namespace {

std::vector<std::string> default_columns(int d) {
  std::vector<std::string> names;
  names.reserve(d);
  for (int i = 0; i < d; ++i) names.push_back("x" + std::to_string(i));
  return names;
}

VectorXd sample_gp_function(const MatrixXd& k, Rng& rng) {
  const auto n = k.rows();
  double jitter = 1e-8;
  for (int attempt = 0; attempt < 4; ++attempt, jitter *= 10.0) {
    MatrixXd c = k;
    c.diagonal().array() += jitter;
    Eigen::LLT<MatrixXd> llt(c);
    if (llt.info() != Eigen::Success) continue;
    return MatrixXd(llt.matrixL()) * rng.normal_vector(static_cast<int>(n));
  }
  throw NumericalError("sample_gp_function: Cholesky failed after jitter escalation");
}

}  // namespace

void Dataset::validate() const {
  if (static_cast<int>(columns.size()) != dim()) {
    throw ContractError("Dataset: column name count mismatch");
  }
  if (!values.allFinite()) throw ContractError("Dataset: non-finite entries");
}

Dataset standardize(const Dataset& data) {
  data.validate();
  Dataset out = data;
  for (int j = 0; j < data.dim(); ++j) {
    const double mean = data.values.col(j).mean();
    const double var =
        (data.values.col(j).array() - mean).square().sum() / data.n();
    if (!(var > 1e-24)) {
      throw ContractError("standardize: column '" + data.columns[j] +
                          "' has zero variance");
    }
    out.values.col(j) = (data.values.col(j).array() - mean) / std::sqrt(var);
  }
  out.standardized = true;
  return out;
}

Dataset sample_gpcde_dataset(const Dag& dag, int n, Rng& rng,
                             const Interventions& interventions) {
  if (n < 1 || n > 3000) {
    throw ContractError("sample_gpcde_dataset: n must lie in [1, 3000]");
  }
  const int d = dag.dim();
  Dataset out;
  out.values = MatrixXd::Zero(n, d);
  out.columns = default_columns(d);
  out.provenance = "gpcde";
  out.seed = rng.base_seed();

  static const KernelKind pool[] = {KernelKind::kM12, KernelKind::kM32,
                                    KernelKind::kM52, KernelKind::kSqe,
                                    KernelKind::kRq};
  for (int node : topological_order(dag)) {
    if (auto it = interventions.find(node); it != interventions.end()) {
      if (it->second.size() != n) {
        throw ContractError("sample_gpcde_dataset: intervention length mismatch");
      }
      out.values.col(node) = it->second;
      continue;
    }
    Rng node_rng = rng.derive(static_cast<std::uint64_t>(node));
    const auto& parents = dag.parents(node);
    const int dims = static_cast<int>(parents.size()) + 1;
    const KernelKind pick = pool[node_rng.uniform_index(5)];

    NodeKernelParams params = NodeKernelParams::zeros(dims);
    params.var_sqe = params.var_m12 = params.var_m32 = params.var_rq = 0.0;
    for (int dd = 0; dd < dims; ++dd) {
      params.theta_lin(dd) = node_rng.gamma(1.5, 1.0);
    }
    VectorXd theta_pick(dims);
    for (int dd = 0; dd < dims; ++dd) theta_pick(dd) = node_rng.gamma(1.5, 1.0);
    const double amplitude = node_rng.uniform(1.0, 100.0);
    params.rq_shape = node_rng.uniform(0.1, 10.0);
    switch (pick) {
      case KernelKind::kM12:
        params.theta_m12 = theta_pick;
        params.var_m12 = amplitude;
        break;
      case KernelKind::kM32:
        params.theta_m32 = theta_pick;
        params.var_m32 = amplitude;
        break;
      case KernelKind::kM52:
        params.theta_m52 = theta_pick;
        params.var_m52 = amplitude;
        break;
      case KernelKind::kSqe:
        params.theta_sqe = theta_pick;
        params.var_sqe = amplitude;
        break;
      default:
        params.theta_rq = theta_pick;
        params.var_rq = amplitude;
        break;
    }
    const double noise_std = node_rng.uniform(0.01, 1.0);

    MatrixXd inputs(n, dims);
    for (size_t c = 0; c < parents.size(); ++c) {
      inputs.col(c) = out.values.col(parents[c]);
    }
    inputs.col(dims - 1) = node_rng.normal_vector(n);  // latent w

    MatrixXd k = eval_kernel(params, inputs, inputs, KernelKind::kLin);
    if (pick == KernelKind::kM52) {
      k += eval_kernel(params, inputs, inputs, KernelKind::kM52);
    } else {
      k += eval_kernel(params, inputs, inputs, pick);
    }
    const VectorXd f = sample_gp_function(k, node_rng);
    out.values.col(node) = f + noise_std * node_rng.normal_vector(n);
  }
  out.validate();
  return out;
}

Dataset sample_nn_scm(const Dag& dag, int n, Rng& rng,
                      const Interventions& interventions) {
  if (n < 1) throw ContractError("sample_nn_scm: n must be >= 1");
  const int d = dag.dim();
  const int hidden = 128;
  Dataset out;
  out.values = MatrixXd::Zero(n, d);
  out.columns = default_columns(d);
  out.provenance = "nn_scm";
  out.seed = rng.base_seed();

  for (int node : topological_order(dag)) {
    if (auto it = interventions.find(node); it != interventions.end()) {
      if (it->second.size() != n) {
        throw ContractError("sample_nn_scm: intervention length mismatch");
      }
      out.values.col(node) = it->second;
      continue;
    }
    Rng node_rng = rng.derive(static_cast<std::uint64_t>(node));
    const auto& parents = dag.parents(node);
    const int fan_in = static_cast<int>(parents.size()) + 1;

    MatrixXd w1(fan_in, hidden), w2(hidden, hidden), w3(hidden, 1);
    const double s1 = std::sqrt(2.0 / fan_in);
    const double s2 = std::sqrt(2.0 / hidden);
    for (int j = 0; j < hidden; ++j) {
      for (int i = 0; i < fan_in; ++i) w1(i, j) = node_rng.normal(0.0, s1);
    }
    for (int j = 0; j < hidden; ++j) {
      for (int i = 0; i < hidden; ++i) w2(i, j) = node_rng.normal(0.0, s2);
    }
    for (int i = 0; i < hidden; ++i) w3(i, 0) = node_rng.normal(0.0, s2);

    MatrixXd inputs(n, fan_in);
    for (size_t c = 0; c < parents.size(); ++c) {
      inputs.col(c) = out.values.col(parents[c]);
    }
    inputs.col(fan_in - 1) = node_rng.normal_vector(n);  // noise input

    const MatrixXd h1 = (inputs * w1).cwiseMax(0.0);
    const MatrixXd h2 = (h1 * w2).cwiseMax(0.0);
    out.values.col(node) = h2 * w3;
  }
  out.validate();
  return out;
}

}  // namespace causalcde
