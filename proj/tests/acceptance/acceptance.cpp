// Acceptance suite: one check per shipping criterion, each printed as a
// single pass/fail line. Exit status is the number of failed criteria.

#include <chrono>
#include <cstdio>
#include <functional>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../helpers.hpp"
#include "../oracles.hpp"
#include "causalcde/experiments.hpp"
#include "causalcde/io.hpp"
#include "causalcde/threadpool.hpp"

using namespace causalcde;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

// ---- 1. acyclicity(A) <= 1e-8 agrees with a cycle-detection oracle. ------
Outcome criterion_acyclicity() {
  Rng rng(20250801);
  int checked = 0, cyclic = 0;
  // Present edges carry weight >= 0.35: an 8-cycle then contributes at
  // least 8 * 0.35^8 / 8! > 4e-8 to h, keeping the 1e-8 test separative.
  for (int trial = 0; trial < 10000; ++trial) {
    const int d = 2 + static_cast<int>(rng.uniform_index(7));
    MatrixXd a = MatrixXd::Zero(d, d);
    const double density = rng.uniform(0.05, 0.7);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        if (i != j && rng.uniform() < density) {
          a(i, j) = rng.uniform(0.35, 1.5);
        }
      }
    }
    const WeightedAdjacency adj(a);
    const bool via_h = acyclicity(adj) <= 1e-8;
    const bool oracle = oracles::dfs_acyclic(a, 1e-12);
    if (via_h != oracle) {
      return {false, "disagreement at trial " + std::to_string(trial)};
    }
    ++checked;
    if (!oracle) ++cyclic;
  }
  return {true, std::to_string(checked) + " matrices, " +
                    std::to_string(cyclic) + " cyclic"};
}

// ---- 2. enumerate_dags counts 1, 3, 25, 543. -----------------------------
Outcome criterion_enumeration() {
  const std::vector<size_t> expected = {1, 3, 25, 543};
  for (int d = 1; d <= 4; ++d) {
    const size_t count = enumerate_dags(d).size();
    if (count != expected[d - 1]) {
      return {false, "d=" + std::to_string(d) + " gave " +
                         std::to_string(count)};
    }
  }
  return {true, "counts 1, 3, 25, 543"};
}

// ---- 3. FD gradient suite on node_elbo and training_loss. ----------------
Outcome criterion_gradients() {
  const int n = 32, d = 2, m = 8, mc = 8;
  Rng data_rng(88);
  Dataset raw;
  raw.values = data_rng.normal_matrix(n, d);
  raw.columns = {"x0", "x1"};
  const MatrixXd data = standardize(raw).values;

  TrainConfig config = desk_profile();
  config.m_inducing = m;
  config.mc_samples = mc;
  config.batch = 0;
  config.encoder = EncoderConfig{16, 3};

  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    CgpCdeModel model;
    for (int i = 0; i < d; ++i) {
      NodeModel node =
          NodeModel::create(d, i, {1 - i}, m, LatentMode::kEncoder,
                            QuMode::kRawFactor, config.encoder, n);
      Rng param_rng(5000 + 10 * trial + i);
      node.raw = 0.3 * param_rng.normal_vector(node.layout.total);
      model.nodes.push_back(std::move(node));
    }
    AugLagState auglag;
    auglag.alpha = 0.4 + 0.1 * trial;
    auglag.rho = 0.2;
    const std::uint64_t seed = 314159 + trial;

    // Coordinate subset: every non-encoder parameter plus a slice of the
    // encoder block.
    std::vector<int> coords;
    const NodeLayout& lay = model.nodes[0].layout;
    for (int i = 0; i < lay.encoder; ++i) coords.push_back(i);
    Rng pick(99 + trial);
    for (int k = 0; k < 40; ++k) {
      coords.push_back(lay.encoder + static_cast<int>(pick.uniform_index(
                                         lay.total - lay.encoder)));
    }

    // node_elbo for node 0.
    {
      NodeModel& node = model.nodes[0];
      auto objective = [&](const VectorXd& x) {
        NodeModel work = node;
        work.raw = x;
        Rng r(seed);
        return node_elbo(work, data, mc, n, r);
      };
      auto gradient = [&](const VectorXd& x) {
        NodeModel work = node;
        work.raw = x;
        Rng r(seed);
        return node_elbo_with_grads(work, data, mc, n, r).grads.raw;
      };
      const GradCheckReport report =
          grad_check(objective, gradient, node.raw, 1e-4, 1e-5, coords);
      worst = std::max(worst, report.max_rel_error);
      if (!report.pass) {
        return {false, "node_elbo trial " + std::to_string(trial) +
                           " rel err " + std::to_string(report.max_rel_error)};
      }
    }
    // training_loss through the adjacency penalty, node 0's block.
    {
      auto objective = [&](const VectorXd& x) {
        CgpCdeModel work = model;
        work.nodes[0].raw = x;
        return training_loss(work, data, n, config, auglag, Rng(seed));
      };
      auto gradient = [&](const VectorXd& x) {
        CgpCdeModel work = model;
        work.nodes[0].raw = x;
        return training_loss_with_grads(work, data, n, config, auglag,
                                        Rng(seed))
            .node_grads[0]
            .raw;
      };
      const GradCheckReport report = grad_check(
          objective, gradient, model.nodes[0].raw, 1e-4, 1e-5, coords);
      worst = std::max(worst, report.max_rel_error);
      if (!report.pass) {
        return {false, "training_loss trial " + std::to_string(trial) +
                           " rel err " + std::to_string(report.max_rel_error)};
      }
    }
  }
  std::ostringstream detail;
  detail << "20 parameterizations, worst rel err " << worst;
  return {true, detail.str()};
}

// ---- 4. Collapsed-bound exactness and natural-gradient optimality. -------
Outcome criterion_bound_exactness() {
  Rng rng(424242);
  double worst_gap = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 8 + static_cast<int>(rng.uniform_index(57));  // <= 64
    const NodeKernelParams params = helpers::random_kernel_params(2, rng);
    const MatrixXd x = rng.normal_matrix(n, 2);
    const VectorXd y = rng.normal_vector(n);
    const double noise_var = rng.uniform(0.3, 2.0);
    const double collapsed = collapsed_bound_no_latent(params, x, x, y,
                                                       noise_var);
    const double exact = exact_gp_lml(params, x, y, noise_var);
    const double rel = std::abs(collapsed - exact) /
                       std::max(1.0, std::abs(exact));
    worst_gap = std::max(worst_gap, rel);
    if (rel > 1e-6) {
      return {false, "Z=X gap " + std::to_string(rel) + " at trial " +
                         std::to_string(trial)};
    }
  }

  // One unit natural-gradient step in the conjugate full-batch case.
  Rng setup_rng(777);
  const int n = 24, m = 6;
  auto [node, data] = helpers::random_node_with_data(n, 2, 1, m, setup_rng);
  helpers::freeze_latent(node);
  helpers::set_noise_var(node, 0.9);
  EncoderParams enc = node.encoder();
  for (auto& w : enc.weights) w.setZero();
  for (auto& b : enc.biases) b.setZero();
  node.set_encoder(enc);
  VariationalGaussian q0;
  q0.mean = 0.4 * setup_rng.normal_vector(m);
  q0.cov_factor = MatrixXd::Identity(m, m);
  node.set_q_u(q0);
  Rng grad_rng(5);
  const NodeElboResult eval = node_elbo_with_grads(node, data, 2, n, grad_rng);
  const ExpectationGrads eg = to_expectation_grads(
      node.q_u(), eval.grads.qu_mean, eval.grads.qu_cov);
  node.set_q_u(natgrad_step(node.q_u(), eg, 1.0));
  Rng eval_rng(5);
  const double achieved = node_elbo(node, data, 2, n, eval_rng);
  MatrixXd gp_inputs(n, 2);
  gp_inputs.col(0) = data.col(0);
  gp_inputs.col(1) = VectorXd::Zero(n);
  const double collapsed = collapsed_bound_no_latent(
      node.kernel_params(), node.inducing_inputs(), gp_inputs, data.col(1),
      node.noise_var(), node.jitter);
  const double rel = std::abs(achieved - collapsed) /
                     std::max(1.0, std::abs(collapsed));
  if (rel > 1e-6) {
    return {false, "natgrad step gap " + std::to_string(rel)};
  }
  std::ostringstream detail;
  detail << "50 problems, worst Z=X gap " << worst_gap << "; natgrad gap "
         << rel;
  return {true, detail.str()};
}

// ---- 5. SID against the brute-force criterion; SHD axioms. ---------------
Outcome criterion_metric_oracles() {
  const auto dags = enumerate_dags(3);
  for (const Dag& truth : dags) {
    for (const Dag& pred : dags) {
      if (sid(truth, pred) != oracles::sid_paths(truth, pred)) {
        return {false, "sid disagreement on a 3-node pair"};
      }
      const int d_ab = shd(truth, pred);
      if (d_ab != shd(pred, truth)) return {false, "shd asymmetry"};
      if ((d_ab == 0) != (truth == pred)) return {false, "shd identity"};
    }
  }
  for (const Dag& a : dags) {
    for (const Dag& b : dags) {
      for (const Dag& c : dags) {
        if (shd(a, b) > shd(a, c) + shd(c, b)) {
          return {false, "shd triangle inequality"};
        }
      }
    }
  }
  Rng rng(20240202);
  for (int trial = 0; trial < 200; ++trial) {
    const Dag truth = sample_random_dag(4, 3.5, GraphScheme::kErdosRenyi, rng);
    const Dag pred = sample_random_dag(4, 3.5, GraphScheme::kErdosRenyi, rng);
    if (sid(truth, pred) != oracles::sid_paths(truth, pred)) {
      return {false, "sid disagreement on a 4-node pair"};
    }
  }
  const Dag forward(2, {{0, 1}});
  const Dag backward(2, {{1, 0}});
  if (shd(forward, backward) != 2) return {false, "reversed edge must cost 2"};
  return {true, "25x25 exhaustive + 200 random 4-node pairs"};
}

// ---- 6. Discrete recovery at desk scale. ---------------------------------
Outcome criterion_discrete_recovery(int threads) {
  TrainConfig config = desk_profile();
  config.discrete_m_inducing = 16;
  config.discrete_mc_samples = 6;
  config.discrete_adam_steps = 500;
  config.discrete_decay_steps = 150;
  config.eval_mc_samples = 48;

  const ErrorRateReport report =
      run_error_rate_experiment(2, 250, config, 3, 618, threads);
  int usable = 0, mec = 0;
  std::vector<double> shds;
  for (const auto& record : report.records) {
    if (record.failed) continue;
    ++usable;
    mec += record.mec_recovery ? 1 : 0;
    shds.push_back(record.metrics.shd);
  }
  const double med = median(shds);
  std::ostringstream detail;
  detail << usable << "/12 usable, median SHD " << med << ", MEC recovery "
         << mec << "/12";
  const bool pass = usable == 12 && med <= 2.0 && mec >= 6;
  return {pass, detail.str()};
}

// ---- 7. Continuous smoke recovery on a 3-node chain. ---------------------
Outcome criterion_continuous_smoke(int threads) {
  TrainConfig config = desk_profile();
  config.m_inducing = 24;
  config.mc_samples = 8;
  config.t0 = 1200;
  config.tf = 2500;
  config.t_conv = 250;
  config.alpha_calib_steps = 200;
  config.max_subproblems = 16;
  config.encoder = EncoderConfig{32, 3};

  const Dag chain(3, {{0, 1}, {1, 2}});
  int hits = 0;
  std::ostringstream detail;
  for (int rep = 0; rep < 3; ++rep) {
    Rng data_rng(26000 + rep);
    const Dataset raw = sample_nn_scm(chain, 500, data_rng);
    const MatrixXd data = standardize(raw).values;
    std::vector<std::uint64_t> seeds;
    Rng seed_rng(37000 + rep);
    for (int r = 0; r < 3; ++r) seeds.push_back(seed_rng.next_u64());
    try {
      auto [best, all] = run_restarts(data, config, seeds, threads);
      if (!is_acyclic(best.adjacency, 0.0)) {
        return {false, "returned graph is not acyclic"};
      }
      const double f1 = f1_score(chain, best.graph);
      detail << (rep ? ", " : "") << "rep" << rep << " f1=" << f1;
      if (f1 >= 0.5) ++hits;
    } catch (const std::exception& err) {
      detail << (rep ? ", " : "") << "rep" << rep << " failed: " << err.what();
    }
  }
  detail << " -> " << hits << "/3";
  return {hits >= 2, detail.str()};
}

// ---- 8. Augmented Lagrangian schedule fidelity. ---------------------------
Outcome criterion_schedule() {
  // Hand-built h sequence; expectations recomputed with inline arithmetic.
  const std::vector<double> h = {0.5, 0.3, 0.29, 0.05, 0.045, 0.0};
  AugLagState state;
  state.alpha = 1.0;
  state.rho = 0.0;
  state.h_prev = 0.4;
  double expect_alpha = 1.0, expect_rho = 0.0, expect_prev = 0.4;
  for (double h_now : h) {
    const AugLagState next = auglag_update(state, h_now);
    expect_rho = expect_rho + expect_alpha * h_now;
    expect_alpha =
        h_now > 0.9 * expect_prev ? 10.0 * expect_alpha : expect_alpha;
    expect_prev = h_now;
    if (next.rho != expect_rho || next.alpha != expect_alpha ||
        next.h_prev != expect_prev) {
      return {false, "trace mismatch at h=" + std::to_string(h_now)};
    }
    if (next.alpha < state.alpha || next.rho < state.rho) {
      return {false, "coefficients not monotone"};
    }
    state = next;
  }
  return {true, "6-step trace reproduced exactly"};
}

// ---- 9. Byte-for-byte replay of a discover run. ---------------------------
Outcome criterion_determinism() {
  const char* bin = std::getenv("CAUSAL_CDE_BIN");
  if (!bin) return {false, "CAUSAL_CDE_BIN not set"};
  const std::string base = "acceptance_determinism";
  fs::remove_all(base);
  fs::create_directories(base);
  auto run = [&](const std::string& args) {
    const std::string cmd = std::string(bin) + " " + args +
                            " > " + base + "/stdout.txt 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  if (run("generate --scheme chain --n 120 --seed 9 --out " + base +
          "/data") != 0) {
    return {false, "generate failed"};
  }
  const std::string flags =
      " --t0 300 --tf 300 --t-conv 60 --m-inducing 8 --mc-samples 4"
      " --encoder-hidden 8 --encoder-layers 2";
  if (run("discover --data " + base + "/data/dataset.csv --seed 13"
          " --restarts 2 --threads 2 --out " + base + "/run1" + flags) != 0) {
    return {false, "first discover run failed"};
  }
  if (run("discover --config " + base + "/run1/config.json --out " + base +
          "/run2") != 0) {
    return {false, "replay from snapshot failed"};
  }
  auto slurp = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string a = slurp(base + "/run1/adjacency.csv");
  const std::string b = slurp(base + "/run2/adjacency.csv");
  if (a.empty() || a != b) return {false, "adjacency bytes differ"};
  fs::remove_all(base);
  return {true, "adjacency.csv reproduced byte-for-byte"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--only=", 0) == 0) {
      std::stringstream ss(arg.substr(7));
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    }
  }
  const int threads = resolve_thread_count(0);

  struct Entry {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Entry> criteria = {
      {1, "acyclicity equivalence", criterion_acyclicity},
      {2, "enumeration counts", criterion_enumeration},
      {3, "gradient suite", criterion_gradients},
      {4, "bound exactness + natural gradient", criterion_bound_exactness},
      {5, "metric oracles", criterion_metric_oracles},
      {6, "discrete recovery",
       [threads] { return criterion_discrete_recovery(threads); }},
      {7, "continuous smoke recovery",
       [threads] { return criterion_continuous_smoke(threads); }},
      {8, "schedule fidelity", criterion_schedule},
      {9, "determinism", criterion_determinism},
  };

  int failures = 0;
  for (const Entry& entry : criteria) {
    if (!only.empty() && !only.count(entry.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = entry.run();
    } catch (const std::exception& err) {
      outcome = {false, std::string("exception: ") + err.what()};
    }
    std::printf("[%s] criterion %d: %s (%.1fs) %s\n",
                outcome.pass ? "PASS" : "FAIL", entry.id, entry.name,
                elapsed_seconds(start), outcome.detail.c_str());
    std::fflush(stdout);
    if (!outcome.pass) ++failures;
  }
  return failures;
}
