// causal-cde: causal discovery with Gaussian-process conditional density
// estimators. Subcommands: generate | discover | enumerate | evaluate |
// error-rate | gradcheck. Exit codes: 0 success, 2 usage/validation,
// 3 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "causalcde/experiments.hpp"
#include "causalcde/io.hpp"
#include "causalcde/threadpool.hpp"

namespace fs = std::filesystem;
using namespace causalcde;

namespace {

struct ConfigFlags {
  std::string profile = "desk";
  int m_inducing = -1;
  int batch = -1000000;  // sentinel; 0 is meaningful (full batch)
  int mc_samples = -1;
  int t0 = -1;
  int tf = -1;
  int t_conv = -1;
  int encoder_hidden = -1;
  int encoder_layers = -1;
  int discrete_m = -1;
  int discrete_mc = -1;
  int discrete_adam_steps = -1;
  int discrete_decay_steps = -1;
  bool discrete_bfgs = false;
  double alpha0 = -1.0;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--profile", flags.profile, "Config profile: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--m-inducing", flags.m_inducing, "Inducing point count");
  cmd->add_option("--batch", flags.batch, "Minibatch size (0 = full batch)");
  cmd->add_option("--mc-samples", flags.mc_samples, "Monte Carlo samples");
  cmd->add_option("--t0", flags.t0, "Warm-up steps");
  cmd->add_option("--tf", flags.tf, "Cool-down steps");
  cmd->add_option("--t-conv", flags.t_conv, "Convergence window");
  cmd->add_option("--encoder-hidden", flags.encoder_hidden,
                  "Encoder hidden width");
  cmd->add_option("--encoder-layers", flags.encoder_layers,
                  "Encoder linear layers");
  cmd->add_option("--discrete-m", flags.discrete_m,
                  "Inducing points for discrete fits");
  cmd->add_option("--discrete-mc", flags.discrete_mc,
                  "Monte Carlo samples for discrete fits");
  cmd->add_option("--discrete-adam-steps", flags.discrete_adam_steps,
                  "Adam steps per discrete fit");
  cmd->add_option("--discrete-decay-steps", flags.discrete_decay_steps,
                  "Decayed Adam steps per discrete fit");
  cmd->add_flag("--discrete-bfgs", flags.discrete_bfgs,
                "Use BFGS refinement in discrete fits");
  cmd->add_option("--alpha0", flags.alpha0,
                  "Explicit augmented-Lagrangian alpha0");
}

TrainConfig resolve_config(const ConfigFlags& flags) {
  TrainConfig config =
      flags.profile == "paper" ? paper_profile() : desk_profile();
  if (flags.m_inducing > 0) config.m_inducing = flags.m_inducing;
  if (flags.batch != -1000000) config.batch = flags.batch;
  if (flags.mc_samples > 0) config.mc_samples = flags.mc_samples;
  if (flags.t0 >= 0) config.t0 = flags.t0;
  if (flags.tf >= 0) config.tf = flags.tf;
  if (flags.t_conv > 0) config.t_conv = flags.t_conv;
  if (flags.encoder_hidden > 0) config.encoder.hidden = flags.encoder_hidden;
  if (flags.encoder_layers > 0)
    config.encoder.num_layers = flags.encoder_layers;
  if (flags.discrete_m > 0) config.discrete_m_inducing = flags.discrete_m;
  if (flags.discrete_mc > 0) config.discrete_mc_samples = flags.discrete_mc;
  if (flags.discrete_adam_steps >= 0)
    config.discrete_adam_steps = flags.discrete_adam_steps;
  if (flags.discrete_decay_steps >= 0)
    config.discrete_decay_steps = flags.discrete_decay_steps;
  if (flags.discrete_bfgs) config.discrete_bfgs = true;
  if (flags.alpha0 >= 0.0) config.alpha0_override = flags.alpha0;
  return config;
}

std::vector<std::uint64_t> restart_seeds(std::uint64_t seed, int restarts) {
  std::vector<std::uint64_t> seeds;
  Rng rng(seed);
  for (int i = 0; i < restarts; ++i) seeds.push_back(rng.next_u64());
  return seeds;
}

int cmd_generate(const std::string& scheme, const std::string& generator,
                 int d, double edges, int n, std::uint64_t seed,
                 const std::string& out_dir) {
  fs::create_directories(out_dir);
  Rng graph_rng(seed);
  Dag truth = Dag::empty(1);
  if (scheme == "er") {
    truth = sample_random_dag(d, edges, GraphScheme::kErdosRenyi, graph_rng);
  } else if (scheme == "sf") {
    truth = sample_random_dag(d, edges, GraphScheme::kScaleFree, graph_rng);
  } else {
    const std::vector<Dag> structures = distinct_three_node_structures();
    const std::vector<std::string> names = {"empty",    "single", "chain",
                                            "fork",     "collider", "complete"};
    bool found = false;
    for (size_t i = 0; i < names.size(); ++i) {
      if (names[i] == scheme) {
        truth = structures[i];
        found = true;
        break;
      }
    }
    if (!found) throw ContractError("generate: unknown scheme " + scheme);
  }
  Rng data_rng(seed ^ 0x5eedULL);
  std::string chosen = generator;
  if (chosen.empty()) chosen = (scheme == "er" || scheme == "sf") ? "nn" : "gpcde";
  Dataset data = chosen == "nn" ? sample_nn_scm(truth, n, data_rng)
                                : sample_gpcde_dataset(truth, n, data_rng);
  write_dataset_csv(out_dir + "/dataset.csv", data);
  write_edge_list_file(out_dir + "/truth_edges.txt", truth);
  Json spec;
  spec["schema"] = "causal-cde/generator/v1";
  spec["scheme"] = scheme;
  spec["generator"] = chosen;
  spec["d"] = truth.dim();
  spec["expected_edges"] = edges;
  spec["n"] = n;
  spec["seed"] = seed;
  spec["edge_count"] = truth.edge_count();
  write_json_file(out_dir + "/generator.json", spec);
  std::cout << "wrote dataset (" << n << " x " << truth.dim() << ") and truth ("
            << truth.edge_count() << " edges) to " << out_dir << "\n";
  return 0;
}

void print_adjacency(const WeightedAdjacency& a) {
  std::ostringstream out;
  write_adjacency_csv(out, a);
  std::cout << out.str();
}

int cmd_discover(const RunConfig& config, const std::string& out_dir) {
  config.validate();
  const Dataset raw = read_dataset_csv(config.dataset);
  const Dataset data = standardize(raw);
  auto [best, all] = run_restarts(data.values, config.train, config.seeds,
                                  config.threads);
  write_discovery_run(out_dir, config, best, all);
  std::cout << "best seed " << best.seed << ", final ELBO "
            << format_double(best.final_elbo) << ", " << best.graph.edge_count()
            << " edges\n";
  print_adjacency(best.adjacency);
  return 0;
}

int cmd_enumerate(const RunConfig& config, const std::string& out_dir) {
  config.validate();
  const Dataset raw = read_dataset_csv(config.dataset);
  const Dataset data = standardize(raw);
  const auto ranking =
      select_discrete(data.values, config.train, config.restarts_per_graph,
                      config.seeds.front(), config.threads);
  fs::create_directories(out_dir);
  write_json_file(out_dir + "/config.json", run_config_to_json(config));
  std::ostringstream csv;
  csv << "rank,score,elbo,edges\n";
  Json entries = Json::array();
  for (size_t i = 0; i < ranking.size(); ++i) {
    std::ostringstream edges;
    for (const auto& [p, c] : ranking[i].graph.edges()) {
      edges << (edges.tellp() > 0 ? ";" : "") << p << ">" << c;
    }
    csv << i << "," << format_double(ranking[i].score) << ","
        << format_double(ranking[i].elbo) << "," << edges.str() << "\n";
    Json entry;
    entry["rank"] = i;
    entry["score"] = ranking[i].score;
    entry["elbo"] = ranking[i].elbo;
    entry["edges"] = edges.str();
    entries.push_back(entry);
  }
  write_text_file(out_dir + "/ranking.csv", csv.str());
  Json summary;
  summary["schema"] = "causal-cde/enumeration/v1";
  summary["graphs"] = entries;
  write_json_file(out_dir + "/ranking.json", summary);
  write_edge_list_file(out_dir + "/map_edges.txt", ranking.front().graph);
  std::cout << "ranked " << ranking.size() << " graphs; MAP has "
            << ranking.front().graph.edge_count() << " edges, score "
            << format_double(ranking.front().score) << "\n";
  return 0;
}

int cmd_evaluate(const std::string& pred_path, const std::string& true_path,
                 int d, const std::string& out_path) {
  const Dag truth = read_edge_list_file(true_path, d);
  const Dag pred = read_edge_list_file(pred_path, d > 0 ? d : truth.dim());
  if (truth.dim() != pred.dim()) {
    throw ContractError("evaluate: graph dimensions differ");
  }
  const MetricsReport report = compute_metrics(truth, pred);
  std::printf("%-12s %d\n", "shd", report.shd);
  std::printf("%-12s %d\n", "sid", report.sid);
  std::printf("%-12s %.6f\n", "f1", report.f1);
  std::printf("%-12s %d\n", "pred_edges", report.predicted_edge_count);
  std::printf("%-12s %d\n", "true_edges", report.true_edge_count);
  if (!out_path.empty()) {
    Json j = metrics_to_json(report);
    j["schema"] = "causal-cde/metrics/v1";
    write_json_file(out_path, j);
  }
  return 0;
}

int cmd_error_rate(int replicates, int n, int restarts, std::uint64_t seed,
                   const TrainConfig& config, int threads,
                   const std::string& out_path) {
  const ErrorRateReport report =
      run_error_rate_experiment(replicates, n, config, restarts, seed, threads);
  Json j;
  j["schema"] = "causal-cde/error-rate/v1";
  j["exact_recovery_rate"] = report.exact_recovery_rate;
  j["mec_recovery_rate"] = report.mec_recovery_rate;
  j["median_shd"] = report.median_shd;
  j["median_sid"] = report.median_sid;
  j["median_f1"] = report.median_f1;
  Json records = Json::array();
  for (const auto& r : report.records) {
    Json entry;
    entry["structure"] = r.structure;
    entry["replicate"] = r.replicate;
    entry["data_seed"] = r.data_seed;
    entry["shd"] = r.metrics.shd;
    entry["sid"] = r.metrics.sid;
    entry["f1"] = r.metrics.f1;
    entry["exact_recovery"] = r.exact_recovery;
    entry["mec_recovery"] = r.mec_recovery;
    entry["failed"] = r.failed;
    entry["failure"] = r.failure;
    records.push_back(entry);
  }
  j["records"] = records;
  if (!out_path.empty()) write_json_file(out_path, j);
  std::cout << "exact recovery " << report.exact_recovery_rate
            << ", MEC recovery " << report.mec_recovery_rate << ", median SHD "
            << report.median_shd << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tol) {
  // Small node bound and training loss, checked against central differences.
  Rng rng(seed);
  const int n = 24, d = 2;
  MatrixXd data = rng.normal_matrix(n, d);
  Dataset ds;
  ds.values = data;
  ds.columns = {"x0", "x1"};
  const Dataset std_ds = standardize(ds);

  TrainConfig config = desk_profile();
  config.m_inducing = 6;
  config.mc_samples = 4;
  config.batch = 0;
  config.encoder = EncoderConfig{8, 3};
  Rng init_rng = rng.derive(7);
  CgpCdeModel model = init_continuous_model(std_ds.values, config, init_rng);
  // Mirror into raw-factor q(u) nodes so every parameter lives in the flat
  // vector the checker perturbs.
  CgpCdeModel flat_model;
  for (int i = 0; i < d; ++i) {
    const NodeModel& src = model.nodes[i];
    NodeModel node =
        NodeModel::create(d, i, src.observed, config.m_inducing,
                          LatentMode::kEncoder, QuMode::kRawFactor,
                          config.encoder, n);
    for (int k = 0; k < 5; ++k) {
      for (int dd = 0; dd < node.input_dim(); ++dd) {
        node.set_theta_raw(k, dd, src.theta_raw(k, dd));
      }
    }
    for (int k = 0; k < 4; ++k) {
      node.raw(node.layout.kernel_vars + k) =
          src.raw(src.layout.kernel_vars + k);
    }
    node.raw(node.layout.rq_shape) = src.raw(src.layout.rq_shape);
    node.raw(node.layout.noise) = src.raw(src.layout.noise);
    node.set_inducing_inputs(src.inducing_inputs());
    node.set_q_u(src.q_u());
    node.set_encoder(src.encoder());
    flat_model.nodes.push_back(std::move(node));
  }
  bool all_pass = true;
  for (int node_idx = 0; node_idx < d; ++node_idx) {
    NodeModel& node = flat_model.nodes[node_idx];
    auto objective = [&](const VectorXd& raw) {
      NodeModel work = node;
      work.raw = raw;
      Rng eval_rng(seed ^ 0xabcdULL);
      return node_elbo(work, std_ds.values, config.mc_samples, n, eval_rng);
    };
    auto gradient = [&](const VectorXd& raw) {
      NodeModel work = node;
      work.raw = raw;
      Rng eval_rng(seed ^ 0xabcdULL);
      return node_elbo_with_grads(work, std_ds.values, config.mc_samples, n,
                                  eval_rng)
          .grads.raw;
    };
    const GradCheckReport report =
        grad_check(objective, gradient, node.raw, tol);
    std::printf("node %d: max rel err %.3e at %d -> %s\n", node_idx,
                report.max_rel_error, report.worst_index,
                report.pass ? "pass" : "FAIL");
    all_pass = all_pass && report.pass;
  }
  return all_pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal discovery with GP conditional density estimators"};
  app.require_subcommand(1);

  // generate
  auto* generate = app.add_subcommand("generate", "Sample a synthetic dataset");
  std::string scheme = "er", generator_kind, gen_out = "generated";
  int gen_d = 10, gen_n = 1000;
  double gen_edges = 15.0;
  std::uint64_t gen_seed = 0;
  bool gen_seed_set = false;
  generate->add_option("--scheme", scheme,
                       "er | sf | empty | single | chain | fork | collider | complete");
  generate->add_option("--generator", generator_kind,
                       "nn | gpcde (default by scheme)");
  generate->add_option("--d", gen_d, "Variable count (er/sf)");
  generate->add_option("--edges", gen_edges, "Expected edge count (er/sf)");
  generate->add_option("--n", gen_n, "Sample count");
  generate->add_option("--seed", gen_seed, "Random seed")
      ->each([&](const std::string&) { gen_seed_set = true; });
  generate->add_option("--out", gen_out, "Output directory");

  // discover
  auto* discover = app.add_subcommand("discover", "Continuous structure discovery");
  std::string disc_data, disc_out = "run", disc_config_path;
  int disc_restarts = 1, disc_threads = 0;
  std::uint64_t disc_seed = 1;
  ConfigFlags disc_flags;
  discover->add_option("--data", disc_data, "Dataset CSV");
  discover->add_option("--out", disc_out, "Output directory");
  discover->add_option("--config", disc_config_path,
                       "Replay a stored config snapshot");
  discover->add_option("--seed", disc_seed, "Base seed for restarts");
  discover->add_option("--restarts", disc_restarts, "Restart count");
  discover->add_option("--threads", disc_threads, "Worker threads");
  add_config_flags(discover, disc_flags);

  // enumerate
  auto* enumerate = app.add_subcommand("enumerate", "Exhaustive DAG scoring");
  std::string enum_data, enum_out = "enumeration";
  int enum_restarts = 10, enum_threads = 0;
  std::uint64_t enum_seed = 1;
  ConfigFlags enum_flags;
  enumerate->add_option("--data", enum_data, "Dataset CSV")->required();
  enumerate->add_option("--out", enum_out, "Output directory");
  enumerate->add_option("--seed", enum_seed, "Base seed");
  enumerate->add_option("--restarts", enum_restarts, "Restarts per graph");
  enumerate->add_option("--threads", enum_threads, "Worker threads");
  add_config_flags(enumerate, enum_flags);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Compare two edge lists");
  std::string eval_pred, eval_true, eval_out;
  int eval_d = -1;
  evaluate->add_option("--pred", eval_pred, "Predicted edge list")->required();
  evaluate->add_option("--true", eval_true, "Ground-truth edge list")
      ->required();
  evaluate->add_option("--d", eval_d, "Variable count override");
  evaluate->add_option("--out", eval_out, "Metrics JSON path");

  // error-rate
  auto* error_rate =
      app.add_subcommand("error-rate", "Recovery-rate estimation sweep");
  int er_replicates = 2, er_n = 250, er_restarts = 3, er_threads = 0;
  std::uint64_t er_seed = 1;
  std::string er_out;
  ConfigFlags er_flags;
  error_rate->add_option("--replicates", er_replicates,
                         "Datasets per structure");
  error_rate->add_option("--n", er_n, "Samples per dataset");
  error_rate->add_option("--restarts", er_restarts, "Restarts per graph");
  error_rate->add_option("--seed", er_seed, "Base seed");
  error_rate->add_option("--threads", er_threads, "Worker threads");
  error_rate->add_option("--out", er_out, "Report JSON path");
  add_config_flags(error_rate, er_flags);

  // gradcheck
  auto* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference gradient check");
  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-4;
  gradcheck->add_option("--seed", gc_seed, "Seed");
  gradcheck->add_option("--tol", gc_tol, "Relative error tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (generate->parsed()) {
      if (!gen_seed_set) {
        std::cerr << "generate: --seed is required\n";
        return 2;
      }
      return cmd_generate(scheme, generator_kind, gen_d, gen_edges, gen_n,
                          gen_seed, gen_out);
    }
    if (discover->parsed()) {
      RunConfig config;
      if (!disc_config_path.empty()) {
        config = load_run_config(disc_config_path);
      } else {
        if (disc_data.empty()) {
          std::cerr << "discover: --data or --config is required\n";
          return 2;
        }
        config.mode = "discover";
        config.dataset = disc_data;
        config.profile = disc_flags.profile;
        config.seeds = restart_seeds(disc_seed, disc_restarts);
        config.threads = disc_threads;
        config.train = resolve_config(disc_flags);
      }
      return cmd_discover(config, disc_out);
    }
    if (enumerate->parsed()) {
      RunConfig config;
      config.mode = "enumerate";
      config.dataset = enum_data;
      config.profile = enum_flags.profile;
      config.seeds = {enum_seed};
      config.restarts_per_graph = enum_restarts;
      config.threads = enum_threads;
      config.train = resolve_config(enum_flags);
      return cmd_enumerate(config, enum_out);
    }
    if (evaluate->parsed()) {
      return cmd_evaluate(eval_pred, eval_true, eval_d, eval_out);
    }
    if (error_rate->parsed()) {
      return cmd_error_rate(er_replicates, er_n, er_restarts, er_seed,
                            resolve_config(er_flags), er_threads, er_out);
    }
    if (gradcheck->parsed()) {
      return cmd_gradcheck(gc_seed, gc_tol);
    }
  } catch (const ContractError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  }
  return 0;
}
