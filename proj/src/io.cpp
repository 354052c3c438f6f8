#include "causalcde/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace causalcde {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot open for writing: " + path);
  out << contents;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json_file(const std::string& path, const Json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

Json read_json_file(const std::string& path) {
  return Json::parse(read_text_file(path));
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot open dataset: " + path);
  std::string line;
  Dataset data;
  std::vector<std::vector<double>> rows;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    if (!have_header) {
      while (std::getline(ss, cell, ',')) data.columns.push_back(cell);
      have_header = true;
      continue;
    }
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != data.columns.size()) {
      throw ContractError("read_dataset_csv: ragged row in " + path);
    }
    rows.push_back(std::move(row));
  }
  if (!have_header || rows.empty()) {
    throw ContractError("read_dataset_csv: no data in " + path);
  }
  data.values.resize(rows.size(), data.columns.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < rows[i].size(); ++j) data.values(i, j) = rows[i][j];
  }
  data.provenance = path;
  data.validate();
  return data;
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  data.validate();
  std::ostringstream out;
  for (int j = 0; j < data.dim(); ++j) {
    out << (j ? "," : "") << data.columns[j];
  }
  out << "\n";
  for (int i = 0; i < data.n(); ++i) {
    for (int j = 0; j < data.dim(); ++j) {
      out << (j ? "," : "") << format_double(data.values(i, j));
    }
    out << "\n";
  }
  write_text_file(path, out.str());
}

void write_adjacency_file(const std::string& path,
                          const WeightedAdjacency& a) {
  std::ostringstream out;
  write_adjacency_csv(out, a);
  write_text_file(path, out.str());
}

WeightedAdjacency read_adjacency_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot open adjacency: " + path);
  return read_adjacency_csv(in);
}

void write_edge_list_file(const std::string& path, const Dag& g) {
  std::ostringstream out;
  write_edge_list(out, g);
  write_text_file(path, out.str());
}

Dag read_edge_list_file(const std::string& path, int dim_hint) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot open edge list: " + path);
  return read_edge_list(in, dim_hint);
}

Json train_config_to_json(const TrainConfig& c) {
  Json j;
  j["m_inducing"] = c.m_inducing;
  j["batch"] = c.batch;
  j["mc_samples"] = c.mc_samples;
  j["encoder_hidden"] = c.encoder.hidden;
  j["encoder_layers"] = c.encoder.num_layers;
  j["t0"] = c.t0;
  j["tf"] = c.tf;
  j["t_conv"] = c.t_conv;
  j["epsilon_h"] = c.epsilon_h;
  j["max_subproblems"] = c.max_subproblems;
  j["lr_warmup"] = c.lr_warmup;
  j["lr_constraint_high"] = c.lr_constraint_high;
  j["lr_constraint_low"] = c.lr_constraint_low;
  j["lr_cooldown"] = c.lr_cooldown;
  j["natgrad_step_size"] = c.natgrad_step_size;
  j["nu"] = c.nu;
  j["gamma"] = c.gamma;
  j["alpha_calib_steps"] = c.alpha_calib_steps;
  j["alpha0_fraction"] = c.alpha0_fraction;
  j["alpha0_override"] = c.alpha0_override;
  j["prior_shape"] = c.prior_shape;
  j["prior_rate"] = c.prior_rate;
  j["warmup_theta_floor"] = c.warmup_theta_floor;
  j["frozen_value"] = c.frozen_value;
  j["final_linvar_thresh"] = c.final_linvar_thresh;
  j["final_theta_thresh"] = c.final_theta_thresh;
  j["discrete_m_inducing"] = c.discrete_m_inducing;
  j["discrete_mc_samples"] = c.discrete_mc_samples;
  j["discrete_adam_steps"] = c.discrete_adam_steps;
  j["discrete_decay_steps"] = c.discrete_decay_steps;
  j["discrete_lr"] = c.discrete_lr;
  j["discrete_bfgs"] = c.discrete_bfgs;
  j["discrete_bfgs_iters"] = c.discrete_bfgs_iters;
  j["eval_mc_samples"] = c.eval_mc_samples;
  j["dgpcde_cap"] = c.dgpcde_cap;
  j["jitter"] = c.jitter;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.m_inducing = j.at("m_inducing");
  c.batch = j.at("batch");
  c.mc_samples = j.at("mc_samples");
  c.encoder.hidden = j.at("encoder_hidden");
  c.encoder.num_layers = j.at("encoder_layers");
  c.t0 = j.at("t0");
  c.tf = j.at("tf");
  c.t_conv = j.at("t_conv");
  c.epsilon_h = j.at("epsilon_h");
  c.max_subproblems = j.at("max_subproblems");
  c.lr_warmup = j.at("lr_warmup");
  c.lr_constraint_high = j.at("lr_constraint_high");
  c.lr_constraint_low = j.at("lr_constraint_low");
  c.lr_cooldown = j.at("lr_cooldown");
  c.natgrad_step_size = j.at("natgrad_step_size");
  c.nu = j.at("nu");
  c.gamma = j.at("gamma");
  c.alpha_calib_steps = j.at("alpha_calib_steps");
  c.alpha0_fraction = j.at("alpha0_fraction");
  c.alpha0_override = j.at("alpha0_override");
  c.prior_shape = j.at("prior_shape");
  c.prior_rate = j.at("prior_rate");
  c.warmup_theta_floor = j.at("warmup_theta_floor");
  c.frozen_value = j.at("frozen_value");
  c.final_linvar_thresh = j.at("final_linvar_thresh");
  c.final_theta_thresh = j.at("final_theta_thresh");
  c.discrete_m_inducing = j.at("discrete_m_inducing");
  c.discrete_mc_samples = j.at("discrete_mc_samples");
  c.discrete_adam_steps = j.at("discrete_adam_steps");
  c.discrete_decay_steps = j.at("discrete_decay_steps");
  c.discrete_lr = j.at("discrete_lr");
  c.discrete_bfgs = j.at("discrete_bfgs");
  c.discrete_bfgs_iters = j.at("discrete_bfgs_iters");
  c.eval_mc_samples = j.at("eval_mc_samples");
  c.dgpcde_cap = j.at("dgpcde_cap");
  c.jitter = j.at("jitter");
  return c;
}

void RunConfig::validate() const {
  if (mode != "discover" && mode != "enumerate") {
    throw ContractError("RunConfig: mode must be discover or enumerate");
  }
  if (!fs::exists(dataset)) {
    throw ContractError("RunConfig: dataset does not exist: " + dataset);
  }
  if (seeds.empty()) throw ContractError("RunConfig: at least one seed required");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) {
    throw ContractError("RunConfig: seeds must be unique");
  }
}

Json run_config_to_json(const RunConfig& c) {
  Json j;
  j["schema"] = "causal-cde/run-config/v1";
  j["mode"] = c.mode;
  j["dataset"] = c.dataset;
  j["profile"] = c.profile;
  j["seeds"] = c.seeds;
  j["restarts_per_graph"] = c.restarts_per_graph;
  j["threads"] = c.threads;
  j["train"] = train_config_to_json(c.train);
  return j;
}

RunConfig run_config_from_json(const Json& j) {
  if (j.at("schema") != "causal-cde/run-config/v1") {
    throw ContractError("run config: unknown schema");
  }
  RunConfig c;
  c.mode = j.at("mode");
  c.dataset = j.at("dataset");
  c.profile = j.at("profile");
  c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.restarts_per_graph = j.at("restarts_per_graph");
  c.threads = j.at("threads");
  c.train = train_config_from_json(j.at("train"));
  return c;
}

RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(read_json_file(path));
}

Json metrics_to_json(const MetricsReport& report) {
  Json j;
  j["shd"] = report.shd;
  j["sid"] = report.sid;
  j["f1"] = report.f1;
  j["predicted_edge_count"] = report.predicted_edge_count;
  j["true_edge_count"] = report.true_edge_count;
  return j;
}

void write_discovery_run(const std::string& dir, const RunConfig& config,
                         const DiscoveryResult& best,
                         const std::vector<DiscoveryResult>& all) {
  fs::create_directories(dir);
  write_json_file(dir + "/config.json", run_config_to_json(config));
  write_adjacency_file(dir + "/adjacency.csv", best.adjacency);
  write_edge_list_file(dir + "/edges.txt", best.graph);

  std::ostringstream trace;
  trace << "step,phase,subproblem,loss,elbo,h,alpha,rho\n";
  for (const TraceRow& row : best.trace) {
    trace << row.step << "," << row.phase << "," << row.subproblem << ","
          << format_double(row.loss) << "," << format_double(row.elbo) << ","
          << format_double(row.h) << "," << format_double(row.alpha) << ","
          << format_double(row.rho) << "\n";
  }
  write_text_file(dir + "/trace.csv", trace.str());

  Json summary;
  summary["schema"] = "causal-cde/run-summary/v1";
  summary["best_seed"] = best.seed;
  summary["final_elbo"] = best.final_elbo;
  summary["subproblems"] = best.subproblems;
  summary["alpha0"] = best.alpha0;
  summary["h_history"] = best.h_history;
  summary["phase_boundaries"] = best.phase_boundaries;
  summary["deviations"] = best.deviations;
  summary["edge_count"] = best.graph.edge_count();
  Json restarts = Json::array();
  for (const DiscoveryResult& r : all) {
    Json entry;
    entry["seed"] = r.seed;
    entry["final_elbo"] = r.final_elbo;
    entry["diverged"] = r.diverged;
    entry["divergence_reason"] = r.divergence_reason;
    entry["subproblems"] = r.subproblems;
    restarts.push_back(entry);
  }
  summary["restarts"] = restarts;
  write_json_file(dir + "/summary.json", summary);
}

}  // namespace causalcde
