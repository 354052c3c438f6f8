#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "causalcde/datagen.hpp"
#include "causalcde/discovery.hpp"
#include "causalcde/metrics.hpp"

namespace causalcde {

using Json = nlohmann::ordered_json;

// Dataset CSV: header row of column names, then decimal floats.
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const std::string& path, const Dataset& data);

void write_adjacency_file(const std::string& path, const WeightedAdjacency& a);
WeightedAdjacency read_adjacency_file(const std::string& path);
void write_edge_list_file(const std::string& path, const Dag& g);
Dag read_edge_list_file(const std::string& path, int dim_hint = -1);

Json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& j);

// CLI-level run description; serialized as the run's config snapshot so a
// stored run can be replayed byte-for-byte.
struct RunConfig {
  std::string mode;      // "discover" or "enumerate"
  std::string dataset;   // input CSV path
  std::string profile = "desk";
  std::vector<std::uint64_t> seeds;
  int restarts_per_graph = 10;  // enumerate mode
  int threads = 0;
  TrainConfig train;

  void validate() const;
};

Json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::string& path);

Json metrics_to_json(const MetricsReport& report);

void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);
Json read_json_file(const std::string& path);

// Run directory layout for `discover`: config.json, adjacency.csv,
// edges.txt, trace.csv, summary.json.
void write_discovery_run(const std::string& dir, const RunConfig& config,
                         const DiscoveryResult& best,
                         const std::vector<DiscoveryResult>& all);

std::string format_double(double v);

}  // namespace causalcde
