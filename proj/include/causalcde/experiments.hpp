#pragma once

#include <vector>

#include "causalcde/datagen.hpp"
#include "causalcde/discovery.hpp"
#include "causalcde/metrics.hpp"

namespace causalcde {

// The six distinct three-node causal structures up to node permutation:
// empty, single edge, chain, fork, collider, complete.
std::vector<Dag> distinct_three_node_structures();

struct ErrorRateRecord {
  int structure = 0;
  int replicate = 0;
  std::uint64_t data_seed = 0;
  Dag true_graph{Dag::empty(1)};
  Dag map_graph{Dag::empty(1)};
  MetricsReport metrics;
  bool exact_recovery = false;
  bool mec_recovery = false;
  double map_score = 0.0;
  bool failed = false;
  std::string failure;
};

struct ErrorRateReport {
  std::vector<ErrorRateRecord> records;
  double exact_recovery_rate = 0.0;
  double mec_recovery_rate = 0.0;
  double median_shd = 0.0;
  double median_sid = 0.0;
  double median_f1 = 0.0;
};

// Samples `replicates` GP-CDE datasets per distinct structure, standardizes
// each, runs the discrete enumeration with `restarts` restarts per graph and
// tallies how often the MAP graph recovers the truth. Per-dataset failures
// become diagnostic records rather than aborting the sweep.
ErrorRateReport run_error_rate_experiment(int replicates, int samples_per_set,
                                          const TrainConfig& config,
                                          int restarts,
                                          std::uint64_t base_seed,
                                          int threads = 0);

double median(std::vector<double> values);

}  // namespace causalcde
