#include "causalcde/experiments.hpp"

#include <algorithm>
#include <cmath>

namespace causalcde {

std::vector<Dag> distinct_three_node_structures() {
  return {
      Dag(3, {}),                          // empty
      Dag(3, {{0, 1}}),                    // single edge
      Dag(3, {{0, 1}, {1, 2}}),            // chain
      Dag(3, {{0, 1}, {0, 2}}),            // fork
      Dag(3, {{0, 2}, {1, 2}}),            // collider
      Dag(3, {{0, 1}, {0, 2}, {1, 2}}),    // complete
  };
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const size_t mid = values.size() / 2;
  if (values.size() % 2 == 1) return values[mid];
  return 0.5 * (values[mid - 1] + values[mid]);
}

ErrorRateReport run_error_rate_experiment(int replicates, int samples_per_set,
                                          const TrainConfig& config,
                                          int restarts,
                                          std::uint64_t base_seed,
                                          int threads) {
  if (replicates < 1 || samples_per_set < 1) {
    throw ContractError("run_error_rate_experiment: counts must be positive");
  }
  const std::vector<Dag> structures = distinct_three_node_structures();
  const Rng base(base_seed);
  ErrorRateReport report;
  std::vector<double> shds, sids, f1s;
  int exact = 0, mec = 0, usable = 0;
  for (size_t s = 0; s < structures.size(); ++s) {
    for (int rep = 0; rep < replicates; ++rep) {
      ErrorRateRecord record;
      record.structure = static_cast<int>(s);
      record.replicate = rep;
      record.true_graph = structures[s];
      const Rng task_rng = base.derive(s * 1000 + rep);
      record.data_seed = task_rng.base_seed();
      try {
        Rng data_rng(record.data_seed);
        const Dataset raw =
            sample_gpcde_dataset(structures[s], samples_per_set, data_rng);
        const Dataset data = standardize(raw);
        const std::vector<RankedGraph> ranking = select_discrete(
            data.values, config, restarts, task_rng.derive(1).base_seed(),
            threads);
        record.map_graph = ranking.front().graph;
        record.map_score = ranking.front().score;
        record.metrics = compute_metrics(record.true_graph, record.map_graph);
        record.exact_recovery = record.map_graph == record.true_graph;
        record.mec_recovery =
            mec_equivalent(record.true_graph, record.map_graph);
        ++usable;
        exact += record.exact_recovery ? 1 : 0;
        mec += record.mec_recovery ? 1 : 0;
        shds.push_back(record.metrics.shd);
        sids.push_back(record.metrics.sid);
        f1s.push_back(record.metrics.f1);
      } catch (const std::exception& err) {
        record.failed = true;
        record.failure = err.what();
      }
      report.records.push_back(std::move(record));
    }
  }
  if (usable > 0) {
    report.exact_recovery_rate = static_cast<double>(exact) / usable;
    report.mec_recovery_rate = static_cast<double>(mec) / usable;
    report.median_shd = median(shds);
    report.median_sid = median(sids);
    report.median_f1 = median(f1s);
  }
  return report;
}

}  // namespace causalcde
