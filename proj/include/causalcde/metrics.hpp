#pragma once

#include <set>
#include <vector>

#include "causalcde/graph.hpp"

namespace causalcde {

struct MetricsReport {
  int shd = 0;
  int sid = 0;
  double f1 = 0.0;
  int predicted_edge_count = 0;
  int true_edge_count = 0;
};

// Hamming distance between binary adjacency matrices; a reversed edge costs 2.
int shd(const Dag& true_g, const Dag& pred_g);

// Directed-edge F1 (harmonic mean of precision and recall); 0 when
// precision + recall is 0.
double f1_score(const Dag& true_g, const Dag& pred_g);

// True iff every path between i and j is blocked given Z (reachability
// implementation in the Bayes-ball style).
bool d_separated(const Dag& g, int i, int j, const std::set<int>& z);

// Structural intervention distance: the number of ordered pairs (i, j) whose
// intervention distribution is inferred incorrectly when PA_pred(i) is used
// as the adjustment set in true_g. A claimed parent j of i is correct only
// if j is not a descendant of i; otherwise PA_pred(i) must satisfy the
// adjustment criterion (no forbidden nodes, all non-causal paths blocked).
int sid(const Dag& true_g, const Dag& pred_g);

MetricsReport compute_metrics(const Dag& true_g, const Dag& pred_g);

// Descendants of `node` including itself.
std::vector<bool> descendants(const Dag& g, int node);

// Same skeleton and same v-structures (Verma-Pearl characterization).
bool mec_equivalent(const Dag& a, const Dag& b);

// Exposed for validation: the adjustment criterion for PA-style sets.
bool valid_adjustment_set(const Dag& g, int i, int j, const std::set<int>& z);

}  // namespace causalcde
