#include "causalcde/metrics.hpp"

#include <algorithm>
#include <deque>
#include <utility>

namespace causalcde {

namespace {

void check_same_dim(const Dag& a, const Dag& b, const char* where) {
  if (a.dim() != b.dim()) {
    throw ContractError(std::string(where) + ": graphs must share a dimension");
  }
}

}  // namespace

int shd(const Dag& true_g, const Dag& pred_g) {
  check_same_dim(true_g, pred_g, "shd");
  int distance = 0;
  for (int p = 0; p < true_g.dim(); ++p) {
    for (int c = 0; c < true_g.dim(); ++c) {
      if (p == c) continue;
      if (true_g.has_edge(p, c) != pred_g.has_edge(p, c)) ++distance;
    }
  }
  return distance;
}

double f1_score(const Dag& true_g, const Dag& pred_g) {
  check_same_dim(true_g, pred_g, "f1_score");
  int tp = 0;
  for (const auto& [p, c] : pred_g.edges()) {
    if (true_g.has_edge(p, c)) ++tp;
  }
  const double precision =
      pred_g.edge_count() > 0 ? static_cast<double>(tp) / pred_g.edge_count()
                              : 0.0;
  const double recall =
      true_g.edge_count() > 0 ? static_cast<double>(tp) / true_g.edge_count()
                              : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

bool d_separated(const Dag& g, int i, int j, const std::set<int>& z) {
  const int d = g.dim();
  if (i < 0 || i >= d || j < 0 || j >= d || i == j) {
    throw ContractError("d_separated: invalid node pair");
  }
  if (z.count(i) || z.count(j)) {
    throw ContractError("d_separated: endpoints cannot be conditioned on");
  }
  // Ancestors of Z (including Z itself).
  std::vector<bool> anc_z(d, false);
  std::deque<int> frontier;
  for (int node : z) {
    anc_z[node] = true;
    frontier.push_back(node);
  }
  while (!frontier.empty()) {
    const int node = frontier.front();
    frontier.pop_front();
    for (int p : g.parents(node)) {
      if (!anc_z[p]) {
        anc_z[p] = true;
        frontier.push_back(p);
      }
    }
  }
  // Reachability over (node, direction) states. kUp = trail arrived from a
  // child (moving against edges), kDown = arrived from a parent.
  constexpr int kUp = 0, kDown = 1;
  std::vector<std::array<bool, 2>> visited(d, {false, false});
  std::deque<std::pair<int, int>> active;
  active.emplace_back(i, kUp);
  while (!active.empty()) {
    const auto [node, dir] = active.front();
    active.pop_front();
    if (visited[node][dir]) continue;
    visited[node][dir] = true;
    if (!z.count(node) && node == j) return false;
    if (dir == kUp && !z.count(node)) {
      for (int p : g.parents(node)) active.emplace_back(p, kUp);
      for (int c : g.children(node)) active.emplace_back(c, kDown);
    } else if (dir == kDown) {
      if (!z.count(node)) {
        for (int c : g.children(node)) active.emplace_back(c, kDown);
      }
      if (anc_z[node]) {
        for (int p : g.parents(node)) active.emplace_back(p, kUp);
      }
    }
  }
  return true;
}

std::vector<bool> descendants(const Dag& g, int node) {
  std::vector<bool> seen(g.dim(), false);
  seen[node] = true;
  std::deque<int> frontier{node};
  while (!frontier.empty()) {
    const int v = frontier.front();
    frontier.pop_front();
    for (int c : g.children(v)) {
      if (!seen[c]) {
        seen[c] = true;
        frontier.push_back(c);
      }
    }
  }
  return seen;
}

bool valid_adjustment_set(const Dag& g, int i, int j, const std::set<int>& z) {
  if (z.count(i) || z.count(j)) {
    throw ContractError("valid_adjustment_set: set must exclude i and j");
  }
  const int d = g.dim();
  const std::vector<bool> de_i = descendants(g, i);
  // Causal nodes: w != i on a directed path from i to j.
  std::vector<bool> cn(d, false);
  for (int w = 0; w < d; ++w) {
    if (w == i || !de_i[w]) continue;
    if (descendants(g, w)[j]) cn[w] = true;
  }
  // Forbidden: descendants of any causal node.
  std::vector<bool> forbidden(d, false);
  for (int w = 0; w < d; ++w) {
    if (!cn[w]) continue;
    const std::vector<bool> de_w = descendants(g, w);
    for (int v = 0; v < d; ++v) forbidden[v] = forbidden[v] || de_w[v];
  }
  for (int node : z) {
    if (forbidden[node]) return false;
  }
  // Proper back-door graph: drop the first edge of every proper causal path,
  // i.e. every edge i -> c with c a causal node. Non-causal paths from i to j
  // must then be blocked by z.
  std::vector<std::pair<int, int>> edges;
  for (const auto& [p, c] : g.edges()) {
    if (p == i && cn[c]) continue;
    edges.emplace_back(p, c);
  }
  const Dag pbd(d, std::move(edges));
  return d_separated(pbd, i, j, z);
}

int sid(const Dag& true_g, const Dag& pred_g) {
  check_same_dim(true_g, pred_g, "sid");
  const int d = true_g.dim();
  int incorrect = 0;
  for (int i = 0; i < d; ++i) {
    const std::set<int> z(pred_g.parents(i).begin(), pred_g.parents(i).end());
    const std::vector<bool> de_i = descendants(true_g, i);
    for (int j = 0; j < d; ++j) {
      if (j == i) continue;
      bool correct;
      if (z.count(j)) {
        // The estimate claims j is causally upstream of i, i.e. intervening
        // on i leaves j untouched; true unless j descends from i.
        correct = !de_i[j];
      } else {
        correct = valid_adjustment_set(true_g, i, j, z);
      }
      if (!correct) ++incorrect;
    }
  }
  return incorrect;
}

MetricsReport compute_metrics(const Dag& true_g, const Dag& pred_g) {
  MetricsReport report;
  report.shd = shd(true_g, pred_g);
  report.sid = sid(true_g, pred_g);
  report.f1 = f1_score(true_g, pred_g);
  report.predicted_edge_count = pred_g.edge_count();
  report.true_edge_count = true_g.edge_count();
  return report;
}

bool mec_equivalent(const Dag& a, const Dag& b) {
  check_same_dim(a, b, "mec_equivalent");
  const int d = a.dim();
  auto skeleton = [d](const Dag& g) {
    std::set<std::pair<int, int>> s;
    for (const auto& [p, c] : g.edges()) {
      s.insert({std::min(p, c), std::max(p, c)});
    }
    return s;
  };
  const auto skel_a = skeleton(a);
  if (skel_a != skeleton(b)) return false;
  auto v_structures = [d, &skel_a](const Dag& g) {
    std::set<std::tuple<int, int, int>> vs;
    for (int c = 0; c < d; ++c) {
      const auto& parents = g.parents(c);
      for (size_t x = 0; x < parents.size(); ++x) {
        for (size_t y = x + 1; y < parents.size(); ++y) {
          const int p = std::min(parents[x], parents[y]);
          const int q = std::max(parents[x], parents[y]);
          if (!skel_a.count({p, q})) vs.insert({p, c, q});
        }
      }
    }
    return vs;
  };
  return v_structures(a) == v_structures(b);
}

}  // namespace causalcde
