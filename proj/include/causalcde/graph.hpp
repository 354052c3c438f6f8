#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "causalcde/common.hpp"
#include "causalcde/rng.hpp"

namespace causalcde {

// Nonnegative dependence weights. Entry (i, j) is the weight of variable j as
// an input to variable i, i.e. the candidate edge j -> i (row = child).
class WeightedAdjacency {
 public:
  explicit WeightedAdjacency(MatrixXd entries);
  static WeightedAdjacency zero(int dim) {
    return WeightedAdjacency(MatrixXd::Zero(dim, dim));
  }

  int dim() const { return static_cast<int>(entries_.rows()); }
  const MatrixXd& entries() const { return entries_; }
  double operator()(int child, int parent) const {
    return entries_(child, parent);
  }

 private:
  MatrixXd entries_;
};

// Binary directed acyclic graph. Edges are (parent, child) pairs.
class Dag {
 public:
  Dag(int dim, std::vector<std::pair<int, int>> edges);
  static Dag empty(int dim) { return Dag(dim, {}); }

  int dim() const { return dim_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  const std::vector<int>& parents(int node) const { return parents_[node]; }
  const std::vector<int>& children(int node) const { return children_[node]; }
  bool has_edge(int parent, int child) const;
  int edge_count() const { return static_cast<int>(edges_.size()); }
  MatrixXd adjacency() const;  // (child, parent) = 1, row = child

  bool operator==(const Dag& other) const {
    return dim_ == other.dim_ && edges_ == other.edges_;
  }

 private:
  int dim_;
  std::vector<std::pair<int, int>> edges_;  // sorted, unique
  std::vector<std::vector<int>> parents_;
  std::vector<std::vector<int>> children_;
};

// h(A) = Tr(exp(A)) - D. Zero exactly when the support of A is acyclic;
// strictly positive otherwise (for nonnegative A).
double acyclicity(const WeightedAdjacency& a);

// Gradient of h with respect to the entries of A, i.e. exp(A)^T.
MatrixXd acyclicity_grad(const WeightedAdjacency& a);

// True iff the graph on edges {(j, i) : A_ij > support_tol} has a
// topological order.
bool is_acyclic(const WeightedAdjacency& a, double support_tol);

// Zeroes the smallest strictly positive entry (ties: lexicographically
// smallest (i, j)) until the support is acyclic. Returns the resulting DAG
// and the pruned weights.
std::pair<Dag, WeightedAdjacency> threshold_to_dag(const WeightedAdjacency& a);

inline constexpr int kDefaultEnumerationCap = 4;

// All labeled DAGs on d nodes. Counts are 1, 3, 25, 543 for d = 1..4.
std::vector<Dag> enumerate_dags(int d, int cap = kDefaultEnumerationCap);

enum class GraphScheme { kErdosRenyi, kScaleFree };

// ER: uniform random node order, each order-respecting edge included with
// probability expected_edges / (d(d-1)/2). SF: preferential attachment with
// edges oriented from earlier-attached to later-attached node.
Dag sample_random_dag(int d, double expected_edges, GraphScheme scheme,
                      Rng& rng);

// Every edge (p, c) has p before c in the returned order.
std::vector<int> topological_order(const Dag& g);

// Adjacency CSV: "# convention: row=child" header then D rows of D floats.
void write_adjacency_csv(std::ostream& out, const WeightedAdjacency& a);
WeightedAdjacency read_adjacency_csv(std::istream& in);

// Edge list: optional "# d=D" comment, then one "parent child" pair per line.
void write_edge_list(std::ostream& out, const Dag& g);
Dag read_edge_list(std::istream& in, int dim_hint = -1);

}  // namespace causalcde
