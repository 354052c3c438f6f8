#include "causalcde/graph.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <queue>
#include <sstream>

#include "causalcde/matrix_exp.hpp"

namespace causalcde {

namespace {

// Kahn topological sort on a binary support matrix ((child, parent) = 1).
// Returns true and fills `order` (if non-null) when the graph is acyclic.
bool kahn_order(const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>&
                    support,
                std::vector<int>* order) {
  const int d = static_cast<int>(support.rows());
  std::vector<int> in_degree(d, 0);
  for (int child = 0; child < d; ++child) {
    for (int parent = 0; parent < d; ++parent) {
      if (support(child, parent)) ++in_degree[child];
    }
  }
  std::queue<int> ready;
  for (int i = 0; i < d; ++i) {
    if (in_degree[i] == 0) ready.push(i);
  }
  int emitted = 0;
  while (!ready.empty()) {
    const int node = ready.front();
    ready.pop();
    if (order) order->push_back(node);
    ++emitted;
    for (int child = 0; child < d; ++child) {
      if (support(child, node) && --in_degree[child] == 0) ready.push(child);
    }
  }
  return emitted == d;
}

Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> support_of(
    const MatrixXd& entries, double tol) {
  return (entries.array() > tol).matrix();
}

}  // namespace

WeightedAdjacency::WeightedAdjacency(MatrixXd entries)
    : entries_(std::move(entries)) {
  if (entries_.rows() != entries_.cols() || entries_.rows() < 1) {
    throw ContractError("WeightedAdjacency: matrix must be square, dim >= 1");
  }
  for (int i = 0; i < entries_.rows(); ++i) {
    for (int j = 0; j < entries_.cols(); ++j) {
      const double v = entries_(i, j);
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw ContractError("WeightedAdjacency: entries must be finite and nonnegative");
      }
      if (i == j && v != 0.0) {
        throw ContractError("WeightedAdjacency: diagonal must be zero");
      }
    }
  }
}

Dag::Dag(int dim, std::vector<std::pair<int, int>> edges)
    : dim_(dim), edges_(std::move(edges)) {
  if (dim_ < 1) throw ContractError("Dag: dim must be >= 1");
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  parents_.resize(dim_);
  children_.resize(dim_);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> support(dim_, dim_);
  support.setConstant(false);
  for (const auto& [parent, child] : edges_) {
    if (parent < 0 || parent >= dim_ || child < 0 || child >= dim_) {
      throw ContractError("Dag: edge endpoint out of range");
    }
    if (parent == child) throw ContractError("Dag: self-edges not allowed");
    parents_[child].push_back(parent);
    children_[parent].push_back(child);
    support(child, parent) = true;
  }
  if (!kahn_order(support, nullptr)) {
    throw ContractError("Dag: edge set contains a directed cycle");
  }
}

bool Dag::has_edge(int parent, int child) const {
  return std::binary_search(edges_.begin(), edges_.end(),
                            std::make_pair(parent, child));
}

MatrixXd Dag::adjacency() const {
  MatrixXd a = MatrixXd::Zero(dim_, dim_);
  for (const auto& [parent, child] : edges_) a(child, parent) = 1.0;
  return a;
}

double acyclicity(const WeightedAdjacency& a) {
  const double h = trace_exp(a.entries()) - a.dim();
  // exp of a nonnegative matrix has trace >= D; tiny negatives are roundoff.
  return std::max(h, 0.0);
}

MatrixXd acyclicity_grad(const WeightedAdjacency& a) {
  return matrix_exp(a.entries()).transpose();
}

bool is_acyclic(const WeightedAdjacency& a, double support_tol) {
  if (support_tol < 0.0) {
    throw ContractError("is_acyclic: support_tol must be >= 0");
  }
  return kahn_order(support_of(a.entries(), support_tol), nullptr);
}

std::pair<Dag, WeightedAdjacency> threshold_to_dag(
    const WeightedAdjacency& a) {
  MatrixXd w = a.entries();
  const int d = a.dim();
  while (!kahn_order(support_of(w, 0.0), nullptr)) {
    int best_i = -1, best_j = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        const double v = w(i, j);
        if (v > 0.0 && v < best) {
          best = v;
          best_i = i;
          best_j = j;
        }
      }
    }
    w(best_i, best_j) = 0.0;
  }
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (w(i, j) > 0.0) edges.emplace_back(j, i);  // A_ij is edge j -> i
    }
  }
  return {Dag(d, std::move(edges)), WeightedAdjacency(std::move(w))};
}

std::vector<Dag> enumerate_dags(int d, int cap) {
  if (d < 1) throw ContractError("enumerate_dags: d must be >= 1");
  if (d > cap) {
    std::ostringstream msg;
    msg << "enumerate_dags: d=" << d << " exceeds cap " << cap
        << "; the number of labeled DAGs grows super-exponentially";
    throw ContractError(msg.str());
  }
  const int slots = d * (d - 1);
  std::vector<std::pair<int, int>> slot_edges;  // (parent, child)
  for (int p = 0; p < d; ++p) {
    for (int c = 0; c < d; ++c) {
      if (p != c) slot_edges.emplace_back(p, c);
    }
  }
  std::vector<Dag> out;
  for (std::uint64_t mask = 0; mask < (1ULL << slots); ++mask) {
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> support(d, d);
    support.setConstant(false);
    std::vector<std::pair<int, int>> edges;
    for (int s = 0; s < slots; ++s) {
      if (mask & (1ULL << s)) {
        edges.push_back(slot_edges[s]);
        support(slot_edges[s].second, slot_edges[s].first) = true;
      }
    }
    if (kahn_order(support, nullptr)) out.emplace_back(d, std::move(edges));
  }
  return out;
}

Dag sample_random_dag(int d, double expected_edges, GraphScheme scheme,
                      Rng& rng) {
  const double max_edges = d * (d - 1) / 2.0;
  if (expected_edges < 0.0 || expected_edges > max_edges) {
    throw ContractError("sample_random_dag: expected_edges must lie in [0, d(d-1)/2]");
  }
  std::vector<std::pair<int, int>> edges;
  if (scheme == GraphScheme::kErdosRenyi) {
    std::vector<int> order(d);
    std::iota(order.begin(), order.end(), 0);
    for (int i = d - 1; i > 0; --i) {
      std::swap(order[i], order[rng.uniform_index(i + 1)]);
    }
    const double p = max_edges > 0.0 ? expected_edges / max_edges : 0.0;
    for (int i = 0; i < d; ++i) {
      for (int j = i + 1; j < d; ++j) {
        if (rng.uniform() < p) edges.emplace_back(order[i], order[j]);
      }
    }
  } else {
    // Barabasi-Albert-style attachment. Seed with m isolated nodes, then
    // attach each new node to m distinct predecessors drawn with probability
    // proportional to degree + 1. Orientation: earlier node -> later node.
    int m = 1;
    double best_gap = std::numeric_limits<double>::infinity();
    for (int cand = 1; cand < d; ++cand) {
      const double gap = std::abs(cand * (d - cand) - expected_edges);
      if (gap < best_gap) {
        best_gap = gap;
        m = cand;
      }
    }
    std::vector<int> degree(d, 0);
    for (int node = m; node < d; ++node) {
      std::vector<int> targets;
      std::vector<bool> used(node, false);
      for (int k = 0; k < m && k < node; ++k) {
        double total = 0.0;
        for (int t = 0; t < node; ++t) {
          if (!used[t]) total += degree[t] + 1.0;
        }
        double draw = rng.uniform() * total;
        int chosen = -1;
        for (int t = 0; t < node; ++t) {
          if (used[t]) continue;
          draw -= degree[t] + 1.0;
          if (draw <= 0.0) {
            chosen = t;
            break;
          }
        }
        if (chosen < 0) chosen = node - 1;
        used[chosen] = true;
        targets.push_back(chosen);
      }
      for (int t : targets) {
        edges.emplace_back(t, node);
        ++degree[t];
        ++degree[node];
      }
    }
  }
  return Dag(d, std::move(edges));
}

std::vector<int> topological_order(const Dag& g) {
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> support(g.dim(),
                                                              g.dim());
  support.setConstant(false);
  for (const auto& [parent, child] : g.edges()) support(child, parent) = true;
  std::vector<int> order;
  order.reserve(g.dim());
  kahn_order(support, &order);  // Dag invariant guarantees success
  return order;
}

void write_adjacency_csv(std::ostream& out, const WeightedAdjacency& a) {
  out << "# convention: row=child\n";
  char buf[32];
  for (int i = 0; i < a.dim(); ++i) {
    for (int j = 0; j < a.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", a.entries()(i, j));
      out << (j ? "," : "") << buf;
    }
    out << "\n";
  }
}

WeightedAdjacency read_adjacency_csv(std::istream& in) {
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  const int d = static_cast<int>(rows.size());
  MatrixXd m(d, d);
  for (int i = 0; i < d; ++i) {
    if (static_cast<int>(rows[i].size()) != d) {
      throw ContractError("read_adjacency_csv: ragged or non-square matrix");
    }
    for (int j = 0; j < d; ++j) m(i, j) = rows[i][j];
  }
  return WeightedAdjacency(std::move(m));
}

void write_edge_list(std::ostream& out, const Dag& g) {
  out << "# d=" << g.dim() << "\n";
  for (const auto& [parent, child] : g.edges()) {
    out << parent << " " << child << "\n";
  }
}

Dag read_edge_list(std::istream& in, int dim_hint) {
  std::string line;
  int dim = dim_hint;
  std::vector<std::pair<int, int>> edges;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("d=");
      if (pos != std::string::npos) dim = std::stoi(line.substr(pos + 2));
      continue;
    }
    std::stringstream ss(line);
    int parent, child;
    if (!(ss >> parent >> child)) {
      throw ContractError("read_edge_list: malformed line: " + line);
    }
    edges.emplace_back(parent, child);
  }
  if (dim < 0) {
    int max_node = 0;
    for (const auto& [p, c] : edges) max_node = std::max({max_node, p, c});
    dim = max_node + 1;
  }
  return Dag(dim, std::move(edges));
}

}  // namespace causalcde
