#pragma once

#include <map>
#include <string>
#include <vector>

#include "causalcde/graph.hpp"
#include "causalcde/rng.hpp"

namespace causalcde {

struct Dataset {
  MatrixXd values;
  std::vector<std::string> columns;
  bool standardized = false;
  std::string provenance;
  std::uint64_t seed = 0;

  int n() const { return static_cast<int>(values.rows()); }
  int dim() const { return static_cast<int>(values.cols()); }
  void validate() const;
};

// Per-column (x - mean) / std with the population standard deviation.
// Throws naming the column when a column is (numerically) constant.
Dataset standardize(const Dataset& data);

// Overrides applied to a column before downstream nodes sample; used to
// check that interventions only affect descendants.
using Interventions = std::map<int, VectorXd>;

// Ancestral sampling from a GP prior per node: a linear kernel plus one
// kernel drawn from {m12, m32, m52, sqe, rq}, theta ~ Gamma(1.5, 1) per
// input dimension, amplitude ~ U(1, 100), noise std ~ U(0.01, 1), latent
// input w ~ N(0, 1). Each node consumes rng.derive(node).
Dataset sample_gpcde_dataset(const Dag& dag, int n, Rng& rng,
                             const Interventions& interventions = {});

// Ancestral sampling through freshly initialized ReLU networks (two hidden
// layers of 128 units) mapping (parents, noise) to a scalar; He-style
// N(0, 2/fan_in) weights. Each node consumes rng.derive(node).
Dataset sample_nn_scm(const Dag& dag, int n, Rng& rng,
                      const Interventions& interventions = {});

}  // namespace causalcde
