#include <doctest.h>

#include <cmath>

#include "causalcde/autodiff.hpp"
#include "causalcde/matrix_exp.hpp"
#include "causalcde/optim.hpp"
#include "helpers.hpp"

using namespace causalcde;

namespace {

// Conjugate regression node shared by the natural-gradient tests.
struct ConjugateCase {
  NodeModel node;
  MatrixXd data;
  MatrixXd gp_inputs;
  VectorXd y;
};

ConjugateCase conjugate_case(int n, int m, Rng& rng, double noise_var) {
  auto [node, data] = helpers::random_node_with_data(n, 2, 1, m, rng);
  helpers::freeze_latent(node);
  helpers::set_noise_var(node, noise_var);
  EncoderParams enc = node.encoder();
  for (auto& w : enc.weights) w.setZero();
  for (auto& b : enc.biases) b.setZero();
  node.set_encoder(enc);
  ConjugateCase out{std::move(node), std::move(data), MatrixXd(), VectorXd()};
  out.gp_inputs.resize(out.data.rows(), 2);
  out.gp_inputs.col(0) = out.data.col(0);
  out.gp_inputs.col(1) = VectorXd::Zero(out.data.rows());
  out.y = out.data.col(1);
  return out;
}

}  // namespace

TEST_SUITE("optim") {
  TEST_CASE("adam leaves parameters alone at zero gradient") {
    AdamState state = AdamState::create(3);
    VectorXd params = VectorXd::Ones(3);
    const VectorXd before = params;
    adam_step(state, params, VectorXd::Zero(3), 0.05);
    CHECK((params - before).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("adam step magnitude approaches the learning rate") {
    AdamState state = AdamState::create(1);
    VectorXd params = VectorXd::Zero(1);
    const VectorXd grad = VectorXd::Constant(1, 0.37);
    const double lr = 0.01;
    double previous = params(0);
    double step_size = 0.0;
    for (int k = 0; k < 10000; ++k) {
      adam_step(state, params, grad, lr);
      step_size = params(0) - previous;
      previous = params(0);
    }
    CHECK(step_size == doctest::Approx(lr).epsilon(0.01));
  }

  TEST_CASE("adam trajectories are deterministic") {
    Rng rng(1);
    const VectorXd grads = rng.normal_vector(4);
    AdamState a = AdamState::create(4), b = AdamState::create(4);
    VectorXd pa = VectorXd::Zero(4), pb = VectorXd::Zero(4);
    for (int k = 0; k < 100; ++k) {
      adam_step(a, pa, grads * std::sin(k * 0.1), 0.02);
      adam_step(b, pb, grads * std::sin(k * 0.1), 0.02);
    }
    CHECK((pa - pb).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(adam_step(a, pa, VectorXd::Constant(
                                          4, std::nan("")), 0.1),
                    NumericalError);
  }

  TEST_CASE("auglag_update follows the published arithmetic") {
    AugLagState state;
    state.alpha = 1.0;
    state.rho = 0.0;
    state.h_prev = 0.4;

    // h = 0.5 > 0.9 * 0.4: both coefficients move.
    AugLagState bumped = auglag_update(state, 0.5);
    CHECK(bumped.rho == doctest::Approx(0.5));
    CHECK(bumped.alpha == doctest::Approx(10.0));
    CHECK(bumped.h_prev == doctest::Approx(0.5));
    CHECK(bumped.subproblem_index == 1);

    // h = 0.3 <= 0.36: alpha held.
    AugLagState held = auglag_update(state, 0.3);
    CHECK(held.rho == doctest::Approx(0.3));
    CHECK(held.alpha == doctest::Approx(1.0));

    // h = 0 leaves both coefficients unchanged.
    AugLagState zero = auglag_update(state, 0.0);
    CHECK(zero.rho == doctest::Approx(0.0));
    CHECK(zero.alpha == doctest::Approx(1.0));

    CHECK_THROWS_AS(auglag_update(state, -0.1), ContractError);
  }

  TEST_CASE("auglag coefficients are monotone over any h sequence") {
    Rng rng(5);
    AugLagState state;
    state.alpha = 0.05;
    for (int k = 0; k < 200; ++k) {
      const double h = rng.uniform(0.0, 2.0);
      const AugLagState next = auglag_update(state, h);
      CHECK(next.alpha >= state.alpha);
      CHECK(next.rho >= state.rho);
      CHECK(next.subproblem_index == state.subproblem_index + 1);
      state = next;
    }
  }

  TEST_CASE("natgrad step of size zero is the identity") {
    Rng rng(8);
    VariationalGaussian q;
    q.mean = rng.normal_vector(3);
    q.cov_factor = MatrixXd::Identity(3, 3);
    ExpectationGrads grads{rng.normal_vector(3), rng.normal_matrix(3, 3)};
    const VariationalGaussian next = natgrad_step(q, grads, 0.0);
    CHECK((next.mean - q.mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK((next.cov_factor - q.cov_factor).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("one unit natgrad step solves the conjugate problem") {
    Rng rng(9);
    ConjugateCase setup = conjugate_case(24, 6, rng, 1.3);
    // Start from an arbitrary variational state.
    VariationalGaussian q0;
    q0.mean = 0.5 * rng.normal_vector(6);
    q0.cov_factor = MatrixXd::Identity(6, 6);
    setup.node.set_q_u(q0);

    Rng elbo_rng(3);
    const NodeElboResult eval = node_elbo_with_grads(
        setup.node, setup.data, 2, 24, elbo_rng);
    const ExpectationGrads eg = to_expectation_grads(
        setup.node.q_u(), eval.grads.qu_mean, eval.grads.qu_cov);
    const VariationalGaussian q_star = natgrad_step(setup.node.q_u(), eg, 1.0);
    setup.node.set_q_u(q_star);

    Rng elbo_rng2(3);
    const double achieved =
        node_elbo(setup.node, setup.data, 2, 24, elbo_rng2);
    const double collapsed = collapsed_bound_no_latent(
        setup.node.kernel_params(), setup.node.inducing_inputs(),
        setup.gp_inputs, setup.y, setup.node.noise_var(), setup.node.jitter);
    CHECK(achieved == doctest::Approx(collapsed).epsilon(1e-6));
  }

  TEST_CASE("small natgrad steps never decrease the conjugate bound") {
    Rng rng(10);
    for (int trial = 0; trial < 100; ++trial) {
      ConjugateCase setup = conjugate_case(12, 4, rng, rng.uniform(0.5, 2.0));
      Rng elbo_rng(trial);
      const double before =
          node_elbo(setup.node, setup.data, 1, 12, elbo_rng);
      Rng grad_rng(trial);
      const NodeElboResult eval = node_elbo_with_grads(
          setup.node, setup.data, 1, 12, grad_rng);
      const ExpectationGrads eg = to_expectation_grads(
          setup.node.q_u(), eval.grads.qu_mean, eval.grads.qu_cov);
      const VariationalGaussian next =
          natgrad_step(setup.node.q_u(), eg, 0.05);
      setup.node.set_q_u(next);
      Rng after_rng(trial);
      const double after =
          node_elbo(setup.node, setup.data, 1, 12, after_rng);
      CHECK(after >= before - 1e-9);
    }
  }

  TEST_CASE("natgrad rejects steps that leave the PD cone") {
    VariationalGaussian q;
    q.mean = VectorXd::Zero(2);
    q.cov_factor = MatrixXd::Identity(2, 2);
    ExpectationGrads grads;
    grads.d_eta1 = VectorXd::Zero(2);
    // A large positive eta2 gradient pushes -1/2 S^-1 across zero.
    grads.d_eta2 = 10.0 * MatrixXd::Identity(2, 2);
    // Halving to gamma < 0.05 makes the step feasible again.
    const VariationalGaussian next = natgrad_step(q, grads, 1.0);
    Eigen::LLT<MatrixXd> llt(next.cov());
    CHECK(llt.info() == Eigen::Success);
    // An unsalvageable direction throws after five halvings.
    grads.d_eta2 = 1e9 * MatrixXd::Identity(2, 2);
    CHECK_THROWS_AS(natgrad_step(q, grads, 1.0), NumericalError);
  }

  TEST_CASE("grad_check accepts a quadratic and flags corruption") {
    auto objective = [](const VectorXd& x) { return 0.5 * x.squaredNorm(); };
    auto gradient = [](const VectorXd& x) { return VectorXd(x); };
    Rng rng(11);
    const VectorXd x0 = rng.normal_vector(6);
    const GradCheckReport ok = grad_check(objective, gradient, x0, 1e-9);
    CHECK(ok.pass);
    CHECK(ok.max_rel_error < 1e-9);

    auto corrupted = [](const VectorXd& x) {
      VectorXd g = x;
      g(3) += 0.5;
      return g;
    };
    const GradCheckReport bad = grad_check(objective, corrupted, x0, 1e-4);
    CHECK_FALSE(bad.pass);
    CHECK(bad.worst_index == 3);
  }

  TEST_CASE("grad_check passes the node bound at 1e-4") {
    Rng rng(12);
    const int n = 10;
    MatrixXd data = rng.normal_matrix(n, 2);
    NodeModel node = NodeModel::create(2, 0, {1}, 3, LatentMode::kEncoder,
                                       QuMode::kRawFactor, EncoderConfig{6, 2},
                                       n);
    node.raw = 0.25 * rng.normal_vector(node.layout.total);
    auto objective = [&](const VectorXd& raw) {
      NodeModel work = node;
      work.raw = raw;
      Rng r(404);
      return node_elbo(work, data, 3, n, r);
    };
    auto gradient = [&](const VectorXd& raw) {
      NodeModel work = node;
      work.raw = raw;
      Rng r(404);
      return node_elbo_with_grads(work, data, 3, n, r).grads.raw;
    };
    const GradCheckReport report =
        grad_check(objective, gradient, node.raw, 1e-4);
    CHECK(report.pass);
  }

  TEST_CASE("penalty gradient obeys the chain-rule identity") {
    Rng rng(13);
    const double alpha = 0.8, rho = 0.45;
    VectorXd x0 = rng.normal_vector(9).cwiseAbs() * 0.5;
    ad::Tape tape;
    ad::Var leaf = tape.var(x0);
    ad::Var a = tape.reshape(leaf, 3, 3);
    ad::Var h = tape.add(tape.trace_expm(a), tape.scalar(-3.0));
    ad::Var penalty = tape.add(tape.scale(tape.square(h), -alpha),
                               tape.scale(h, -0.5 * rho));
    tape.backward(penalty);
    const double h_value = tape.scalar_value(h);
    const MatrixXd grad_h =
        matrix_exp(Eigen::Map<const MatrixXd>(x0.data(), 3, 3)).transpose();
    const MatrixXd expected = -(2.0 * alpha * h_value + 0.5 * rho) * grad_h;
    const MatrixXd got =
        Eigen::Map<const MatrixXd>(tape.grad(leaf).data(), 3, 3);
    CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("bfgs maximizes a concave quadratic") {
    Rng rng(14);
    MatrixXd w = rng.normal_matrix(5, 5);
    const MatrixXd a = w * w.transpose() + MatrixXd::Identity(5, 5);
    const VectorXd b = rng.normal_vector(5);
    auto objective = [&](const VectorXd& x) {
      return -0.5 * x.dot(a * x) + b.dot(x);
    };
    auto gradient = [&](const VectorXd& x) { return VectorXd(b - a * x); };
    const BfgsResult result =
        bfgs_maximize(objective, gradient, VectorXd::Zero(5), 100, 1e-8);
    const VectorXd optimum = a.ldlt().solve(b);
    CHECK(result.converged);
    CHECK((result.params - optimum).cwiseAbs().maxCoeff() < 1e-6);
  }
}
