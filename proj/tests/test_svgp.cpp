#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "causalcde/svgp.hpp"
#include "helpers.hpp"

using namespace causalcde;

namespace {

// Independent dense-algebra implementation of the predictive moments.
std::pair<VectorXd, VectorXd> moments_oracle(const NodeModel& node,
                                             const MatrixXd& inputs) {
  const NodeKernelParams params = node.kernel_params();
  const MatrixXd z = node.inducing_inputs();
  const VariationalGaussian q = node.q_u();
  MatrixXd k_uu = eval_kernel(params, z, z, KernelKind::kSum);
  k_uu.diagonal().array() += node.jitter;
  const MatrixXd k_uu_inv = k_uu.inverse();
  const MatrixXd k_fu = eval_kernel(params, inputs, z, KernelKind::kSum);
  const MatrixXd k_ff = eval_kernel(params, inputs, inputs, KernelKind::kSum);
  const VectorXd fmean = k_fu * k_uu_inv * q.mean;
  const MatrixXd s = q.cov();
  const MatrixXd cov = k_ff - k_fu * k_uu_inv * (k_uu - s) * k_uu_inv *
                                  k_fu.transpose();
  return {fmean, cov.diagonal().cwiseMax(0.0)};
}

// Second, independently coded log marginal likelihood (eigendecomposition).
double lml_oracle(const NodeKernelParams& params, const MatrixXd& x,
                  const VectorXd& y, double noise_var) {
  MatrixXd c = eval_kernel(params, x, x, KernelKind::kSum);
  c.diagonal().array() += noise_var;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (c + c.transpose()));
  const VectorXd lambda = eig.eigenvalues();
  const VectorXd proj = eig.eigenvectors().transpose() * y;
  double logdet = 0.0, quad = 0.0;
  for (int i = 0; i < lambda.size(); ++i) {
    logdet += std::log(lambda(i));
    quad += proj(i) * proj(i) / lambda(i);
  }
  return -0.5 * (x.rows() * kLogTwoPi + logdet + quad);
}

// No-latent regression node: latent weights frozen, encoder zeroed so
// q(w) = p(w) and the bound is the conjugate SVGP bound.
struct ConjugateSetup {
  NodeModel node;
  MatrixXd data;        // n x 2 (column 0 = input, column 1 = target)
  MatrixXd gp_inputs;   // (x_obs, fixed latent column)
  VectorXd y;
};

ConjugateSetup make_conjugate(int n, int m, Rng& rng, double noise_var) {
  auto [node, data] = helpers::random_node_with_data(n, 2, 1, m, rng);
  helpers::freeze_latent(node);
  helpers::set_noise_var(node, noise_var);
  EncoderParams enc = node.encoder();
  for (auto& w : enc.weights) w.setZero();
  for (auto& b : enc.biases) b.setZero();
  node.set_encoder(enc);
  ConjugateSetup setup{std::move(node), std::move(data), MatrixXd(), VectorXd()};
  setup.gp_inputs.resize(setup.data.rows(), 2);
  setup.gp_inputs.col(0) = setup.data.col(0);
  setup.gp_inputs.col(1) = VectorXd::Zero(setup.data.rows());
  setup.y = setup.data.col(1);
  return setup;
}

}  // namespace

TEST_SUITE("svgp") {
  TEST_CASE("zero encoder maps to the standard normal posterior") {
    EncoderConfig cfg{16, 3};
    Rng rng(5);
    EncoderParams enc = EncoderParams::init(4, cfg, rng);
    for (auto& w : enc.weights) w.setZero();
    for (auto& b : enc.biases) b.setZero();
    const MatrixXd x = rng.normal_matrix(7, 4);
    const auto [mu, var] = encode(enc, x);
    CHECK(mu.size() == 7);
    CHECK(var.size() == 7);
    CHECK(mu.cwiseAbs().maxCoeff() == 0.0);
    CHECK((var.array() - 1.0).abs().maxCoeff() == 0.0);
  }

  TEST_CASE("encode shape contract for a single point") {
    EncoderConfig cfg{8, 2};
    Rng rng(6);
    const EncoderParams enc = EncoderParams::init(3, cfg, rng);
    Rng xr(60);
    const auto [mu, var] = encode(enc, xr.normal_matrix(1, 3));
    CHECK(mu.size() == 1);
    CHECK(var.size() == 1);
    CHECK(var(0) > 0.0);
  }

  TEST_CASE("encode is deterministic for a fixed seed") {
    EncoderConfig cfg{8, 2};
    Rng rng_a(99), rng_b(99), rng_x(100);
    const EncoderParams a = EncoderParams::init(3, cfg, rng_a);
    const EncoderParams b = EncoderParams::init(3, cfg, rng_b);
    const MatrixXd x = rng_x.normal_matrix(5, 3);
    const auto [mu_a, var_a] = encode(a, x);
    const auto [mu_b, var_b] = encode(b, x);
    CHECK((mu_a - mu_b).cwiseAbs().maxCoeff() == 0.0);
    CHECK((var_a - var_b).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("encode rejects non-finite activations") {
    EncoderConfig cfg{4, 2};
    Rng rng(7);
    EncoderParams enc = EncoderParams::init(2, cfg, rng);
    enc.weights[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(encode(enc, MatrixXd::Ones(2, 2)), NumericalError);
  }

  TEST_CASE("q_f_moments recovers the prior at q(u) = p(u)") {
    Rng rng(42);
    auto [node, data] = helpers::random_node_with_data(20, 3, 0, 8, rng);
    const NodeKernelParams params = node.kernel_params();
    const MatrixXd z = node.inducing_inputs();
    MatrixXd k_uu = eval_kernel(params, z, z, KernelKind::kSum);
    k_uu.diagonal().array() += node.jitter;  // the model's effective prior
    VariationalGaussian prior;
    prior.mean = VectorXd::Zero(8);
    prior.cov_factor = Eigen::LLT<MatrixXd>(k_uu).matrixL();
    node.set_q_u(prior);

    MatrixXd inputs(5, 3);
    inputs.leftCols(2) = data.block(0, 1, 5, 2);
    inputs.col(2) = rng.normal_vector(5);
    const auto [fmean, fvar] = q_f_moments(node, inputs);
    const VectorXd k_ff = eval_kernel_diag(params, inputs, KernelKind::kSum);
    CHECK(fmean.cwiseAbs().maxCoeff() < 1e-8);
    CHECK((fvar - k_ff).cwiseAbs().maxCoeff() < 1e-8);
  }

  TEST_CASE("q_f_moments interpolates the variational mean at Z = inputs") {
    Rng rng(43);
    auto [node, data] = helpers::random_node_with_data(6, 2, 1, 6, rng);
    MatrixXd inputs(6, 2);
    inputs.col(0) = data.col(0);
    inputs.col(1) = rng.normal_vector(6);
    node.set_inducing_inputs(inputs);
    VariationalGaussian q;
    q.mean = rng.normal_vector(6);
    q.cov_factor = 1e-6 * MatrixXd::Identity(6, 6);
    node.set_q_u(q);
    const auto [fmean, fvar] = q_f_moments(node, inputs);
    CHECK((fmean - q.mean).cwiseAbs().maxCoeff() < 1e-4);
    CHECK(fvar.maxCoeff() < 1e-3);
  }

  TEST_CASE("q_f_moments matches a dense-algebra oracle") {
    Rng rng(44);
    for (int trial = 0; trial < 10; ++trial) {
      auto [node, data] = helpers::random_node_with_data(15, 3, 1, 7, rng);
      VariationalGaussian q;
      q.mean = rng.normal_vector(7);
      MatrixXd w = rng.normal_matrix(7, 7);
      MatrixXd s = w * w.transpose() + MatrixXd::Identity(7, 7);
      q.cov_factor = Eigen::LLT<MatrixXd>(s).matrixL();
      node.set_q_u(q);
      MatrixXd inputs(9, 3);
      inputs.leftCols(2) = data.block(2, 1, 9, 2);
      inputs.col(2) = rng.normal_vector(9);
      const auto [fmean, fvar] = q_f_moments(node, inputs);
      const auto [om, ov] = moments_oracle(node, inputs);
      CHECK((fmean - om).cwiseAbs().maxCoeff() < 1e-8);
      CHECK((fvar - ov).cwiseAbs().maxCoeff() < 1e-8);
    }
  }

  TEST_CASE("q_f_moments reports factorization failure") {
    Rng rng(45);
    auto [node, data] = helpers::random_node_with_data(8, 2, 0, 4, rng);
    MatrixXd z = node.inducing_inputs();
    z(0, 0) = std::numeric_limits<double>::quiet_NaN();
    node.set_inducing_inputs(z);
    MatrixXd inputs = MatrixXd::Zero(3, 2);
    CHECK_THROWS_AS(q_f_moments(node, inputs), NumericalError);
  }

  TEST_CASE("kl_terms vanish exactly at the priors") {
    Rng rng(46);
    auto [node, data] = helpers::random_node_with_data(12, 2, 0, 5, rng);
    const NodeKernelParams params = node.kernel_params();
    const MatrixXd z = node.inducing_inputs();
    MatrixXd k_uu = eval_kernel(params, z, z, KernelKind::kSum);
    k_uu.diagonal().array() += node.jitter;
    VariationalGaussian prior;
    prior.mean = VectorXd::Zero(5);
    prior.cov_factor = Eigen::LLT<MatrixXd>(k_uu).matrixL();
    node.set_q_u(prior);
    const auto [kl_u, kl_w] =
        kl_terms(node, VectorXd::Zero(4), VectorXd::Ones(4));
    CHECK(kl_u < 1e-9);
    CHECK(kl_w == 0.0);
  }

  TEST_CASE("kl_terms match the univariate closed form") {
    Rng rng(47);
    auto [node, data] = helpers::random_node_with_data(12, 2, 0, 5, rng);
    VectorXd mu(1), var(1);
    mu << 1.0;
    var << 1.0;
    const auto [kl_u, kl_w] = kl_terms(node, mu, var);
    CHECK(kl_w == doctest::Approx(0.5));
    CHECK_THROWS_AS(kl_terms(node, mu, -var), ContractError);
  }

  TEST_CASE("node_elbo with optimal q(u) reaches the exact marginal") {
    // Noise-dominated regime keeps the jitter perturbation below tolerance.
    Rng rng(48);
    ConjugateSetup setup = make_conjugate(16, 16, rng, 25.0);
    setup.node.set_inducing_inputs(setup.gp_inputs);  // Z = X
    const NodeKernelParams params = setup.node.kernel_params();
    setup.node.set_q_u(helpers::optimal_qu(params, setup.gp_inputs,
                                           setup.gp_inputs, setup.y, 25.0,
                                           setup.node.jitter));
    Rng elbo_rng(1);
    const double bound =
        node_elbo(setup.node, setup.data, 2, 16, elbo_rng);
    const double exact = exact_gp_lml(params, setup.gp_inputs, setup.y, 25.0);
    CHECK(bound == doctest::Approx(exact).epsilon(1e-6));
  }

  TEST_CASE("node_elbo agrees with a naive Monte Carlo oracle") {
    Rng rng(49);
    ConjugateSetup setup = make_conjugate(8, 5, rng, 0.5);
    // Un-freeze the latent dimension: the oracle integrates over it.
    for (int k = 0; k < 5; ++k) {
      setup.node.unfreeze_theta(k, setup.node.input_dim() - 1);
    }
    const NodeKernelParams params = setup.node.kernel_params();
    const MatrixXd z = setup.node.inducing_inputs();
    MatrixXd k_uu = eval_kernel(params, z, z, KernelKind::kSum);
    k_uu.diagonal().array() += setup.node.jitter;
    VariationalGaussian prior;
    prior.mean = VectorXd::Zero(5);
    prior.cov_factor = Eigen::LLT<MatrixXd>(k_uu).matrixL();
    setup.node.set_q_u(prior);
    const double noise_var = setup.node.noise_var();

    // With q(u) = p(u) and q(w) = p(w) both KLs vanish and the bound is the
    // expected closed-form likelihood under w ~ N(0, 1), point by point.
    const int mc_ours = 512;
    Rng elbo_rng(77);
    const double ours =
        node_elbo(setup.node, setup.data, mc_ours, 8, elbo_rng);

    const int oracle_draws = 100000;
    Rng oracle_rng(123456);
    double oracle_mean = 0.0, oracle_sq = 0.0;
    for (int s = 0; s < oracle_draws; ++s) {
      MatrixXd inputs(8, 2);
      inputs.col(0) = setup.data.col(0);
      for (int r = 0; r < 8; ++r) inputs(r, 1) = oracle_rng.normal();
      const auto [fmean, fvar] = q_f_moments(setup.node, inputs);
      double value = 0.0;
      for (int r = 0; r < 8; ++r) {
        const double resid = setup.y(r) - fmean(r);
        value += -0.5 * kLogTwoPi - 0.5 * std::log(noise_var) -
                 resid * resid / (2.0 * noise_var) -
                 fvar(r) / (2.0 * noise_var);
      }
      oracle_mean += value;
      oracle_sq += value * value;
    }
    oracle_mean /= oracle_draws;
    const double oracle_var =
        oracle_sq / oracle_draws - oracle_mean * oracle_mean;
    const double oracle_se = std::sqrt(oracle_var / oracle_draws);
    // Our estimator averages mc_ours joint draws of the same functional.
    const double ours_se = std::sqrt(oracle_var / mc_ours);
    const double tolerance =
        3.0 * std::sqrt(oracle_se * oracle_se + ours_se * ours_se);
    CHECK(std::abs(ours - oracle_mean) < tolerance);
  }

  TEST_CASE("node_elbo never exceeds the exact marginal in the no-latent case") {
    Rng rng(50);
    for (int trial = 0; trial < 20; ++trial) {
      ConjugateSetup setup = make_conjugate(14, 5, rng, rng.uniform(0.5, 2.0));
      VariationalGaussian q;
      q.mean = rng.normal_vector(5);
      q.cov_factor = MatrixXd::Identity(5, 5);
      setup.node.set_q_u(q);
      Rng elbo_rng(trial);
      const double bound =
          node_elbo(setup.node, setup.data, 2, 14, elbo_rng);
      const double exact = exact_gp_lml(setup.node.kernel_params(),
                                        setup.gp_inputs, setup.y,
                                        setup.node.noise_var());
      CHECK(bound <= exact + 1e-4);
    }
  }

  TEST_CASE("exact_gp_lml reduces to independent Gaussians at K = 0") {
    NodeKernelParams params = NodeKernelParams::zeros(2);
    params.var_sqe = params.var_m12 = params.var_m32 = params.var_rq = 0.0;
    Rng rng(51);
    const MatrixXd x = rng.normal_matrix(9, 2);
    const VectorXd y = rng.normal_vector(9);
    const double noise_var = 0.7;
    double expected = 0.0;
    for (int i = 0; i < 9; ++i) {
      expected += -0.5 * kLogTwoPi - 0.5 * std::log(noise_var) -
                  y(i) * y(i) / (2.0 * noise_var);
    }
    CHECK(exact_gp_lml(params, x, y, noise_var) ==
          doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("exact_gp_lml scalar case") {
    NodeKernelParams params = NodeKernelParams::zeros(1);
    params.var_sqe = 1.0;
    params.var_m12 = params.var_m32 = params.var_rq = 0.0;
    MatrixXd x(1, 1);
    x << 0.3;
    VectorXd y(1);
    y << -0.4;
    // k(x, x) = 1, noise 1: log N(y | 0, 2).
    const double expected =
        -0.5 * kLogTwoPi - 0.5 * std::log(2.0) - y(0) * y(0) / 4.0;
    CHECK(exact_gp_lml(params, x, y, 1.0) == doctest::Approx(expected));
  }

  TEST_CASE("exact_gp_lml matches a second implementation") {
    Rng rng(52);
    for (int trial = 0; trial < 20; ++trial) {
      const int n = 3 + static_cast<int>(rng.uniform_index(20));
      const NodeKernelParams params = helpers::random_kernel_params(2, rng);
      const MatrixXd x = rng.normal_matrix(n, 2);
      const VectorXd y = rng.normal_vector(n);
      const double noise_var = rng.uniform(0.1, 1.0);
      const double a = exact_gp_lml(params, x, y, noise_var);
      const double b = lml_oracle(params, x, y, noise_var);
      CHECK(a == doctest::Approx(b).epsilon(1e-10));
    }
  }

  TEST_CASE("collapsed bound equals the exact marginal at Z = X") {
    Rng rng(53);
    for (int trial = 0; trial < 20; ++trial) {
      const int n = 4 + static_cast<int>(rng.uniform_index(30));
      const NodeKernelParams params = helpers::random_kernel_params(2, rng);
      const MatrixXd x = rng.normal_matrix(n, 2);
      const VectorXd y = rng.normal_vector(n);
      const double noise_var = rng.uniform(0.3, 2.0);
      const double collapsed =
          collapsed_bound_no_latent(params, x, x, y, noise_var);
      const double exact = exact_gp_lml(params, x, y, noise_var);
      CHECK(collapsed == doctest::Approx(exact).epsilon(1e-6));
    }
  }

  TEST_CASE("collapsed bound is a lower bound and grows with Z") {
    Rng rng(54);
    for (int trial = 0; trial < 100; ++trial) {
      const int n = 10;
      const NodeKernelParams params = helpers::random_kernel_params(1, rng);
      const MatrixXd x = rng.normal_matrix(n, 1);
      const VectorXd y = rng.normal_vector(n);
      const double noise_var = rng.uniform(0.3, 2.0);
      const int m = 1 + static_cast<int>(rng.uniform_index(5));
      const MatrixXd z = x.topRows(m);
      const MatrixXd z_more = x.topRows(m + 1);
      const double small = collapsed_bound_no_latent(params, z, x, y, noise_var);
      const double bigger =
          collapsed_bound_no_latent(params, z_more, x, y, noise_var);
      const double exact = exact_gp_lml(params, x, y, noise_var);
      CHECK(small <= exact + 1e-8);
      CHECK(bigger >= small - 1e-8);
    }
  }

  TEST_CASE("lower bound ordering: uncollapsed <= collapsed <= exact") {
    Rng rng(550);
    for (int trial = 0; trial < 200; ++trial) {
      const int n = 12, m = 4;
      ConjugateSetup setup = make_conjugate(n, m, rng, rng.uniform(0.4, 1.5));
      VariationalGaussian q;
      q.mean = 0.3 * rng.normal_vector(m);
      q.cov_factor = MatrixXd::Identity(m, m);
      setup.node.set_q_u(q);
      Rng elbo_rng(trial);
      const double uncollapsed =
          node_elbo(setup.node, setup.data, 1, n, elbo_rng);
      const NodeKernelParams params = setup.node.kernel_params();
      const double collapsed = collapsed_bound_no_latent(
          params, setup.node.inducing_inputs(), setup.gp_inputs, setup.y,
          setup.node.noise_var(), setup.node.jitter);
      const double exact = exact_gp_lml(params, setup.gp_inputs, setup.y,
                                        setup.node.noise_var());
      CHECK(uncollapsed <= collapsed + 1e-8);
      CHECK(collapsed <= exact + 1e-6);
    }
  }

  TEST_CASE("model_elbo is the sum of per-node bounds") {
    Rng rng(56);
    const int n = 10;
    std::vector<NodeModel> nodes;
    MatrixXd data = rng.normal_matrix(n, 2);
    for (int target = 0; target < 2; ++target) {
      auto [node, ignored] =
          helpers::random_node_with_data(n, 2, target, 4, rng);
      nodes.push_back(std::move(node));
    }
    const Rng shared(4242);
    const double total = model_elbo(nodes, data, n, 3, shared);
    Rng rng0 = shared.derive(0), rng1 = shared.derive(1);
    const double separate = node_elbo(nodes[0], data, 3, n, rng0) +
                            node_elbo(nodes[1], data, 3, n, rng1);
    CHECK(total == separate);

    std::vector<NodeModel> reversed = {nodes[1], nodes[0]};
    CHECK(model_elbo(reversed, data, n, 3, shared) == total);
  }

  TEST_CASE("node_elbo is deterministic given the seed") {
    Rng rng(57);
    auto [node, data] = helpers::random_node_with_data(10, 2, 0, 4, rng);
    Rng a(31), b(31);
    CHECK(node_elbo(node, data, 5, 10, a) == node_elbo(node, data, 5, 10, b));
    CHECK_THROWS_AS(
        [&] {
          Rng c(1);
          return node_elbo(node, data, 5, 9, c);  // batch larger than N
        }(),
        ContractError);
  }

  TEST_CASE("node_elbo gradients match central differences") {
    Rng rng(58);
    for (int trial = 0; trial < 3; ++trial) {
      const int n = 10, m = 3, d = 2;
      MatrixXd data = rng.normal_matrix(n, d);
      NodeModel node = NodeModel::create(d, 1, {0}, m, LatentMode::kEncoder,
                                         QuMode::kRawFactor,
                                         EncoderConfig{6, 2}, n);
      node.raw = 0.3 * rng.normal_vector(node.layout.total);
      const std::uint64_t seed = 1000 + trial;
      auto objective = [&](const VectorXd& raw) {
        NodeModel work = node;
        work.raw = raw;
        Rng r(seed);
        return node_elbo(work, data, 4, n, r);
      };
      auto gradient = [&](const VectorXd& raw) {
        NodeModel work = node;
        work.raw = raw;
        Rng r(seed);
        return node_elbo_with_grads(work, data, 4, n, r).grads.raw;
      };
      const VectorXd analytic = gradient(node.raw);
      for (int i = 0; i < node.raw.size(); ++i) {
        VectorXd up = node.raw, down = node.raw;
        up(i) += 1e-5;
        down(i) -= 1e-5;
        const double fd = (objective(up) - objective(down)) / 2e-5;
        const double denom =
            std::max({std::abs(analytic(i)), std::abs(fd), 1e-4});
        CHECK(std::abs(analytic(i) - fd) / denom < 1e-4);
      }
    }
  }

  TEST_CASE("free-form latents require the full dataset as the batch") {
    Rng rng(59);
    MatrixXd data = rng.normal_matrix(8, 2);
    NodeModel node = NodeModel::create(2, 0, {1}, 3, LatentMode::kFreeForm,
                                       QuMode::kRawFactor, EncoderConfig{}, 8);
    node.raw = 0.1 * rng.normal_vector(node.layout.total);
    Rng r(3);
    CHECK_THROWS_AS(node_elbo(node, data.topRows(4), 2, 8, r), ContractError);
    Rng r2(3);
    CHECK(std::isfinite(node_elbo(node, data, 2, 8, r2)));
  }
}
