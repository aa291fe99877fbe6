#include <catch2/catch_amalgamated.hpp>

#include "spos/sampler.hpp"

#include <cmath>
#include <cstring>

using Catch::Approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace spos;

namespace {

Model gaussian_model(int n, int d, double lambda, uint64_t seed) {
  RngStream rng(seed, 0, StreamPurpose::Data);
  Dataset ds;
  ds.features.resize(n, d);
  for (int j = 0; j < n; ++j)
    for (int c = 0; c < d; ++c) ds.features(j, c) = rng.normal();
  ds.name = "sampler-test";
  return Model(ModelKind::GaussianMean, ds, lambda);
}

TEST_CASE("sgld_step hand cases") {
  VectorXd theta(2), grad(2), noise(2);

  theta << 0.3, -0.4;
  grad.setZero();
  noise.setZero();
  CHECK(sgld_step(theta, grad, 0.1, 1.0, noise) == theta);

  theta.setZero();
  grad << 1, 0;
  CHECK(sgld_step(theta, grad, 0.1, 1.0, noise)(0) == Approx(-0.1).epsilon(1e-15));
  CHECK(sgld_step(theta, grad, 0.1, 1.0, noise)(1) == 0.0);

  theta << 1.0, 2.0;
  grad.setZero();
  noise << 1, 0;
  const VectorXd out = sgld_step(theta, grad, 0.5, 2.0, noise);
  CHECK(out(0) == Approx(1.0 + std::sqrt(2.0)).epsilon(1e-15));
  CHECK(out(1) == 2.0);

  VectorXd bad(2);
  bad << 1.0, std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(sgld_step(bad, grad, 0.1, 1.0, noise), std::invalid_argument);
}

TEST_CASE("svgd_step hand cases") {
  KernelConfig kernel;
  kernel.bandwidth = 1.0;

  SECTION("single particle collapses to theta + h G") {
    MatrixXd p(1, 2), g(1, 2);
    p << 0.5, -0.2;
    g << 2.0, 1.0;
    const MatrixXd out = svgd_step(p, g, kernel, 0.05);
    CHECK(out(0, 0) == Approx(0.5 + 0.05 * 2.0).epsilon(1e-15));
    CHECK(out(0, 1) == Approx(-0.2 + 0.05 * 1.0).epsilon(1e-15));
  }
  SECTION("coincident particles with zero gradients stay put") {
    MatrixXd p(2, 2);
    p << 1, 2, 1, 2;
    const MatrixXd out = svgd_step(p, MatrixXd::Zero(2, 2), kernel, 0.1);
    CHECK(out == p);
  }
  SECTION("two particles repel symmetrically") {
    const double r = 0.8, h = 0.1;
    MatrixXd p(2, 2);
    p << 0, 0, r, 0;
    const MatrixXd out = svgd_step(p, MatrixXd::Zero(2, 2), kernel, h);
    VectorXd u(2);
    u << r, 0;
    const double expected = (h / 2.0) * kernel_grad(kernel, u).norm();
    CHECK((out.row(0) - p.row(0)).norm() == Approx(expected).epsilon(1e-12));
    CHECK((out.row(1) - p.row(1)).norm() == Approx(expected).epsilon(1e-12));
    CHECK(out(0, 0) < 0.0);      // moves away from the neighbor
    CHECK(out(1, 0) > r);
    CHECK(out(0, 1) == 0.0);
    CHECK(((out.row(0) - p.row(0)) + (out.row(1) - p.row(1))).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("spos_step hand cases") {
  KernelConfig kernel;
  kernel.bandwidth = 1.0;

  SECTION("single particle: theta - h (beta_inv + 1) G") {
    MatrixXd p(1, 2), g(1, 2);
    p << 0.1, 0.2;
    g << 1.5, -0.5;
    const double h = 0.01, beta_inv = 0.3;
    const MatrixXd out = spos_step(p, g, kernel, h, beta_inv, MatrixXd::Zero(1, 2));
    for (int c = 0; c < 2; ++c)
      CHECK(out(0, c) == Approx(p(0, c) - h * (beta_inv + 1.0) * g(0, c)).epsilon(1e-14));
  }
  SECTION("zero_kernel reduces to sgld_step bit-exactly") {
    KernelConfig zero = kernel;
    zero.zero_kernel = true;
    RngStream rng(1, 0, StreamPurpose::Data);
    MatrixXd p(4, 3), g(4, 3), noise(4, 3);
    for (int i = 0; i < 4; ++i)
      for (int c = 0; c < 3; ++c) {
        p(i, c) = rng.normal();
        g(i, c) = rng.normal();
        noise(i, c) = rng.normal();
      }
    const double h = 0.02, beta_inv = 0.7;
    const MatrixXd out = spos_step(p, g, zero, h, beta_inv, noise);
    for (int i = 0; i < 4; ++i) {
      const VectorXd expected = sgld_step(p.row(i), g.row(i), h, beta_inv, noise.row(i));
      for (int c = 0; c < 3; ++c) {
        const double a = out(i, c), b = expected(c);
        CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
      }
    }
  }
  SECTION("permutation equivariance") {
    RngStream rng(2, 0, StreamPurpose::Data);
    const int m = 5, d = 3;
    MatrixXd p(m, d), g(m, d), noise(m, d);
    for (int i = 0; i < m; ++i)
      for (int c = 0; c < d; ++c) {
        p(i, c) = rng.normal();
        g(i, c) = rng.normal();
        noise(i, c) = rng.normal();
      }
    const std::array<int, 5> perm = {3, 0, 4, 1, 2};
    MatrixXd pp(m, d), pg(m, d), pn(m, d);
    for (int i = 0; i < m; ++i) {
      pp.row(i) = p.row(perm[i]);
      pg.row(i) = g.row(perm[i]);
      pn.row(i) = noise.row(perm[i]);
    }
    const MatrixXd out = spos_step(p, g, kernel, 0.05, 0.5, noise);
    const MatrixXd pout = spos_step(pp, pg, kernel, 0.05, 0.5, pn);
    for (int i = 0; i < m; ++i)
      CHECK((pout.row(i) - out.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("run basics") {
  const Model model = gaussian_model(20, 2, 1.0, 3);
  SamplerConfig cfg;
  cfg.dynamics = Dynamics::SPOS;
  cfg.step_size = 1e-3;
  cfg.beta_inv = 0.05;
  cfg.kernel.bandwidth = 5.0;
  cfg.estimator.kind = EstimatorKind::Plain;
  cfg.estimator.batch_size = 4;
  cfg.particles = 6;

  const MetricFn metric = [&](const ParticleSystem& sys) {
    return std::vector<std::pair<std::string, double>>{
        {"mean_norm", sys.positions.colwise().mean().norm()}};
  };

  SECTION("T = 0 yields a single step-0 record") {
    const RunResult r = run(model, cfg, 0, 10, metric, 1);
    REQUIRE(r.records.size() == 1);
    CHECK(r.records[0].step == 0);
    CHECK(r.records[0].data_passes == 0.0);  // plain estimator has no init cost
  }
  SECTION("bit-identical records under a fixed seed") {
    const RunResult a = run(model, cfg, 57, 10, metric, 42);
    const RunResult b = run(model, cfg, 57, 10, metric, 42);
    REQUIRE(a.records.size() == b.records.size());
    for (size_t i = 0; i < a.records.size(); ++i) {
      CHECK(a.records[i].step == b.records[i].step);
      CHECK(a.records[i].data_passes == b.records[i].data_passes);
      REQUIRE(a.records[i].values.size() == b.records[i].values.size());
      for (size_t v = 0; v < a.records[i].values.size(); ++v)
        CHECK(a.records[i].values[v].second == b.records[i].values[v].second);
    }
    CHECK(a.system.positions == b.system.positions);
    CHECK(a.records.back().step == 57);  // final step recorded
  }
  SECTION("data passes are nondecreasing and count estimator work") {
    cfg.estimator.kind = EstimatorKind::SVRG_II;
    cfg.estimator.epoch_length = 5;
    const RunResult r = run(model, cfg, 20, 3, metric, 7);
    CHECK(r.records.front().data_passes == Approx(1.0));  // M*N anchor init / (N*M)
    for (size_t i = 1; i < r.records.size(); ++i)
      CHECK(r.records[i].data_passes >= r.records[i - 1].data_passes);
    const uint64_t expected = 6ull * 20 + 20ull * 6 * 2 * 4 + (20 / 5) * 6ull * 20;
    CHECK(r.eval_count == expected);
  }
}

TEST_CASE("SPOS with zero kernel equals independent SGLD chains bit-exactly") {
  const Model model = gaussian_model(30, 3, 0.5, 4);
  SamplerConfig spos_cfg;
  spos_cfg.dynamics = Dynamics::SPOS;
  spos_cfg.step_size = 2e-3;
  spos_cfg.beta_inv = 1.0 / 30.0;
  spos_cfg.kernel.zero_kernel = true;
  spos_cfg.estimator.kind = EstimatorKind::SAGA;
  spos_cfg.estimator.batch_size = 3;
  spos_cfg.particles = 5;

  SamplerConfig sgld_cfg = spos_cfg;
  sgld_cfg.dynamics = Dynamics::SGLD;
  sgld_cfg.kernel.zero_kernel = false;
  sgld_cfg.kernel.bandwidth = 1.0;

  const RunResult a = run(model, spos_cfg, 100, 25, nullptr, 99);
  const RunResult b = run(model, sgld_cfg, 100, 25, nullptr, 99);
  REQUIRE(a.system.positions.rows() == b.system.positions.rows());
  for (int i = 0; i < a.system.positions.rows(); ++i)
    for (int c = 0; c < a.system.positions.cols(); ++c) {
      const double x = a.system.positions(i, c), y = b.system.positions(i, c);
      CHECK(std::memcmp(&x, &y, sizeof(double)) == 0);
    }
}

TEST_CASE("exchangeability: permuting particles and stream labels permutes snapshots") {
  const Model model = gaussian_model(12, 2, 1.0, 5);
  SamplerConfig cfg;
  cfg.dynamics = Dynamics::SPOS;
  cfg.step_size = 1e-3;
  cfg.beta_inv = 0.1;
  cfg.kernel.bandwidth = 2.0;
  cfg.estimator.kind = EstimatorKind::SAGA;
  cfg.estimator.batch_size = 2;
  cfg.particles = 5;

  MatrixXd init(5, 2);
  init.setRandom();
  cfg.init_positions = init;
  cfg.stream_labels = std::vector<uint64_t>{0, 1, 2, 3, 4};
  const RunResult base = run(model, cfg, 40, 40, nullptr, 11);

  const std::array<int, 5> perm = {2, 4, 0, 1, 3};
  MatrixXd pinit(5, 2);
  std::vector<uint64_t> plabels(5);
  for (int i = 0; i < 5; ++i) {
    pinit.row(i) = init.row(perm[i]);
    plabels[i] = perm[i];
  }
  cfg.init_positions = pinit;
  cfg.stream_labels = plabels;
  const RunResult permuted = run(model, cfg, 40, 40, nullptr, 11);

  for (int i = 0; i < 5; ++i)
    CHECK((permuted.system.positions.row(i) - base.system.positions.row(perm[i]))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
}

TEST_CASE("shared minibatch mode gives every particle the same draw") {
  const Model model = gaussian_model(25, 2, 0.0, 9);
  SamplerConfig cfg;
  cfg.dynamics = Dynamics::SVGD;  // no noise, so identical particles stay identical
  cfg.step_size = 1e-3;
  cfg.kernel.bandwidth = 2.0;
  cfg.estimator.kind = EstimatorKind::Plain;
  cfg.estimator.batch_size = 3;
  cfg.particles = 4;
  MatrixXd same_rows(4, 2);
  same_rows.rowwise() = Eigen::RowVector2d(0.7, -0.4);
  cfg.init_positions = same_rows;

  cfg.shared_minibatch = true;
  const RunResult shared = run(model, cfg, 30, 30, nullptr, 5);
  for (int i = 1; i < 4; ++i)
    CHECK(shared.system.positions.row(i) == shared.system.positions.row(0));

  cfg.shared_minibatch = false;
  const RunResult indep = run(model, cfg, 30, 30, nullptr, 5);
  bool any_diff = false;
  for (int i = 1; i < 4; ++i)
    any_diff |= (indep.system.positions.row(i) != indep.system.positions.row(0));
  CHECK(any_diff);
}

TEST_CASE("noise scale: increments have variance 2 beta_inv h") {
  const double h = 1e-3, beta_inv = 0.4;
  RngStream noise_stream(6, 0, StreamPurpose::Noise);
  const int steps = 10000, d = 4;
  VectorXd theta = VectorXd::Zero(d);
  const VectorXd grad = VectorXd::Zero(d);
  double sum = 0.0, sum_sq = 0.0;
  for (int k = 0; k < steps; ++k) {
    VectorXd noise(d);
    for (int c = 0; c < d; ++c) noise(c) = noise_stream.normal();
    const VectorXd next = sgld_step(theta, grad, h, beta_inv, noise);
    for (int c = 0; c < d; ++c) {
      const double inc = next(c) - theta(c);
      sum += inc;
      sum_sq += inc * inc;
    }
    theta = next;
  }
  const double n = static_cast<double>(steps) * d;
  const double var = sum_sq / n - (sum / n) * (sum / n);
  CHECK(var == Approx(2.0 * beta_inv * h).epsilon(0.05));
}

TEST_CASE("divergence guard aborts with a diagnostic") {
  const Model model = gaussian_model(10, 2, 0.0, 7);
  SamplerConfig cfg;
  cfg.dynamics = Dynamics::SGLD;
  cfg.step_size = 1e6;  // wildly unstable
  cfg.beta_inv = 1.0;
  cfg.estimator.kind = EstimatorKind::Plain;
  cfg.estimator.batch_size = 2;
  cfg.particles = 2;
  CHECK_THROWS_AS(run(model, cfg, 200, 10, nullptr, 1), DivergenceError);
}

TEST_CASE("SPOS+Plain tracks the conjugate posterior mean") {
  // Spec'd smoke test: N=100, d=2, M=16, h=1e-3, beta_inv=1/N, 2000 steps;
  // particle mean within 3 sqrt(tr(Sigma)/M) of the posterior mean in >= 90%
  // of 20 seeds.
  const Model model = gaussian_model(100, 2, 0.0, 8);
  const auto post = model.closed_form_posterior();
  const double tol = 3.0 * std::sqrt(post.covariance.trace() / 16.0);

  SamplerConfig cfg;
  cfg.dynamics = Dynamics::SPOS;
  cfg.step_size = 1e-3;
  cfg.beta_inv = 1.0 / 100.0;
  cfg.kernel.bandwidth = 10.0;
  cfg.estimator.kind = EstimatorKind::Plain;
  cfg.estimator.batch_size = 10;
  cfg.particles = 16;

  int hits = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const RunResult r = run(model, cfg, 2000, 2000, nullptr, seed);
    const VectorXd mean = r.system.positions.colwise().mean();
    if ((mean - post.mean).norm() < tol) ++hits;
  }
  CHECK(hits >= 18);
}

}  // namespace
