// Acceptance criteria 5 and 6: conjugate-target convergence and the
// variance-reduction ordering experiment.

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "acceptance_util.hpp"
#include "spos/experiment.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace spos;

namespace {

// Criterion 5: GaussianMean (N=100, d=2, lambda=1), SPOS+Plain, M=50,
// h=1e-3, beta_inv=1/(N+lambda), 5000 steps; w2_gaussian between the
// particles' empirical moments and the closed-form posterior below
// 0.25 sqrt(tr Sigma) in at least 18 of 20 seeds.
bool criterion5_conjugate_target(std::string& detail) {
  ConfigMap map;
  map.set("name", "crit5");
  map.set("model", "gaussian_mean");
  map.set("synthetic_mu", "0.5");
  map.set("synthetic_d", "2");
  map.set("synthetic_n", "100");
  map.set("prior_precision", "1");
  map.set("dynamics", "spos");
  map.set("estimator", "plain");
  map.set("step_size", "1e-3");
  map.set("beta_inv", "0.00990099009900990099");  // 1/(N+lambda)
  map.set("kernel_bandwidth", "5");
  map.set("batch_size", "25");
  map.set("particles", "50");
  map.set("iterations", "5000");
  map.set("record_every", "5000");
  map.set("seeds", "0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19");
  const auto dir = std::filesystem::temp_directory_path() / "spos_acc_crit5";
  std::filesystem::remove_all(dir);
  map.set("out_dir", dir.string());

  const ExperimentConfig cfg = resolve_config_or_throw(map);
  const RunOutputs outputs = cmd_run(cfg);

  const double tol = 0.25 * std::sqrt(2.0 / 101.0);
  int hits = 0;
  double worst = 0.0;
  for (const auto& trace : outputs.traces) {
    const auto& values = trace.records.back().values;
    double w2 = std::numeric_limits<double>::quiet_NaN();
    for (const auto& [name, v] : values)
      if (name == "w2_gauss") w2 = v;
    worst = std::max(worst, w2);
    if (w2 < tol) ++hits;
  }
  detail = std::to_string(hits) + "/20 seeds below " + std::to_string(tol) + " (max " +
           std::to_string(worst) + ")";
  return hits >= 18;
}

// Criterion 6: log-normal synthetic (d=10, N=1000, B=15, M=50, matched h),
// per-run threshold = Plain-SPOS tail asymptote + 2 nats, median passes to
// first crossing over 5 seeds: SAGA <= SVRG <= SPOS with SAGA strictly
// below SPOS. All three algorithms share step size, kernel, temperature,
// the initial particle cloud, and the per-seed random streams.
bool criterion6_vr_ordering(std::string& detail) {
  const int d = 10, n_rows = 1000, particles = 50, batch = 15;
  const double h = 3e-7, eta = 100.0, beta_inv = 1.0 / 1001.0;
  const int64_t iterations = 20000, record_every = 40;
  const int tau = 67;  // about one pass per epoch at B=15

  const Dataset data = make_lognormal_data(VectorXd::Zero(d), n_rows, 7);
  const Model model(ModelKind::LogNormalMean, data, 1.0);
  const auto post = model.closed_form_posterior();

  // Shared initial cloud: posterior-scale spread, empirical mean placed
  // exactly at the posterior mean plus a fixed offset, so every run starts
  // the same known distance above the plain noise floor.
  MatrixXd z(particles, d);
  RngStream zs(999, 0, StreamPurpose::Init);
  for (int i = 0; i < particles; ++i)
    for (int c = 0; c < d; ++c) z(i, c) = zs.normal();
  z.rowwise() -= z.colwise().mean();
  MatrixXd init = 0.0316 * z;
  init.rowwise() += (post.mean.transpose().array() + 5.5e-3).matrix();

  const MetricFn metric = [&](const ParticleSystem& sys) {
    const VectorXd mean = sys.positions.colwise().mean();
    return std::vector<std::pair<std::string, double>>{{"log_mse", log_mse_mean(mean, post.mean)}};
  };

  auto run_algo = [&](EstimatorKind kind, uint64_t seed) {
    SamplerConfig cfg;
    cfg.dynamics = Dynamics::SPOS;
    cfg.step_size = h;
    cfg.beta_inv = beta_inv;
    cfg.kernel.bandwidth = eta;
    cfg.estimator.kind = kind;
    cfg.estimator.batch_size = batch;
    cfg.estimator.epoch_length = tau;
    cfg.particles = particles;
    cfg.init_positions = init;
    return run(model, cfg, iterations, record_every, metric, seed);
  };

  auto crossing = [](const std::vector<MetricRecord>& records, double threshold) {
    for (const auto& rec : records)
      if (rec.values[0].second <= threshold) return rec.data_passes;
    return std::numeric_limits<double>::infinity();
  };
  auto median5 = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[2];
  };

  std::vector<double> plain_cross, saga_cross, svrg_cross;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const RunResult plain = run_algo(EstimatorKind::Plain, seed);
    const size_t tail_from = plain.records.size() * 3 / 4;
    double floor = 0.0;
    for (size_t i = tail_from; i < plain.records.size(); ++i)
      floor += plain.records[i].values[0].second;
    floor /= static_cast<double>(plain.records.size() - tail_from);
    const double threshold = floor + 2.0;

    plain_cross.push_back(crossing(plain.records, threshold));
    saga_cross.push_back(crossing(run_algo(EstimatorKind::SAGA, seed).records, threshold));
    svrg_cross.push_back(crossing(run_algo(EstimatorKind::SVRG_II, seed).records, threshold));
  }

  const double saga_med = median5(saga_cross);
  const double svrg_med = median5(svrg_cross);
  const double plain_med = median5(plain_cross);
  const bool leg1 = saga_med <= svrg_med;
  const bool leg2 = svrg_med <= plain_med;
  const bool leg3 = saga_med < plain_med;

  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "median passes SAGA %.1f, SVRG %.1f, SPOS %.1f; SAGA<=SVRG %s; SVRG<=SPOS %s; "
                "SAGA<SPOS %s",
                saga_med, svrg_med, plain_med, leg1 ? "PASS" : "FAIL", leg2 ? "PASS" : "FAIL",
                leg3 ? "PASS" : "FAIL");
  detail = buf;
  return leg1 && leg2 && leg3;
}

}  // namespace

int main() {
  acceptance::Suite suite;
  suite.criterion(5, "SPOS+Plain converges to the conjugate Gaussian posterior",
                  criterion5_conjugate_target);
  suite.criterion(6, "variance-reduction ordering in data passes (matched step size)",
                  criterion6_vr_ordering);
  return suite.exit_code();
}
