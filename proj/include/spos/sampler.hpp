#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spos/estimator.hpp"
#include "spos/kernel.hpp"
#include "spos/metrics.hpp"
#include "spos/model.hpp"
#include "spos/rng.hpp"

namespace spos {

enum class Dynamics { SGLD, SVGD, SPOS };

inline std::string to_string(Dynamics d) {
  switch (d) {
    case Dynamics::SGLD: return "sgld";
    case Dynamics::SVGD: return "svgd";
    case Dynamics::SPOS: return "spos";
  }
  return "?";
}

struct ParticleSystem {
  Eigen::MatrixXd positions;  // M x d, theta_k^{(i)} as rows
  int64_t step = 0;
  uint64_t rng_seed = 0;

  Eigen::Index particles() const { return positions.rows(); }
  Eigen::Index dim() const { return positions.cols(); }
};

struct SamplerConfig {
  Dynamics dynamics = Dynamics::SPOS;
  double step_size = 1e-3;
  double beta_inv = 1.0;
  KernelConfig kernel;
  EstimatorParams estimator;
  Eigen::Index particles = 1;
  bool shared_minibatch = false;
  // Optional overrides: fixed initial positions instead of N(0, I), and
  // per-particle stream labels (exchangeability tests permute these).
  std::optional<Eigen::MatrixXd> init_positions;
  std::optional<std::vector<uint64_t>> stream_labels;

  void validate() const {
    if (!(step_size > 0.0)) throw std::invalid_argument("SamplerConfig: step_size must be > 0");
    if (dynamics != Dynamics::SVGD && !(beta_inv > 0.0))
      throw std::invalid_argument("SamplerConfig: beta_inv must be > 0");
    if (particles < 1) throw std::invalid_argument("SamplerConfig: need M >= 1");
    kernel.validate();
    if (stream_labels && static_cast<Eigen::Index>(stream_labels->size()) != particles)
      throw std::invalid_argument("SamplerConfig: stream_labels size != particles");
  }
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int64_t step, double norm)
      : std::runtime_error("divergence at step " + std::to_string(step) +
                           ": max particle norm " + std::to_string(norm) + " exceeds 1e8"),
        step_(step) {}
  int64_t step() const { return step_; }

 private:
  int64_t step_;
};

// theta - beta^{-1} G h + sqrt(2 beta^{-1} h) xi
inline Eigen::VectorXd sgld_step(const Eigen::VectorXd& theta, const Eigen::VectorXd& grad,
                                 double h, double beta_inv, const Eigen::VectorXd& noise) {
  if (!theta.allFinite() || !grad.allFinite() || !noise.allFinite())
    throw std::invalid_argument("sgld_step: non-finite input");
  Eigen::VectorXd out = theta - (beta_inv * h) * grad;
  out += std::sqrt(2.0 * beta_inv * h) * noise;
  return out;
}

// theta_i + (h/M) sum_q [K(theta_q - theta_i) G_q + gradK(theta_q - theta_i)],
// all terms from the step-k snapshot; the attraction uses the source
// particle's gradient G^{(q)}.
inline Eigen::MatrixXd svgd_step(const Eigen::MatrixXd& particles, const Eigen::MatrixXd& grads,
                                 const KernelConfig& kernel, double h) {
  const Eigen::Index m = particles.rows();
  const double scale = h / static_cast<double>(m);
  Eigen::MatrixXd out(m, particles.cols());
  Eigen::VectorXd phi(particles.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    phi.setZero();
    for (Eigen::Index q = 0; q < m; ++q) {
      const Eigen::VectorXd u = particles.row(q) - particles.row(i);
      phi += kernel_eval(kernel, u) * grads.row(q).transpose() + kernel_grad(kernel, u);
    }
    out.row(i) = particles.row(i) + scale * phi.transpose();
  }
  return out;
}

// theta_i - h beta^{-1} G_i - (h/M) sum_j K(theta_i - theta_j) G_j
//         + (h/M) sum_j gradK(theta_i - theta_j) + sqrt(2 beta^{-1} h) xi_i
//
// With zero_kernel both interaction sums are exact zero vectors, so the
// update reproduces sgld_step bit-for-bit given identical noise.
inline Eigen::MatrixXd spos_step(const Eigen::MatrixXd& particles, const Eigen::MatrixXd& grads,
                                 const KernelConfig& kernel, double h, double beta_inv,
                                 const Eigen::MatrixXd& noise) {
  const Eigen::Index m = particles.rows();
  const Eigen::Index d = particles.cols();
  const double scale = h / static_cast<double>(m);
  const double noise_scale = std::sqrt(2.0 * beta_inv * h);
  Eigen::MatrixXd out(m, d);
  Eigen::VectorXd attract(d), repulse(d);
  for (Eigen::Index i = 0; i < m; ++i) {
    attract.setZero();
    repulse.setZero();
    if (!kernel.zero_kernel) {
      for (Eigen::Index j = 0; j < m; ++j) {
        const Eigen::VectorXd u = particles.row(i) - particles.row(j);
        const double k = kernel_eval(kernel, u);
        attract += k * grads.row(j).transpose();
        repulse += (-k / (kernel.bandwidth * kernel.bandwidth)) * u;
      }
    }
    Eigen::VectorXd v = particles.row(i).transpose() - (beta_inv * h) * grads.row(i).transpose();
    v -= scale * attract;
    v += scale * repulse;
    v += noise_scale * noise.row(i).transpose();
    out.row(i) = v;
  }
  return out;
}

struct RunResult {
  std::vector<MetricRecord> records;
  ParticleSystem system;
  uint64_t eval_count = 0;
  double bandwidth_used = 0.0;
  EstimatorState estimator;
};

using MetricFn =
    std::function<std::vector<std::pair<std::string, double>>(const ParticleSystem&)>;
using RecordSink = std::function<void(const MetricRecord&)>;

// init -> loop { minibatches, estimates, dynamics step, post_step_update,
// record }. Deterministic under a fixed seed: every randomness source is a
// counter-based stream derived from (seed, particle label, purpose). The
// optional sink sees each record as it is produced, so callers can stream
// traces to disk and keep the partial prefix when a run diverges.
inline RunResult run(const Model& model, const SamplerConfig& cfg, int64_t iterations,
                     int64_t record_every, const MetricFn& metric_fn, uint64_t seed,
                     const RecordSink& sink = nullptr) {
  cfg.validate();
  if (iterations < 0) throw std::invalid_argument("run: iterations must be >= 0");
  if (record_every < 1) throw std::invalid_argument("run: record_every must be >= 1");

  const Eigen::Index m = cfg.particles;
  const Eigen::Index d = model.dim();
  const Eigen::Index n = model.n();
  const int batch = cfg.estimator.batch_size;

  std::vector<uint64_t> labels(m);
  for (Eigen::Index i = 0; i < m; ++i)
    labels[i] = cfg.stream_labels ? (*cfg.stream_labels)[i] : static_cast<uint64_t>(i);

  ParticleSystem sys;
  sys.rng_seed = seed;
  if (cfg.init_positions) {
    if (cfg.init_positions->rows() != m || cfg.init_positions->cols() != d)
      throw std::invalid_argument("run: init_positions shape mismatch");
    sys.positions = *cfg.init_positions;
  } else {
    sys.positions.resize(m, d);
    for (Eigen::Index i = 0; i < m; ++i) {
      RngStream init_stream(seed, labels[i], StreamPurpose::Init);
      for (Eigen::Index c = 0; c < d; ++c) sys.positions(i, c) = init_stream.normal();
    }
  }

  KernelConfig kernel = cfg.kernel;
  if (kernel.mode == BandwidthMode::MedianHeuristic && !kernel.zero_kernel)
    kernel.bandwidth = median_bandwidth(sys.positions);  // once, at initialization

  EstimatorState state = init_estimator(cfg.estimator, model, sys.positions);

  std::vector<RngStream> minibatch_streams, noise_streams;
  minibatch_streams.reserve(m);
  noise_streams.reserve(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    minibatch_streams.emplace_back(seed, labels[i], StreamPurpose::Minibatch);
    noise_streams.emplace_back(seed, labels[i], StreamPurpose::Noise);
  }
  RngStream shared_minibatch_stream(seed, ~uint64_t{0}, StreamPurpose::Minibatch);
  RngStream epoch_stream(seed, ~uint64_t{0}, StreamPurpose::Epoch);

  RunResult result;
  const double pass_denom = static_cast<double>(n) * static_cast<double>(m);
  auto record = [&]() {
    MetricRecord rec;
    rec.step = sys.step;
    rec.data_passes = static_cast<double>(state.eval_counter()) / pass_denom;
    rec.wall_time_s = 0.0;  // deterministic placeholder; wall time lives in sidecars
    if (metric_fn) rec.values = metric_fn(sys);
    if (sink) sink(rec);
    result.records.push_back(std::move(rec));
  };
  record();

  std::vector<MinibatchDraw> draws(m);
  std::vector<Eigen::MatrixXd> fresh(m, Eigen::MatrixXd(batch, d));
  Eigen::MatrixXd grads(m, d), noise(m, d), pre_positions;

  for (int64_t k = 0; k < iterations; ++k) {
    if (cfg.shared_minibatch) {
      draws[0] = sample_minibatch(shared_minibatch_stream, n, batch);
      for (Eigen::Index i = 1; i < m; ++i) draws[i] = draws[0];
    } else {
      for (Eigen::Index i = 0; i < m; ++i)
        draws[i] = sample_minibatch(minibatch_streams[i], n, batch);
    }

    for (Eigen::Index i = 0; i < m; ++i)
      grads.row(i) = estimate(state, model, sys.positions.row(i), i, draws[i], &fresh[i]);

    pre_positions = sys.positions;
    switch (cfg.dynamics) {
      case Dynamics::SGLD: {
        for (Eigen::Index i = 0; i < m; ++i)
          for (Eigen::Index c = 0; c < d; ++c) noise(i, c) = noise_streams[i].normal();
        for (Eigen::Index i = 0; i < m; ++i)
          sys.positions.row(i) = sgld_step(pre_positions.row(i), grads.row(i), cfg.step_size,
                                           cfg.beta_inv, noise.row(i));
        break;
      }
      case Dynamics::SVGD:
        sys.positions = svgd_step(pre_positions, grads, kernel, cfg.step_size);
        break;
      case Dynamics::SPOS: {
        for (Eigen::Index i = 0; i < m; ++i)
          for (Eigen::Index c = 0; c < d; ++c) noise(i, c) = noise_streams[i].normal();
        sys.positions =
            spos_step(pre_positions, grads, kernel, cfg.step_size, cfg.beta_inv, noise);
        break;
      }
    }
    sys.step = k + 1;

    post_step_update(state, model, pre_positions, fresh, draws, k, epoch_stream, sys.positions);

    if (!sys.positions.allFinite())
      throw DivergenceError(sys.step, std::numeric_limits<double>::infinity());
    const double max_norm = sys.positions.rowwise().norm().maxCoeff();
    if (max_norm > 1e8) throw DivergenceError(sys.step, max_norm);

    if ((k + 1) % record_every == 0 || k + 1 == iterations) record();
  }

  result.system = std::move(sys);
  result.eval_count = state.eval_counter();
  result.bandwidth_used = kernel.zero_kernel ? 0.0 : kernel.bandwidth;
  result.estimator = std::move(state);
  return result;
}

}  // namespace spos
