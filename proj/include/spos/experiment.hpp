#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "spos/data.hpp"
#include "spos/metrics.hpp"
#include "spos/model.hpp"
#include "spos/sampler.hpp"
#include "spos/svg.hpp"

namespace spos {

// ---------------------------------------------------------------------------
// Flat key = value configuration ('#' starts a comment).
// ---------------------------------------------------------------------------

class ConfigMap {
 public:
  static ConfigMap parse_text(const std::string& text, const std::string& origin = "<text>") {
    ConfigMap cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const std::string t = data_detail::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument(origin + ":" + std::to_string(line_no) +
                                    ": expected 'key = value'");
      const std::string key = data_detail::trim(t.substr(0, eq));
      const std::string value = data_detail::trim(t.substr(eq + 1));
      if (key.empty())
        throw std::invalid_argument(origin + ":" + std::to_string(line_no) + ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static ConfigMap parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str(), path);
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  bool operator==(const ConfigMap& other) const { return values_ == other.values_; }

 private:
  std::map<std::string, std::string> values_;
};

namespace experiment_detail {

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "name", "model", "dataset", "format", "label_column", "prior_precision",
      "synthetic_mu", "synthetic_d", "synthetic_n", "synthetic_seed",
      "split_fraction", "split_seed", "standardize", "subsample_rows", "subsample_seed",
      "dynamics", "step_size", "beta_inv",
      "kernel_bandwidth", "kernel_mode", "zero_kernel",
      "estimator", "batch_size", "epoch_length", "anchor_batch",
      "particles", "iterations", "seeds", "seed_base",
      "record_every", "grid_step", "out_dir", "plot_metric", "svg_log_y",
      "shared_minibatch", "wall_time_mode",
  };
  return keys;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : s) {
    if (c == ',') {
      out.push_back(data_detail::trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  const std::string last = data_detail::trim(cur);
  if (!last.empty() || !out.empty()) out.push_back(last);
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace experiment_detail

// ---------------------------------------------------------------------------
// Experiment configuration: raw map plus resolved, validated fields.
// Precedence is flag > file > default; flags are applied by overwriting map
// entries before resolution.
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  ConfigMap map;

  std::string name;
  ModelKind model_kind = ModelKind::LogNormalMean;
  std::string dataset_path;  // empty selects the synthetic generator
  std::string format;        // "csv" or "libsvm"
  std::string label_column = "label";
  double prior_precision = 1.0;
  Eigen::VectorXd synthetic_mu;
  int64_t synthetic_n = 1000;
  uint64_t synthetic_seed = 0;
  double split_fraction = 0.8;
  uint64_t split_seed = 0;
  bool do_standardize = true;
  int64_t subsample_rows = 0;  // 0 = off
  uint64_t subsample_seed = 0;

  Dynamics dynamics = Dynamics::SPOS;
  double step_size = 0.0;
  double beta_inv = 1.0;
  double kernel_bandwidth = 1.0;
  BandwidthMode kernel_mode = BandwidthMode::Fixed;
  bool zero_kernel = false;

  EstimatorKind estimator = EstimatorKind::Plain;
  int batch_size = 15;
  int epoch_length = 0;  // 0 = auto (about one pass per epoch)
  int anchor_batch = 0;  // 0 = auto (N/10)

  int particles = 50;
  int64_t iterations = 0;
  std::vector<uint64_t> seeds = {0};
  uint64_t seed_base = 0;
  int64_t record_every = 0;  // 0 = auto (about 0.1 data passes)
  double grid_step = 0.1;
  std::string out_dir = "out";
  std::string plot_metric;  // default depends on the model kind
  bool svg_log_y = false;
  bool shared_minibatch = false;
  bool measured_wall_time = false;
};

// Collects every validation failure instead of stopping at the first.
inline ExperimentConfig resolve_config(const ConfigMap& map, std::vector<std::string>& errors) {
  ExperimentConfig cfg;
  cfg.map = map;

  for (const auto& [key, value] : map.entries()) {
    (void)value;
    if (!experiment_detail::known_keys().count(key)) errors.push_back("unknown key '" + key + "'");
  }

  auto fail = [&errors](const std::string& msg) { errors.push_back(msg); };

  auto get_double = [&](const std::string& key, double fallback) {
    if (!map.has(key)) return fallback;
    try {
      return data_detail::parse_number(map.get_string(key, ""), "key '" + key + "'");
    } catch (const std::exception& e) {
      fail(e.what());
      return fallback;
    }
  };
  auto get_int = [&](const std::string& key, int64_t fallback) {
    const double v = get_double(key, static_cast<double>(fallback));
    if (v != std::floor(v)) fail("key '" + key + "': expected an integer");
    return static_cast<int64_t>(v);
  };
  auto get_bool = [&](const std::string& key, bool fallback) {
    if (!map.has(key)) return fallback;
    const std::string v = map.get_string(key, "");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail("key '" + key + "': expected true/false");
    return fallback;
  };

  const std::string model = map.get_string("model", "");
  if (model == "gaussian_mean") cfg.model_kind = ModelKind::GaussianMean;
  else if (model == "lognormal_mean") cfg.model_kind = ModelKind::LogNormalMean;
  else if (model == "logistic_regression") cfg.model_kind = ModelKind::LogisticRegression;
  else fail("key 'model': expected gaussian_mean|lognormal_mean|logistic_regression, got '" +
            model + "'");

  cfg.dataset_path = map.get_string("dataset", "");
  cfg.format = map.get_string("format", "");
  if (cfg.format.empty() && !cfg.dataset_path.empty())
    cfg.format = cfg.dataset_path.size() > 4 &&
                         cfg.dataset_path.substr(cfg.dataset_path.size() - 4) == ".csv"
                     ? "csv"
                     : "libsvm";
  if (!cfg.format.empty() && cfg.format != "csv" && cfg.format != "libsvm")
    fail("key 'format': expected csv|libsvm");
  cfg.label_column = map.get_string("label_column", "label");
  cfg.prior_precision = get_double("prior_precision", 1.0);
  if (cfg.prior_precision < 0) fail("key 'prior_precision': must be >= 0");

  const auto d = get_int("synthetic_d", 10);
  if (d < 1) fail("key 'synthetic_d': must be >= 1");
  const auto mu_list = experiment_detail::split_list(map.get_string("synthetic_mu", "1"));
  try {
    if (mu_list.size() == 1) {
      cfg.synthetic_mu = Eigen::VectorXd::Constant(
          std::max<int64_t>(d, 1),
          data_detail::parse_number(mu_list[0], "key 'synthetic_mu'"));
    } else {
      cfg.synthetic_mu.resize(static_cast<Eigen::Index>(mu_list.size()));
      for (size_t i = 0; i < mu_list.size(); ++i)
        cfg.synthetic_mu(static_cast<Eigen::Index>(i)) =
            data_detail::parse_number(mu_list[i], "key 'synthetic_mu'");
      if (map.has("synthetic_d") && d != static_cast<int64_t>(mu_list.size()))
        fail("key 'synthetic_d': conflicts with the length of synthetic_mu");
    }
  } catch (const std::exception& e) {
    fail(e.what());
    cfg.synthetic_mu = Eigen::VectorXd::Ones(1);
  }
  cfg.synthetic_n = get_int("synthetic_n", 1000);
  if (cfg.synthetic_n < 1) fail("key 'synthetic_n': must be >= 1");
  cfg.synthetic_seed = static_cast<uint64_t>(get_int("synthetic_seed", 0));

  cfg.split_fraction = get_double("split_fraction", 0.8);
  if (!(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0))
    fail("key 'split_fraction': must be in (0,1)");
  cfg.split_seed = static_cast<uint64_t>(get_int("split_seed", 0));
  cfg.do_standardize = get_bool("standardize", true);
  cfg.subsample_rows = get_int("subsample_rows", 0);
  if (cfg.subsample_rows < 0) fail("key 'subsample_rows': must be >= 0");
  cfg.subsample_seed = static_cast<uint64_t>(get_int("subsample_seed", 0));

  const std::string dyn = map.get_string("dynamics", "spos");
  if (dyn == "spos") cfg.dynamics = Dynamics::SPOS;
  else if (dyn == "sgld") cfg.dynamics = Dynamics::SGLD;
  else if (dyn == "svgd") cfg.dynamics = Dynamics::SVGD;
  else fail("key 'dynamics': expected spos|sgld|svgd, got '" + dyn + "'");

  cfg.step_size = get_double("step_size", 0.0);
  if (!(cfg.step_size > 0.0)) fail("key 'step_size': required and must be > 0");
  cfg.beta_inv = get_double("beta_inv", 1.0);
  if (cfg.dynamics != Dynamics::SVGD && !(cfg.beta_inv > 0.0))
    fail("key 'beta_inv': must be > 0");

  cfg.kernel_bandwidth = get_double("kernel_bandwidth", 1.0);
  const std::string kmode = map.get_string("kernel_mode", "fixed");
  if (kmode == "fixed") cfg.kernel_mode = BandwidthMode::Fixed;
  else if (kmode == "median") cfg.kernel_mode = BandwidthMode::MedianHeuristic;
  else fail("key 'kernel_mode': expected fixed|median");
  cfg.zero_kernel = get_bool("zero_kernel", false);
  if (!cfg.zero_kernel && cfg.kernel_mode == BandwidthMode::Fixed && !(cfg.kernel_bandwidth > 0.0))
    fail("key 'kernel_bandwidth': must be > 0");

  const std::string est = map.get_string("estimator", "plain");
  if (est == "plain") cfg.estimator = EstimatorKind::Plain;
  else if (est == "saga") cfg.estimator = EstimatorKind::SAGA;
  else if (est == "svrg1") cfg.estimator = EstimatorKind::SVRG_I;
  else if (est == "svrg2") cfg.estimator = EstimatorKind::SVRG_II;
  else if (est == "svrgplus") cfg.estimator = EstimatorKind::SVRGPlus;
  else fail("key 'estimator': expected plain|saga|svrg1|svrg2|svrgplus, got '" + est + "'");

  cfg.batch_size = static_cast<int>(get_int("batch_size", 15));
  if (cfg.batch_size < 1) fail("key 'batch_size': must be >= 1");
  cfg.epoch_length = static_cast<int>(get_int("epoch_length", 0));
  if (cfg.epoch_length < 0) fail("key 'epoch_length': must be >= 1 (or 0 for auto)");
  cfg.anchor_batch = static_cast<int>(get_int("anchor_batch", 0));
  if (cfg.anchor_batch < 0) fail("key 'anchor_batch': must be >= 1 (or 0 for auto)");

  cfg.particles = static_cast<int>(get_int("particles", 50));
  if (cfg.particles < 1) fail("key 'particles': must be >= 1");
  cfg.iterations = get_int("iterations", -1);
  if (cfg.iterations < 0) fail("key 'iterations': required and must be >= 0");

  if (map.has("seeds")) {
    cfg.seeds.clear();
    for (const auto& tok : experiment_detail::split_list(map.get_string("seeds", ""))) {
      try {
        cfg.seeds.push_back(
            static_cast<uint64_t>(data_detail::parse_number(tok, "key 'seeds'")));
      } catch (const std::exception& e) {
        fail(e.what());
      }
    }
    if (cfg.seeds.empty()) fail("key 'seeds': need at least one seed");
  }
  cfg.seed_base = static_cast<uint64_t>(get_int("seed_base", 0));
  cfg.record_every = get_int("record_every", 0);
  if (cfg.record_every < 0) fail("key 'record_every': must be >= 1 (or 0 for auto)");
  cfg.grid_step = get_double("grid_step", 0.1);
  if (!(cfg.grid_step > 0.0)) fail("key 'grid_step': must be > 0");
  cfg.out_dir = map.get_string("out_dir", "out");
  cfg.plot_metric = map.get_string("plot_metric", "");
  cfg.svg_log_y = get_bool("svg_log_y", false);
  cfg.shared_minibatch = get_bool("shared_minibatch", false);
  const std::string wtm = map.get_string("wall_time_mode", "zero");
  if (wtm == "zero") cfg.measured_wall_time = false;
  else if (wtm == "measured") cfg.measured_wall_time = true;
  else fail("key 'wall_time_mode': expected zero|measured");

  cfg.name = map.get_string("name", est + "-" + dyn);

  if (cfg.model_kind == ModelKind::LogisticRegression && cfg.dataset_path.empty())
    fail("logistic_regression requires a 'dataset' file");
  if (!cfg.dataset_path.empty() && !std::filesystem::exists(cfg.dataset_path))
    fail("dataset file '" + cfg.dataset_path + "' does not exist");

  return cfg;
}

inline ExperimentConfig resolve_config_or_throw(const ConfigMap& map) {
  std::vector<std::string> errors;
  ExperimentConfig cfg = resolve_config(map, errors);
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw std::invalid_argument(msg);
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Prepared experiment: model, ground truth, metric set.
// ---------------------------------------------------------------------------

struct PreparedExperiment {
  ExperimentConfig cfg;
  std::shared_ptr<const Model> model;
  std::optional<Dataset> test_set;
  std::optional<ClosedFormPosterior> posterior;
  std::vector<std::string> metric_names;
  int epoch_length = 1;
  int anchor_batch = 1;
  int64_t record_every = 1;

  SamplerConfig sampler_config() const {
    SamplerConfig sc;
    sc.dynamics = cfg.dynamics;
    sc.step_size = cfg.step_size;
    sc.beta_inv = cfg.beta_inv;
    sc.kernel.bandwidth = cfg.kernel_bandwidth;
    sc.kernel.mode = cfg.kernel_mode;
    sc.kernel.zero_kernel = cfg.zero_kernel;
    sc.estimator.kind = cfg.estimator;
    sc.estimator.batch_size = cfg.batch_size;
    sc.estimator.epoch_length = epoch_length;
    sc.estimator.anchor_batch = anchor_batch;
    sc.particles = cfg.particles;
    sc.shared_minibatch = cfg.shared_minibatch;
    return sc;
  }

  MetricFn metric_fn() const {
    if (cfg.model_kind == ModelKind::LogisticRegression) {
      const Dataset test = *test_set;
      return [test](const ParticleSystem& sys) {
        const auto [acc, ll] = blr_test_metrics(sys.positions, test);
        return std::vector<std::pair<std::string, double>>{{"accuracy", acc},
                                                           {"avg_loglik", ll}};
      };
    }
    const ClosedFormPosterior post = *posterior;
    return [post](const ParticleSystem& sys) {
      const Eigen::VectorXd mean = sys.positions.colwise().mean();
      Eigen::MatrixXd cov;
      if (sys.particles() >= 2) {
        const Eigen::MatrixXd centered = sys.positions.rowwise() - mean.transpose();
        cov = centered.transpose() * centered / static_cast<double>(sys.particles() - 1);
      } else {
        cov = Eigen::MatrixXd::Zero(sys.dim(), sys.dim());
      }
      return std::vector<std::pair<std::string, double>>{
          {"log_mse", log_mse_mean(mean, post.mean)},
          {"w2_gauss", w2_gaussian(mean, cov, post.mean, post.covariance)}};
    };
  }
};

inline Dataset make_gaussian_data(const Eigen::VectorXd& mu_true, Eigen::Index n_rows,
                                  uint64_t seed) {
  RngStream stream(seed, 1, StreamPurpose::Data);
  Dataset ds;
  ds.name = "gaussian-synthetic";
  ds.features.resize(n_rows, mu_true.size());
  for (Eigen::Index j = 0; j < n_rows; ++j)
    for (Eigen::Index c = 0; c < mu_true.size(); ++c)
      ds.features(j, c) = mu_true(c) + stream.normal();
  return ds;
}

inline PreparedExperiment prepare_experiment(const ExperimentConfig& cfg) {
  PreparedExperiment prep;
  prep.cfg = cfg;

  Dataset raw;
  if (!cfg.dataset_path.empty()) {
    const bool labeled = cfg.model_kind == ModelKind::LogisticRegression;
    raw = cfg.format == "csv" ? load_csv(cfg.dataset_path, labeled ? cfg.label_column : "")
                              : load_libsvm(cfg.dataset_path);
    if (!labeled) raw.labels.reset();
  } else if (cfg.model_kind == ModelKind::LogNormalMean) {
    raw = make_lognormal_data(cfg.synthetic_mu, cfg.synthetic_n, cfg.synthetic_seed);
  } else if (cfg.model_kind == ModelKind::GaussianMean) {
    raw = make_gaussian_data(cfg.synthetic_mu, cfg.synthetic_n, cfg.synthetic_seed);
  }
  if (cfg.subsample_rows > 0) raw = subsample(raw, cfg.subsample_rows, cfg.subsample_seed);

  if (cfg.model_kind == ModelKind::LogisticRegression) {
    auto [train, test] = split(raw, SplitSpec{cfg.split_fraction, cfg.split_seed});
    if (cfg.do_standardize) {
      auto [strain, stest, tf] = standardize(train, test);
      train = std::move(strain);
      test = std::move(stest);
    }
    prep.model = std::make_shared<Model>(cfg.model_kind, train, cfg.prior_precision);
    prep.test_set = std::move(test);
    prep.metric_names = {"accuracy", "avg_loglik"};
  } else {
    prep.model = std::make_shared<Model>(cfg.model_kind, raw, cfg.prior_precision);
    prep.posterior = prep.model->closed_form_posterior();
    prep.metric_names = {"log_mse", "w2_gauss"};
  }

  const auto n = prep.model->n();
  if (cfg.batch_size > n)
    throw std::invalid_argument("batch_size B = " + std::to_string(cfg.batch_size) +
                                " exceeds N = " + std::to_string(n));
  prep.epoch_length = cfg.epoch_length > 0
                          ? cfg.epoch_length
                          : std::max<int>(1, static_cast<int>(n / cfg.batch_size));
  prep.anchor_batch =
      cfg.anchor_batch > 0 ? cfg.anchor_batch : std::max<int>(1, static_cast<int>(n / 10));
  if (prep.anchor_batch > n)
    throw std::invalid_argument("anchor_batch b = " + std::to_string(prep.anchor_batch) +
                                " exceeds N = " + std::to_string(n));
  if (cfg.record_every > 0) {
    prep.record_every = cfg.record_every;
  } else {
    // about one record per 0.1 data passes
    const double evals_per_step =
        static_cast<double>(cfg.batch_size) *
        (cfg.estimator == EstimatorKind::Plain || cfg.estimator == EstimatorKind::SAGA ? 1.0 : 2.0);
    prep.record_every =
        std::max<int64_t>(1, static_cast<int64_t>(0.1 * static_cast<double>(n) / evals_per_step));
  }
  return prep;
}

// ---------------------------------------------------------------------------
// Trace CSV output.
// ---------------------------------------------------------------------------

struct TraceResult {
  uint64_t seed = 0;
  std::string path;
  std::vector<MetricRecord> records;
  double wall_seconds = 0.0;
  bool diverged = false;
  std::string error;
};

namespace experiment_detail {

inline std::string csv_header(const std::vector<std::string>& metric_names) {
  std::string header = "step,data_passes,wall_time_s";
  for (const auto& m : metric_names) header += "," + m;
  return header;
}

inline std::string csv_row(const MetricRecord& rec, bool measured_wall, double wall_seconds) {
  std::string row = std::to_string(rec.step);
  row += ",";
  row += format_double(rec.data_passes);
  char wall[32];
  std::snprintf(wall, sizeof(wall), "%.6f", measured_wall ? wall_seconds : 0.0);
  row += ",";
  row += wall;
  for (const auto& [name, value] : rec.values) {
    (void)name;
    if (!std::isfinite(value))
      throw std::runtime_error("metric '" + name + "' is non-finite at step " +
                               std::to_string(rec.step));
    row += ",";
    row += format_double(value);
  }
  return row;
}

}  // namespace experiment_detail

// Runs one seed of a prepared experiment and streams the trace to
// <out_dir>/<name>_seed<seed>.csv. On divergence the partial file is kept,
// a '# DIVERGED ...' marker is appended, and the error is reported.
inline TraceResult run_one_trace(const PreparedExperiment& prep, uint64_t seed_value) {
  TraceResult out;
  out.seed = seed_value;
  std::filesystem::create_directories(prep.cfg.out_dir);
  out.path = (std::filesystem::path(prep.cfg.out_dir) /
              (prep.cfg.name + "_seed" + std::to_string(seed_value) + ".csv"))
                 .string();

  std::ofstream file(out.path);
  if (!file) throw std::runtime_error("cannot open trace file '" + out.path + "'");
  file << experiment_detail::csv_header(prep.metric_names) << "\n";

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&t0]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  const uint64_t run_seed = derive_seed(prep.cfg.seed_base,
                                        hash_string(prep.cfg.name), seed_value);
  const RecordSink sink = [&](const MetricRecord& rec) {
    file << experiment_detail::csv_row(rec, prep.cfg.measured_wall_time, elapsed()) << "\n";
  };

  try {
    RunResult result = run(*prep.model, prep.sampler_config(), prep.cfg.iterations,
                           prep.record_every, prep.metric_fn(), run_seed, sink);
    out.records = std::move(result.records);
  } catch (const DivergenceError& e) {
    file << "# DIVERGED " << e.what() << "\n";
    out.diverged = true;
    out.error = e.what();
  }
  out.wall_seconds = elapsed();
  file.close();

  std::ofstream side(out.path + ".time.txt");
  side << experiment_detail::format_double(out.wall_seconds) << "\n";
  return out;
}

inline int env_thread_count() {
  if (const char* env = std::getenv("SPOS_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs independent jobs on up to `threads` workers. Each job writes only its
// own files, so parallel and serial execution produce identical outputs.
inline void run_jobs(std::vector<std::function<void()>>& jobs, int threads) {
  if (threads <= 1 || jobs.size() <= 1) {
    for (auto& job : jobs) job();
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> workers;
  const int count = std::min<int>(threads, static_cast<int>(jobs.size()));
  std::vector<std::exception_ptr> errors(jobs.size());
  for (int w = 0; w < count; ++w) {
    workers.emplace_back([&]() {
      while (true) {
        const size_t idx = next.fetch_add(1);
        if (idx >= jobs.size()) return;
        try {
          jobs[idx]();
        } catch (...) {
          errors[idx] = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Summaries: interpolate each seed's trace onto a shared data-pass grid and
// report mean +/- sample std per metric.
// ---------------------------------------------------------------------------

struct SummaryGrid {
  std::vector<double> grid;                                    // data passes
  std::vector<std::string> metric_names;
  std::vector<std::vector<double>> mean;                       // [metric][grid]
  std::vector<std::vector<double>> stddev;                     // [metric][grid]
};

namespace experiment_detail {

inline double interp_at(const std::vector<MetricRecord>& records, size_t metric_idx, double pass) {
  if (records.empty()) throw std::invalid_argument("interp_at: empty trace");
  auto value = [&](size_t r) { return records[r].values[metric_idx].second; };
  if (pass <= records.front().data_passes) return value(0);
  if (pass >= records.back().data_passes) return value(records.size() - 1);
  size_t lo = 0, hi = records.size() - 1;
  while (hi - lo > 1) {
    const size_t mid = (lo + hi) / 2;
    if (records[mid].data_passes <= pass) lo = mid;
    else hi = mid;
  }
  const double x0 = records[lo].data_passes, x1 = records[hi].data_passes;
  if (x1 == x0) return value(lo);
  const double t = (pass - x0) / (x1 - x0);
  return value(lo) + t * (value(hi) - value(lo));
}

}  // namespace experiment_detail

inline SummaryGrid summarize_traces(const std::vector<TraceResult>& traces,
                                    const std::vector<std::string>& metric_names,
                                    double grid_step) {
  SummaryGrid out;
  out.metric_names = metric_names;
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  for (const auto& t : traces) {
    if (t.records.empty()) continue;
    lo = std::max(lo, t.records.front().data_passes);
    hi = std::min(hi, t.records.back().data_passes);
  }
  if (!std::isfinite(hi) || hi < lo) return out;
  for (double p = std::ceil(lo / grid_step) * grid_step; p <= hi + 1e-12; p += grid_step)
    out.grid.push_back(p);
  if (out.grid.empty()) out.grid.push_back(lo);

  out.mean.assign(metric_names.size(), std::vector<double>(out.grid.size(), 0.0));
  out.stddev.assign(metric_names.size(), std::vector<double>(out.grid.size(), 0.0));
  std::vector<const TraceResult*> ok;
  for (const auto& t : traces)
    if (!t.records.empty()) ok.push_back(&t);
  if (ok.empty()) return out;

  for (size_t m = 0; m < metric_names.size(); ++m) {
    for (size_t g = 0; g < out.grid.size(); ++g) {
      double sum = 0.0, sum_sq = 0.0;
      for (const auto* t : ok) {
        const double v = experiment_detail::interp_at(t->records, m, out.grid[g]);
        sum += v;
        sum_sq += v * v;
      }
      const double n = static_cast<double>(ok.size());
      const double mean = sum / n;
      out.mean[m][g] = mean;
      out.stddev[m][g] =
          ok.size() > 1 ? std::sqrt(std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0))) : 0.0;
    }
  }
  return out;
}

struct RunOutputs {
  std::vector<TraceResult> traces;
  SummaryGrid summary;
  std::string summary_path;
};

inline RunOutputs cmd_run(const ExperimentConfig& cfg) {
  const PreparedExperiment prep = prepare_experiment(cfg);
  RunOutputs out;
  out.traces.resize(cfg.seeds.size());

  // reproducibility sidecar: the exact configuration that produced the runs
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream meta(std::filesystem::path(cfg.out_dir) / (cfg.name + "_config.txt"));
  meta << cfg.map.serialize();
  meta.close();

  std::vector<std::function<void()>> jobs;
  for (size_t s = 0; s < cfg.seeds.size(); ++s)
    jobs.emplace_back([&prep, &out, s, &cfg]() { out.traces[s] = run_one_trace(prep, cfg.seeds[s]); });
  run_jobs(jobs, env_thread_count());

  for (const auto& t : out.traces)
    if (t.diverged) throw std::runtime_error("run '" + cfg.name + "' diverged: " + t.error);

  out.summary = summarize_traces(out.traces, prep.metric_names, cfg.grid_step);
  out.summary_path =
      (std::filesystem::path(cfg.out_dir) / (cfg.name + "_summary.csv")).string();
  std::ofstream file(out.summary_path);
  std::string header = "data_passes";
  for (const auto& m : prep.metric_names) header += "," + m + "_mean," + m + "_std";
  file << header << "\n";
  for (size_t g = 0; g < out.summary.grid.size(); ++g) {
    file << experiment_detail::format_double(out.summary.grid[g]);
    for (size_t m = 0; m < prep.metric_names.size(); ++m)
      file << "," << experiment_detail::format_double(out.summary.mean[m][g]) << ","
           << experiment_detail::format_double(out.summary.stddev[m][g]);
    file << "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// compare: shared-model configs, combined CSV plus an SVG chart.
// ---------------------------------------------------------------------------

struct CompareOutputs {
  std::vector<RunOutputs> runs;
  std::string combined_csv_path;
  std::string svg_path;
};

inline CompareOutputs cmd_compare(const std::vector<ExperimentConfig>& configs,
                                  const std::string& stem = "compare") {
  if (configs.empty()) throw std::invalid_argument("cmd_compare: no configurations");

  auto model_signature = [](const ExperimentConfig& c) {
    std::string sig = to_string(c.model_kind) + "|" + c.dataset_path + "|" +
                      std::to_string(c.prior_precision) + "|" +
                      std::to_string(c.synthetic_n) + "|" + std::to_string(c.synthetic_seed) +
                      "|" + std::to_string(c.split_seed) + "|" +
                      std::to_string(c.subsample_rows);
    for (Eigen::Index i = 0; i < c.synthetic_mu.size(); ++i)
      sig += "," + std::to_string(c.synthetic_mu(i));
    return sig;
  };
  for (const auto& c : configs) {
    if (model_signature(c) != model_signature(configs.front()))
      throw std::invalid_argument("cmd_compare: config '" + c.name +
                                  "' does not share the model of '" + configs.front().name + "'");
    if (c.out_dir != configs.front().out_dir)
      throw std::invalid_argument("cmd_compare: configs must share out_dir");
  }

  CompareOutputs out;
  for (const auto& c : configs) out.runs.push_back(cmd_run(c));

  const auto& metric_names =
      configs.front().model_kind == ModelKind::LogisticRegression
          ? std::vector<std::string>{"accuracy", "avg_loglik"}
          : std::vector<std::string>{"log_mse", "w2_gauss"};

  std::filesystem::create_directories(configs.front().out_dir);
  out.combined_csv_path =
      (std::filesystem::path(configs.front().out_dir) / (stem + "_combined.csv")).string();
  std::ofstream file(out.combined_csv_path);
  std::string header = "series,data_passes";
  for (const auto& m : metric_names) header += "," + m + "_mean," + m + "_std";
  file << header << "\n";
  for (size_t r = 0; r < out.runs.size(); ++r) {
    const auto& summary = out.runs[r].summary;
    for (size_t g = 0; g < summary.grid.size(); ++g) {
      file << configs[r].name << "," << experiment_detail::format_double(summary.grid[g]);
      for (size_t m = 0; m < metric_names.size(); ++m)
        file << "," << experiment_detail::format_double(summary.mean[m][g]) << ","
             << experiment_detail::format_double(summary.stddev[m][g]);
      file << "\n";
    }
  }
  file.close();

  std::string plot_metric = configs.front().plot_metric;
  if (plot_metric.empty()) plot_metric = metric_names.front();
  size_t metric_idx = metric_names.size();
  for (size_t m = 0; m < metric_names.size(); ++m)
    if (metric_names[m] == plot_metric) metric_idx = m;
  if (metric_idx == metric_names.size())
    throw std::invalid_argument("cmd_compare: unknown plot_metric '" + plot_metric + "'");

  std::vector<SvgSeries> series;
  for (size_t r = 0; r < out.runs.size(); ++r) {
    SvgSeries s;
    s.label = configs[r].name;
    s.x = out.runs[r].summary.grid;
    s.y = out.runs[r].summary.mean[metric_idx];
    series.push_back(std::move(s));
  }
  out.svg_path = (std::filesystem::path(configs.front().out_dir) / (stem + ".svg")).string();
  write_line_chart(out.svg_path, stem, "data passes", plot_metric, series,
                   configs.front().svg_log_y);
  return out;
}

// ---------------------------------------------------------------------------
// check: gradient FD, enumeration unbiasedness, SGLD reduction.
// ---------------------------------------------------------------------------

inline int cmd_check(const ExperimentConfig& cfg, bool corrupt_gradient, std::ostream& os) {
  const PreparedExperiment prep = prepare_experiment(cfg);
  const Model& model = *prep.model;
  bool all_ok = true;

  {  // finite differences vs analytic gradient
    RngStream rng(1234, 0, StreamPurpose::Data);
    double max_rel = 0.0;
    for (int t = 0; t < 20; ++t) {
      Eigen::VectorXd theta(model.dim());
      for (Eigen::Index c = 0; c < model.dim(); ++c) theta(c) = rng.normal();
      Eigen::VectorXd grad = model.full_grad(theta);
      if (corrupt_gradient) grad(0) += 1e-3 * std::max(1.0, grad.cwiseAbs().maxCoeff());
      const double eps = 1e-5;
      Eigen::VectorXd fd(model.dim());
      for (Eigen::Index c = 0; c < model.dim(); ++c) {
        Eigen::VectorXd up = theta, dn = theta;
        up(c) += eps;
        dn(c) -= eps;
        fd(c) = (model.potential(up) - model.potential(dn)) / (2 * eps);
      }
      max_rel = std::max(max_rel, (fd - grad).norm() / std::max(1.0, grad.norm()));
    }
    const bool ok = max_rel < 1e-5;
    all_ok &= ok;
    os << (ok ? "PASS" : "FAIL") << " gradient-fd (max relative error " << max_rel << ")\n";
  }

  {  // enumeration unbiasedness on an N=4, B=2 shadow problem
    Dataset shadow;
    const Eigen::Index rows = std::min<Eigen::Index>(4, model.n());
    shadow.features.resize(4, model.dim());
    if (model.data().labels) shadow.labels = Eigen::VectorXd(4);
    for (Eigen::Index j = 0; j < 4; ++j) {
      shadow.features.row(j) = model.data().features.row(j % rows);
      if (shadow.labels) (*shadow.labels)(j) = (*model.data().labels)(j % rows);
    }
    shadow.name = "shadow";
    const Model shadow_model(model.kind(), shadow, model.prior_precision());

    RngStream rng(77, 0, StreamPurpose::Data);
    Eigen::MatrixXd pos(1, model.dim());
    Eigen::VectorXd theta(model.dim());
    for (Eigen::Index c = 0; c < model.dim(); ++c) {
      pos(0, c) = rng.normal();
      theta(c) = rng.normal();
    }
    if (model.kind() == ModelKind::LogNormalMean) {
      pos = pos.cwiseAbs();
      theta = theta.cwiseAbs();
    }
    const Eigen::VectorXd full = shadow_model.full_grad(theta);
    const double scale = std::max(1.0, full.cwiseAbs().maxCoeff());

    double max_rel = 0.0;
    for (const auto kind : {EstimatorKind::Plain, EstimatorKind::SAGA, EstimatorKind::SVRG_I,
                            EstimatorKind::SVRG_II, EstimatorKind::SVRGPlus}) {
      EstimatorParams params;
      params.kind = kind;
      params.batch_size = 2;
      params.epoch_length = 4;
      params.anchor_batch = 2;
      EstimatorState state = init_estimator(params, shadow_model, pos);
      Eigen::VectorXd avg = Eigen::VectorXd::Zero(model.dim());
      for (int j0 = 0; j0 < 4; ++j0)
        for (int j1 = 0; j1 < 4; ++j1) {
          MinibatchDraw draw;
          draw.indices = {j0, j1};
          avg += estimate(state, shadow_model, theta, 0, draw);
        }
      avg /= 16.0;
      max_rel = std::max(max_rel, (avg - full).cwiseAbs().maxCoeff() / scale);
    }
    const bool ok = max_rel < 1e-12;
    all_ok &= ok;
    os << (ok ? "PASS" : "FAIL") << " estimator-enumeration (max relative deviation " << max_rel
       << ")\n";
  }

  {  // SPOS with zero kernel reduces to independent SGLD chains, bit-exactly
    SamplerConfig a = prep.sampler_config();
    a.dynamics = Dynamics::SPOS;
    a.kernel.zero_kernel = true;
    a.particles = std::min<Eigen::Index>(8, a.particles);
    a.estimator.batch_size = std::min<int>(a.estimator.batch_size, static_cast<int>(model.n()));
    SamplerConfig b = a;
    b.dynamics = Dynamics::SGLD;
    b.kernel.zero_kernel = false;
    const RunResult ra = run(model, a, 50, 50, nullptr, 2024);
    const RunResult rb = run(model, b, 50, 50, nullptr, 2024);
    const bool ok = ra.system.positions == rb.system.positions;
    all_ok &= ok;
    os << (ok ? "PASS" : "FAIL") << " sgld-reduction (50 steps, M=" << a.particles << ")\n";
  }

  return all_ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// constants: TheoryInputs file -> C1..C5 and per-theorem bounds.
// ---------------------------------------------------------------------------

inline TheoryInputs parse_theory_inputs(const ConfigMap& map) {
  static const std::set<std::string> keys = {
      "m_F", "L_F", "H_F", "D_F", "m_K", "L_K", "H_K", "L_gradK", "H_gradK", "D_hessK",
      "sigma", "beta_inv", "M", "alpha", "h", "B", "b", "tau", "T", "W2_0", "d", "N"};
  TheoryInputs in;
  for (const auto& [key, value] : map.entries()) {
    if (!keys.count(key)) throw std::invalid_argument("theory inputs: unknown key '" + key + "'");
    const double v = data_detail::parse_number(value, "key '" + key + "'");
    if (key == "m_F") in.m_F = v;
    else if (key == "L_F") in.L_F = v;
    else if (key == "H_F") in.H_F = v;
    else if (key == "D_F") in.D_F = v;
    else if (key == "m_K") in.m_K = v;
    else if (key == "L_K") in.L_K = v;
    else if (key == "H_K") in.H_K = v;
    else if (key == "L_gradK") in.L_gradK = v;
    else if (key == "H_gradK") in.H_gradK = v;
    else if (key == "D_hessK") in.D_hessK = v;
    else if (key == "sigma") in.sigma = v;
    else if (key == "beta_inv") in.beta_inv = v;
    else if (key == "M") in.M = v;
    else if (key == "alpha") in.alpha = v;
    else if (key == "h") in.h = v;
    else if (key == "B") in.B = v;
    else if (key == "b") in.b = v;
    else if (key == "tau") in.tau = v;
    else if (key == "T") in.T = v;
    else if (key == "W2_0") in.W2_0 = v;
    else if (key == "d") in.d = v;
    else if (key == "N") in.N = v;
  }
  return in;
}

inline int cmd_constants(const ConfigMap& map, std::ostream& os) {
  TheoryInputs in;
  try {
    in = parse_theory_inputs(map);
    const TheoryConstants c = theory_constants(in);
    os << "C1 = " << experiment_detail::format_double(c.c1) << "\n"
       << "C2 = " << experiment_detail::format_double(c.c2) << "\n"
       << "C3 = " << experiment_detail::format_double(c.c3) << "\n"
       << "C4 = " << experiment_detail::format_double(c.c4) << "\n"
       << "C5 = " << experiment_detail::format_double(c.c5) << "\n";
  } catch (const std::exception& e) {
    os << "ERROR: " << e.what() << "\n";
    return 1;
  }

  const std::vector<std::pair<EstimatorKind, std::string>> variants = {
      {EstimatorKind::SAGA, "SAGA-POS (Theorem 1)"},
      {EstimatorKind::SVRG_I, "SVRG-POS Option I (Theorem 2)"},
      {EstimatorKind::SVRG_II, "SVRG-POS Option II (Theorem 2)"},
      {EstimatorKind::SVRGPlus, "SVRG-POS+ (Theorem 3)"},
  };
  for (const auto& [kind, label] : variants) {
    os << "\n" << label << ":\n";
    try {
      const BoundBreakdown bd = bound_eval(kind, in);
      for (const auto& term : bd.terms)
        os << "  " << term.label << " = " << experiment_detail::format_double(term.value) << "\n";
      os << "  total = " << experiment_detail::format_double(bd.total) << "\n";
      if (!bd.note.empty()) os << "  note: " << bd.note << "\n";
    } catch (const PreconditionError& e) {
      os << "  REFUSED: " << e.what() << "\n";
    }
  }
  return 0;
}

}  // namespace spos
