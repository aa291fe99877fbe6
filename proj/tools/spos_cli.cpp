// Experiment driver: configure (model x dynamics x estimator) runs, emit CSV
// traces and SVG convergence plots, and run self-checks and the theory
// calculator. See README.md for the config key reference.

#include <CLI11.hpp>
#include <iostream>

#include "spos/experiment.hpp"

namespace {

spos::ConfigMap load_with_overrides(const std::string& path,
                                    const std::vector<std::string>& overrides) {
  spos::ConfigMap map = path.empty() ? spos::ConfigMap{} : spos::ConfigMap::parse_file(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    map.set(spos::data_detail::trim(kv.substr(0, eq)), spos::data_detail::trim(kv.substr(eq + 1)));
  }
  return map;
}

spos::ExperimentConfig resolve_or_report(const spos::ConfigMap& map) {
  std::vector<std::string> errors;
  spos::ExperimentConfig cfg = spos::resolve_config(map, errors);
  if (!errors.empty()) {
    std::cerr << "configuration errors:\n";
    for (const auto& e : errors) std::cerr << "  - " << e << "\n";
    throw CLI::RuntimeError(2);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic particle-optimization sampling experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  auto* cmd_run = app.add_subcommand("run", "run one experiment config over its seed list");
  cmd_run->add_option("--config", config_path, "config file (key = value lines)")->required();
  cmd_run->add_option("--set", overrides, "override a config key, e.g. --set step_size=1e-4");

  auto* cmd_compare =
      app.add_subcommand("compare", "run several configs on a shared model and plot them");
  std::vector<std::string> compare_paths;
  std::string compare_stem = "compare";
  cmd_compare->add_option("configs", compare_paths, "config files")->required()->expected(-1);
  cmd_compare->add_option("--set", overrides, "override a key in every config");
  cmd_compare->add_option("--stem", compare_stem, "basename for combined outputs");

  auto* cmd_check = app.add_subcommand("check", "run model/estimator/sampler self-checks");
  cmd_check->add_option("--config", config_path, "config file")->required();
  cmd_check->add_option("--set", overrides, "override a config key");
  bool corrupt = false;
  cmd_check->add_flag("--corrupt-gradient", corrupt,
                      "test hook: perturb the analytic gradient so the FD check must fail");

  auto* cmd_constants = app.add_subcommand("constants", "evaluate C1..C5 and the theorem bounds");
  std::string inputs_path;
  cmd_constants->add_option("--inputs", inputs_path, "theory inputs file (key = value)")
      ->required();

  auto* cmd_synth = app.add_subcommand("make-synthetic", "write a synthetic log-normal dataset");
  std::string mu_spec = "1";
  int synth_d = 10;
  int64_t synth_n = 1000;
  uint64_t synth_seed = 0;
  std::string synth_out;
  cmd_synth->add_option("--mu", mu_spec, "mean vector: scalar or comma list");
  cmd_synth->add_option("--dim", synth_d, "dimension when --mu is a scalar");
  cmd_synth->add_option("--n", synth_n, "number of rows");
  cmd_synth->add_option("--seed", synth_seed, "generator seed");
  cmd_synth->add_option("--out", synth_out, "output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_run->parsed()) {
      const auto cfg = resolve_or_report(load_with_overrides(config_path, overrides));
      const auto outputs = spos::cmd_run(cfg);
      for (const auto& t : outputs.traces)
        std::cout << "trace: " << t.path << " (" << t.records.size() << " records)\n";
      std::cout << "summary: " << outputs.summary_path << "\n";
      return 0;
    }
    if (cmd_compare->parsed()) {
      std::vector<spos::ExperimentConfig> configs;
      for (const auto& path : compare_paths)
        configs.push_back(resolve_or_report(load_with_overrides(path, overrides)));
      const auto outputs = spos::cmd_compare(configs, compare_stem);
      std::cout << "combined: " << outputs.combined_csv_path << "\n"
                << "plot: " << outputs.svg_path << "\n";
      return 0;
    }
    if (cmd_check->parsed()) {
      const auto cfg = resolve_or_report(load_with_overrides(config_path, overrides));
      return spos::cmd_check(cfg, corrupt, std::cout);
    }
    if (cmd_constants->parsed()) {
      return spos::cmd_constants(spos::ConfigMap::parse_file(inputs_path), std::cout);
    }
    if (cmd_synth->parsed()) {
      Eigen::VectorXd mu;
      const auto parts = spos::experiment_detail::split_list(mu_spec);
      if (parts.size() == 1) {
        mu = Eigen::VectorXd::Constant(synth_d,
                                       spos::data_detail::parse_number(parts[0], "--mu"));
      } else {
        mu.resize(static_cast<Eigen::Index>(parts.size()));
        for (size_t i = 0; i < parts.size(); ++i)
          mu(static_cast<Eigen::Index>(i)) = spos::data_detail::parse_number(parts[i], "--mu");
      }
      const spos::Dataset ds = spos::make_lognormal_data(mu, synth_n, synth_seed);
      std::ofstream out(synth_out);
      if (!out) throw std::runtime_error("cannot open '" + synth_out + "'");
      for (Eigen::Index c = 0; c < ds.dim(); ++c) out << (c ? "," : "") << "x" << (c + 1);
      out << "\n";
      for (Eigen::Index r = 0; r < ds.n(); ++r) {
        for (Eigen::Index c = 0; c < ds.dim(); ++c)
          out << (c ? "," : "") << spos::experiment_detail::format_double(ds.features(r, c));
        out << "\n";
      }
      std::cout << "wrote " << ds.n() << " rows to " << synth_out << "\n";
      return 0;
    }
  } catch (const CLI::RuntimeError& e) {
    return e.get_exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
