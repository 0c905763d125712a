#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pib/pib.hpp"

namespace fs = std::filesystem;
using namespace pib;
using namespace pib::harness;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string command_line;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) c.seeds = {*o.seed};
  if (!o.out.empty()) c.output = o.out;
  c.validate();
  fs::create_directories(c.output);
  return c;
}

std::string path_in(const ExperimentConfig& c, const std::string& name) { return (fs::path(c.output) / name).string(); }

void report(const std::vector<CheckResult>& checks) {
  for (const CheckResult& c : checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " = " << format_double(c.value) << " ("
              << (c.at_most ? "<= " : ">= ") << format_double(c.threshold) << ")\n";
  }
}

int finish(const ExperimentConfig& c, const std::vector<CheckResult>& checks) {
  std::ofstream os(path_in(c, "checks.csv"));
  if (!os) throw IoError("cannot write checks.csv");
  write_checks(os, checks);
  report(checks);
  std::cout << "config " << config_hash(c) << ", code " << kCodeVersion << ", output " << c.output << '\n';
  for (const CheckResult& r : checks)
    if (!r.passed) return 1;
  return 0;
}

void progress(const RunRecord& r) {
  std::cerr << r.method << " seed " << r.seed << " " << r.sweep_axis << "=" << format_double(r.sweep_value)
            << ": bits " << format_double(r.total_bits) << ", moda " << format_double(r.moda) << ", "
            << format_double(r.wall_time_s) << " s\n";
}

int cmd_train(const Options& o) {
  const ExperimentConfig c = resolve(o);
  const std::uint64_t seed = c.seeds.front();
  const RunOutput out = run_once(c, seed, c.method, c.delayed_cameras, "none", 0.0);
  emit_csv({out.record}, path_in(c, "run.csv"));
  std::ofstream log(path_in(c, "train_log.csv"));
  write_train_log(log, out.training.log);
  checkpoint::save(path_in(c, "checkpoint.txt"), out.training.params);
  write_provenance(path_in(c, "provenance.json"), c, o.command_line);
  progress(out.record);
  std::vector<CheckResult> checks;
  if (c.training.final_grad_check) {
    checks.push_back(make_check("final_grad_check_max_error", out.training.grad_check_error, 1e-4));
  }
  checks.push_back(make_check("parameters_finite", out.training.params.all_finite() ? 1.0 : 0.0, 1.0, false));
  return finish(c, checks);
}

std::vector<double> means(const std::vector<RunRecord>& rs, const std::vector<double>& values, const std::string& method,
                          double RunRecord::*field) {
  std::vector<double> out;
  for (double v : values) out.push_back(mean_of(select(rs, method, v), field));
  return out;
}

std::vector<CheckResult> rate_checks(const std::vector<RunRecord>& rs, const ExperimentConfig& c) {
  std::vector<double> values = c.sweep.values;
  std::sort(values.begin(), values.end());
  const auto bits = means(rs, values, "pib", &RunRecord::total_bits);
  const auto moda = means(rs, values, "pib", &RunRecord::moda);
  double worst_bits = -std::numeric_limits<double>::infinity(), worst_moda = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < values.size(); ++i) {
    worst_bits = std::max(worst_bits, bits[i] - bits[i - 1]);
    worst_moda = std::max(worst_moda, moda[i] - moda[i - 1]);
  }
  std::vector<CheckResult> out;
  if (values.size() > 1) {
    CheckResult b = make_check("payload_max_increase_with_lambda", worst_bits, 0.0);
    b.passed = worst_bits < 0.0;
    out.push_back(b);
    out.push_back(make_check("moda_max_increase_with_lambda", worst_moda, 0.0));
  }
  if (c.sweep.include_ablation) {
    out.push_back(make_check("matched_rate_sign_test_p", matched_rate_sign_test(rs).p_value, 0.05));
    out.back().passed = out.back().value < 0.05;
  }
  return out;
}

std::vector<CheckResult> delay_checks(const std::vector<RunRecord>& rs, const ExperimentConfig& c) {
  std::vector<double> values = c.sweep.values;
  std::sort(values.begin(), values.end());
  const auto bits = means(rs, values, "pib", &RunRecord::total_bits);
  double worst_bits = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < values.size(); ++i) worst_bits = std::max(worst_bits, bits[i] / bits[i - 1] - 1.0);
  std::vector<CheckResult> out;
  if (values.size() > 1) out.push_back(make_check("pib_bits_max_relative_increase", worst_bits, 0.01));
  if (c.sweep.include_ablation) {
    const auto pib = means(rs, values, "pib", &RunRecord::moda);
    const auto abl = means(rs, values, "equal", &RunRecord::moda);
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < values.size(); ++i)
      if (values[i] >= 1.0) worst = std::min(worst, pib[i] - abl[i]);
    if (std::isfinite(worst)) out.push_back(make_check("pib_minus_ablation_moda_min", worst, 0.0, false));
  }
  return out;
}

int cmd_sweep(const Options& o, SweepAxis axis) {
  ExperimentConfig c = resolve(o);
  c.sweep.axis = axis;
  const bool rate = axis == SweepAxis::kLambda;
  const std::string csv = rate ? "rate_sweep.csv" : "delay_sweep.csv";
  const std::vector<RunRecord> rs = rate ? sweep_rate_vs_moda(c, progress) : sweep_delayed_cameras(c, progress);
  emit_csv(rs, path_in(c, csv));
  write_plot_script(path_in(c, rate ? "rate_sweep.gp" : "delay_sweep.gp"), csv, rate ? "lambda" : "delayed");
  write_provenance(path_in(c, "provenance.json"), c, o.command_line);
  return finish(c, rate ? rate_checks(rs, c) : delay_checks(rs, c));
}

int cmd_verify(const Options& o) {
  const ExperimentConfig c = resolve(o);
  write_provenance(path_in(c, "provenance.json"), c, o.command_line);
  return finish(c, run_checks(c.seeds.front()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Priority-weighted multi-camera feature coding: training, sweeps and checks"};
  app.require_subcommand(1);
  Options o;
  for (int i = 0; i < argc; ++i) o.command_line += (i ? " " : "") + std::string(argv[i]);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the config seed list with one seed");
    sub->add_option("--out", o.out, "Output directory (default: config output)");
  };
  auto* train = app.add_subcommand("train", "Train and evaluate one model");
  auto* rate = app.add_subcommand("sweep-rate", "Rate vs MODA sweep over lambda");
  auto* delay = app.add_subcommand("sweep-delay", "Sweep over the number of delayed cameras");
  auto* verify = app.add_subcommand("verify", "Run the numerical self-checks");
  for (auto* sub : {train, rate, delay, verify}) add_common(sub);

  CLI11_PARSE(app, argc, argv);
  try {
    if (train->parsed()) return cmd_train(o);
    if (rate->parsed()) return cmd_sweep(o, SweepAxis::kLambda);
    if (delay->parsed()) return cmd_sweep(o, SweepAxis::kDelayed);
    return cmd_verify(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
