#pragma once

// Single runs, the two experiment sweeps, and the summary statistics the
// acceptance checks use.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pib/error.hpp"
#include "pib/harness/config.hpp"
#include "pib/harness/records.hpp"
#include "pib/harness/system.hpp"

namespace pib::harness {

struct RunOutput {
  RunRecord record;
  TrainResult training;
  EvalResult eval;
};

inline RunOutput run_once(const ExperimentConfig& c, std::uint64_t seed, Method m,
                          const std::vector<std::size_t>& delayed, const std::string& axis, double value) {
  const auto start = std::chrono::steady_clock::now();
  const Scenario s = build_scenario(c, seed, delayed);
  RunOutput out;
  out.training = train(c, s, m, seed);
  out.eval = evaluate(out.training.params, s, c, m);
  RunRecord& r = out.record;
  r.config_hash = config_hash(c);
  r.scenario = c.scenario;
  r.method = to_string(m);
  r.seed = seed;
  r.sweep_axis = axis;
  r.sweep_value = value;
  r.lambda = c.loss.lambda;
  r.delayed_count = delayed.size();
  r.total_bits = out.eval.total_bits;
  r.estimate_bits = out.eval.estimate_bits;
  r.bits_per_camera = out.eval.bits_per_camera;
  r.moda = out.eval.moda.moda;
  r.moda_degenerate = out.eval.moda.degenerate || delayed.size() == c.cameras;
  r.counts = out.eval.moda.counts;
  r.weights = out.eval.weights;
  r.w_target = s.w_target;
  if (!out.training.log.empty()) {
    const loss::LossBreakdown& b = out.training.log.back().breakdown;
    r.loss_total = b.total;
    r.loss_l1 = b.l1;
    r.loss_l2 = b.l2;
    r.loss_l3 = b.l3;
    r.distortion = sum_of(b.distortion);
    r.rate_clipped = sum_of(b.rate_clipped);
  }
  r.grad_check_error = out.training.grad_check_error;
  r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

using Progress = std::function<void(const RunRecord&)>;

inline std::vector<Method> sweep_methods(const ExperimentConfig& c) {
  if (c.sweep.include_ablation) return {Method::kPib, Method::kEqual};
  return {c.method};
}

// Co-trains one model per (lambda, seed, method).
inline std::vector<RunRecord> sweep_rate_vs_moda(const ExperimentConfig& base, const Progress& progress = {}) {
  base.validate();
  std::vector<RunRecord> out;
  for (double lambda : base.sweep.values) {
    ExperimentConfig c = base;
    c.loss.lambda = lambda;
    c.validate();
    for (std::uint64_t seed : c.seeds)
      for (Method m : sweep_methods(c)) {
        out.push_back(run_once(c, seed, m, c.delayed_cameras, "lambda", lambda).record);
        if (progress) progress(out.back());
      }
  }
  return out;
}

// n delayed cameras, taken in delay_order, for each sweep value n.
inline std::vector<RunRecord> sweep_delayed_cameras(const ExperimentConfig& base, const Progress& progress = {}) {
  base.validate();
  const std::vector<std::size_t> order = base.effective_delay_order();
  std::vector<RunRecord> out;
  for (double v : base.sweep.values) {
    const auto n = static_cast<std::size_t>(v);
    if (n > order.size()) throw ConfigError("sweep: more delayed cameras than delay_order lists");
    const std::vector<std::size_t> delayed(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    for (std::uint64_t seed : base.seeds)
      for (Method m : sweep_methods(base)) {
        out.push_back(run_once(base, seed, m, delayed, "delayed", v).record);
        if (progress) progress(out.back());
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summaries

inline std::vector<const RunRecord*> select(const std::vector<RunRecord>& rs, const std::string& method, double value) {
  std::vector<const RunRecord*> out;
  for (const RunRecord& r : rs)
    if (r.method == method && r.sweep_value == value) out.push_back(&r);
  return out;
}

inline double mean_of(const std::vector<const RunRecord*>& rs, double RunRecord::*field) {
  if (rs.empty()) throw EvaluationError("mean over an empty record set");
  double s = 0.0;
  for (const RunRecord* r : rs) s += r->*field;
  return s / static_cast<double>(rs.size());
}

// P(X >= k) for X ~ Binomial(n, 1/2).
inline double binomial_upper_tail(std::size_t n, std::size_t k) {
  double coeff = 1.0, total = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    if (i >= k) total += coeff;
    coeff = coeff * static_cast<double>(n - i) / static_cast<double>(i + 1);
  }
  return std::min(std::ldexp(total, -static_cast<int>(n)), 1.0);
}

struct SignTest {
  std::size_t wins = 0;
  std::size_t losses = 0;
  std::size_t ties = 0;
  double p_value = 1.0;
  std::vector<double> per_seed_margin;
};

// Ablation MODA at a given rate: linear in log-rate between the ablation's
// own sweep points, held constant beyond its range.
inline double interpolate_moda(std::vector<std::pair<double, double>> curve, double rate) {
  if (curve.empty()) throw EvaluationError("interpolate_moda: empty curve");
  std::sort(curve.begin(), curve.end());
  const double x = std::log(rate);
  if (x <= std::log(curve.front().first)) return curve.front().second;
  if (x >= std::log(curve.back().first)) return curve.back().second;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const double x0 = std::log(curve[i - 1].first), x1 = std::log(curve[i].first);
    if (x <= x1) {
      const double a = x1 > x0 ? (x - x0) / (x1 - x0) : 0.0;
      return curve[i - 1].second + a * (curve[i].second - curve[i - 1].second);
    }
  }
  return curve.back().second;
}

// Per seed: mean over PIB sweep points of MODA minus the ablation's MODA at
// the same rate. Ties are dropped from the one-sided sign test.
inline SignTest matched_rate_sign_test(const std::vector<RunRecord>& rs) {
  std::map<std::uint64_t, std::vector<const RunRecord*>> pib, abl;
  for (const RunRecord& r : rs) (r.method == "pib" ? pib : abl)[r.seed].push_back(&r);
  SignTest t;
  for (const auto& [seed, runs] : pib) {
    auto it = abl.find(seed);
    if (it == abl.end()) throw EvaluationError("sign test: seed " + std::to_string(seed) + " lacks ablation runs");
    std::vector<std::pair<double, double>> curve;
    for (const RunRecord* r : it->second) curve.emplace_back(r->total_bits, r->moda);
    double margin = 0.0;
    for (const RunRecord* r : runs) margin += r->moda - interpolate_moda(curve, r->total_bits);
    margin /= static_cast<double>(runs.size());
    t.per_seed_margin.push_back(margin);
    if (margin > 1e-12) ++t.wins;
    else if (margin < -1e-12) ++t.losses;
    else ++t.ties;
  }
  t.p_value = binomial_upper_tail(t.wins + t.losses, t.wins);
  return t;
}

// ---------------------------------------------------------------------------
// Output side files

inline void write_provenance(const std::string& path, const ExperimentConfig& c, const std::string& command) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  nlohmann::json j = {{"code_version", kCodeVersion},
                      {"schema_version", kSchemaVersion},
                      {"config_hash", config_hash(c)},
                      {"command", command},
                      {"config", config_to_json(c)}};
  os << j.dump(2) << '\n';
}

// Companion plotting script for a sweep CSV; plotting itself is left to gnuplot.
inline void write_plot_script(const std::string& path, const std::string& csv_name, const std::string& axis) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  const auto& cols = run_columns();
  auto col = [&](const std::string& name) {
    return std::to_string(std::find(cols.begin(), cols.end(), name) - cols.begin() + 1);
  };
  os << "set datafile separator ','\n"
     << "set key autotitle columnhead\n"
     << "set grid\n";
  if (axis == "lambda") {
    os << "set xlabel 'communication cost (bits per frame)'\nset ylabel 'MODA'\nset logscale x\n"
       << "plot '" << csv_name << "' using (strcol(" << col("method") << ") eq 'pib' ? $" << col("total_bits")
       << " : 1/0):" << col("moda") << " with points title 'PIB', \\\n"
       << "     '" << csv_name << "' using (strcol(" << col("method") << ") eq 'equal' ? $" << col("total_bits")
       << " : 1/0):" << col("moda") << " with points title 'equal weights'\n";
  } else {
    os << "set xlabel 'delayed cameras'\nset multiplot layout 1,2\n";
    for (const char* y : {"moda", "total_bits"}) {
      os << "set ylabel '" << y << "'\n"
         << "plot '" << csv_name << "' using (strcol(" << col("method") << ") eq 'pib' ? $" << col("sweep_value")
         << " : 1/0):" << col(y) << " with points title 'PIB', \\\n"
         << "     '" << csv_name << "' using (strcol(" << col("method") << ") eq 'equal' ? $" << col("sweep_value")
         << " : 1/0):" << col(y) << " with points title 'equal weights'\n";
    }
    os << "unset multiplot\n";
  }
}

}  // namespace pib::harness
