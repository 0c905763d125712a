#pragma once

// Run records and their CSV form.
//
// Run CSV columns, in order:
//   schema_version, config_hash, code_version, scenario, method, seed, sweep_axis, sweep_value,
//   lambda, delayed_count, total_bits, estimate_bits, bits_per_camera, moda, moda_degenerate,
//   true_positives, false_positives, false_negatives, ground_truth, weights, w_target,
//   loss_total, loss_l1, loss_l2, loss_l3, distortion, rate_clipped, grad_check_error, wall_time_s
// Per-camera lists are ';'-separated inside one field. Floats use 9
// significant digits.
//
// Training-log CSV columns:
//   step, total, l1, l2, l3, distortion, rate_unweighted, rate_raw, rate_clipped, lambda, r_max, weights
// where the per-camera loss parts are summed over cameras.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pib/error.hpp"
#include "pib/harness/config.hpp"
#include "pib/harness/system.hpp"

namespace pib::harness {

struct RunRecord {
  int schema_version = kSchemaVersion;
  std::string config_hash;
  std::string code_version = kCodeVersion;
  std::string scenario;
  std::string method;
  std::uint64_t seed = 0;
  std::string sweep_axis;
  double sweep_value = 0.0;
  double lambda = 0.0;
  std::size_t delayed_count = 0;
  double total_bits = 0.0;
  double estimate_bits = 0.0;
  std::vector<double> bits_per_camera;
  double moda = 0.0;
  bool moda_degenerate = false;
  scene::ModaCounts counts;
  std::vector<double> weights;
  double w_target = 0.0;
  double loss_total = 0.0;
  double loss_l1 = 0.0;
  double loss_l2 = 0.0;
  double loss_l3 = 0.0;
  double distortion = 0.0;
  double rate_clipped = 0.0;
  double grad_check_error = 0.0;
  double wall_time_s = 0.0;
};

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ";" : "") + format_double(v[i]);
  return out;
}

inline double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw IoError("csv: not a number: '" + s + "'");
  return v;
}

inline std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) out.push_back(parse_double(item));
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') cur += '"', ++i;
      else if (ch == '"') quoted = false;
      else cur += ch;
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (quoted) throw IoError("csv: unterminated quote");
  out.push_back(cur);
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw IoError("csv: no column '" + name + "'");
  }
};

inline CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw IoError("csv: missing header");
  t.header = split_csv_line(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto row = split_csv_line(line);
    if (row.size() != t.header.size()) throw IoError("csv: row has " + std::to_string(row.size()) + " fields");
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline const std::vector<std::string>& run_columns() {
  static const std::vector<std::string> cols{
      "schema_version", "config_hash",     "code_version",    "scenario",       "method",       "seed",
      "sweep_axis",     "sweep_value",     "lambda",          "delayed_count",  "total_bits",   "estimate_bits",
      "bits_per_camera", "moda",           "moda_degenerate", "true_positives", "false_positives",
      "false_negatives", "ground_truth",   "weights",         "w_target",       "loss_total",   "loss_l1",
      "loss_l2",        "loss_l3",         "distortion",      "rate_clipped",   "grad_check_error",
      "wall_time_s"};
  return cols;
}

inline std::vector<std::string> record_fields(const RunRecord& r) {
  return {std::to_string(r.schema_version),
          r.config_hash,
          r.code_version,
          r.scenario,
          r.method,
          std::to_string(r.seed),
          r.sweep_axis,
          format_double(r.sweep_value),
          format_double(r.lambda),
          std::to_string(r.delayed_count),
          format_double(r.total_bits),
          format_double(r.estimate_bits),
          format_list(r.bits_per_camera),
          format_double(r.moda),
          r.moda_degenerate ? "1" : "0",
          std::to_string(r.counts.true_positives),
          std::to_string(r.counts.false_positives),
          std::to_string(r.counts.false_negatives),
          std::to_string(r.counts.ground_truth),
          format_list(r.weights),
          format_double(r.w_target),
          format_double(r.loss_total),
          format_double(r.loss_l1),
          format_double(r.loss_l2),
          format_double(r.loss_l3),
          format_double(r.distortion),
          format_double(r.rate_clipped),
          format_double(r.grad_check_error),
          format_double(r.wall_time_s)};
}

inline void write_row(std::ostream& os, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) os << (i ? "," : "") << csv_field(fields[i]);
  os << '\n';
}

inline void write_records(std::ostream& os, const std::vector<RunRecord>& records) {
  write_row(os, run_columns());
  for (const RunRecord& r : records) {
    if (r.schema_version != kSchemaVersion) throw IoError("csv: record schema version mismatch");
    write_row(os, record_fields(r));
  }
}

inline void emit_csv(const std::vector<RunRecord>& records, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_records(os, records);
  if (!os) throw IoError("write to '" + path + "' failed");
}

inline std::vector<RunRecord> parse_records(std::istream& is) {
  const CsvTable t = read_csv(is);
  if (t.header != run_columns()) throw IoError("csv: unexpected run columns");
  std::vector<RunRecord> out;
  auto u = [](const std::string& s) { return static_cast<std::size_t>(std::stoull(s)); };
  for (const auto& f : t.rows) {
    RunRecord r;
    std::size_t i = 0;
    r.schema_version = std::stoi(f[i++]);
    r.config_hash = f[i++];
    r.code_version = f[i++];
    r.scenario = f[i++];
    r.method = f[i++];
    r.seed = std::stoull(f[i++]);
    r.sweep_axis = f[i++];
    r.sweep_value = parse_double(f[i++]);
    r.lambda = parse_double(f[i++]);
    r.delayed_count = u(f[i++]);
    r.total_bits = parse_double(f[i++]);
    r.estimate_bits = parse_double(f[i++]);
    r.bits_per_camera = parse_list(f[i++]);
    r.moda = parse_double(f[i++]);
    r.moda_degenerate = f[i++] == "1";
    r.counts.true_positives = u(f[i++]);
    r.counts.false_positives = u(f[i++]);
    r.counts.false_negatives = u(f[i++]);
    r.counts.ground_truth = u(f[i++]);
    r.weights = parse_list(f[i++]);
    r.w_target = parse_double(f[i++]);
    r.loss_total = parse_double(f[i++]);
    r.loss_l1 = parse_double(f[i++]);
    r.loss_l2 = parse_double(f[i++]);
    r.loss_l3 = parse_double(f[i++]);
    r.distortion = parse_double(f[i++]);
    r.rate_clipped = parse_double(f[i++]);
    r.grad_check_error = parse_double(f[i++]);
    r.wall_time_s = parse_double(f[i++]);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<RunRecord> load_records(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  return parse_records(is);
}

inline double sum_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

inline void write_train_log(std::ostream& os, const std::vector<TrainLogRow>& log) {
  write_row(os, {"step", "total", "l1", "l2", "l3", "distortion", "rate_unweighted", "rate_raw", "rate_clipped", "lambda",
                 "r_max", "weights"});
  for (const TrainLogRow& row : log) {
    const loss::LossBreakdown& b = row.breakdown;
    write_row(os, {std::to_string(row.step), format_double(b.total), format_double(b.l1), format_double(b.l2),
                   format_double(b.l3), format_double(sum_of(b.distortion)), format_double(sum_of(b.rate_unweighted)),
                   format_double(sum_of(b.rate_raw)), format_double(sum_of(b.rate_clipped)), format_double(b.lambda),
                   format_double(b.r_max), format_list(row.weights)});
  }
}

}  // namespace pib::harness
