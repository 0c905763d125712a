#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>

#include "pib/error.hpp"
#include "pib/numerics/tensor.hpp"
#include "pib/random.hpp"

namespace pib {

// Named parameter tensors, each paired with a gradient of identical shape.
// Iteration order is the lexicographic order of names, which fixes the flat
// parameter ordering used by the optimizer and by grad_check.
class ParamSet {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
  };

  void add(const std::string& name, Tensor value) {
    Tensor grad(value.shape());
    entries_.insert_or_assign(name, Entry{std::move(value), std::move(grad)});
  }

  void add_uniform(const std::string& name, Shape shape, Rng& rng, double bound) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    add(name, std::move(t));
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  Tensor& value(const std::string& name) { return entry(name).value; }
  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& grad(const std::string& name) { return entry(name).grad; }
  const Tensor& grad(const std::string& name) const { return entry(name).grad; }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.grad.fill(0.0);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& [_, e] : entries_) {
      if (!e.value.all_finite()) return false;
    }
    return true;
  }

  // Copies every entry of `other` under `prefix` + name.
  void merge(const ParamSet& other, const std::string& prefix = "") {
    for (const auto& [name, e] : other.entries_) entries_.insert_or_assign(prefix + name, e);
  }

  // Entries whose name starts with `prefix`, with the prefix stripped.
  ParamSet extract(const std::string& prefix) const {
    ParamSet out;
    for (const auto& [name, e] : entries_) {
      if (name.rfind(prefix, 0) == 0) out.entries_.insert_or_assign(name.substr(prefix.size()), e);
    }
    return out;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

  // Values only; gradients are not part of equality.
  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    auto it = b.entries_.begin();
    for (const auto& [name, e] : a.entries_) {
      if (name != it->first || !(e.value == it->second.value)) return false;
      ++it;
    }
    return true;
  }

 private:
  std::map<std::string, Entry> entries_;
};

// Checkpoint text format, one block per parameter:
//
//   pib-checkpoint 1
//   param <name> <rank> <dim0> ... <dimN-1>
//   <value> <value> ...            (C99 hexadecimal floats, bit-exact)
//   end
namespace checkpoint {

inline void write(std::ostream& os, const ParamSet& params) {
  os << "pib-checkpoint 1\n";
  char buf[64];
  for (const auto& [name, e] : params) {
    if (name.find_first_of(" \t\n") != std::string::npos) throw ConfigError("parameter name contains whitespace: " + name);
    os << "param " << name << ' ' << e.value.rank();
    for (std::size_t d : e.value.shape()) os << ' ' << d;
    os << '\n';
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%a", e.value[i]);
      os << (i ? " " : "") << buf;
    }
    os << '\n';
  }
  os << "end\n";
}

inline ParamSet read(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "pib-checkpoint" || version != 1) {
    throw IoError("not a pib checkpoint (bad magic or version)");
  }
  ParamSet params;
  std::string tag;
  while (is >> tag) {
    if (tag == "end") return params;
    if (tag != "param") throw IoError("checkpoint: unexpected token '" + tag + "'");
    std::string name;
    std::size_t rank = 0;
    if (!(is >> name >> rank)) throw IoError("checkpoint: truncated parameter header");
    Shape shape(rank);
    for (auto& d : shape) {
      if (!(is >> d)) throw IoError("checkpoint: truncated shape for " + name);
    }
    Tensor t(shape);
    std::string tok;
    for (double& v : t.values()) {
      if (!(is >> tok)) throw IoError("checkpoint: truncated values for " + name);
      char* end = nullptr;
      v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0') throw IoError("checkpoint: bad number '" + tok + "' in " + name);
    }
    params.add(name, std::move(t));
  }
  throw IoError("checkpoint: missing 'end' marker");
}

inline void save(const std::string& path, const ParamSet& params) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write(os, params);
  if (!os) throw IoError("write to '" + path + "' failed");
}

inline ParamSet load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read(is);
}

}  // namespace checkpoint
}  // namespace pib
