#pragma once

// Camera priority: a two-layer MLP scores (normalized delay, normalized RoI
// coverage); softmax turns the scores into weights that sum to one.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "pib/error.hpp"
#include "pib/numerics/autodiff.hpp"
#include "pib/numerics/ops.hpp"
#include "pib/numerics/param_set.hpp"
#include "pib/random.hpp"

namespace pib::priority {

inline constexpr std::size_t kDefaultHidden = 16;

// How the reference weight w0 is obtained.
enum class W0Mode {
  kRunningMax,  // w0 = max_k w_k, recomputed per evaluation
  kConstant,    // w0 fixed by configuration
};

inline double normalize_coverage(double coverage, double lower, double upper) {
  if (!(lower < upper)) throw ConfigError("normalize_coverage: lower bound must be below upper bound");
  return std::clamp((coverage - lower) / (upper - lower), 0.0, 1.0);
}

struct CameraCoverage {
  double coverage = 0.0;  // cells of FoV inside the RoI
  double lower = 0.0;
  double upper = 1.0;

  double normalized() const { return normalize_coverage(coverage, lower, upper); }
};

inline std::string param_name(const std::string& prefix, const char* leaf) { return prefix + leaf; }

// theta_M: "<prefix>l1.W" [H x 2], "<prefix>l1.b" [H], "<prefix>l2.W" [1 x H], "<prefix>l2.b" [1].
inline void init_params(ParamSet& params, Rng& rng, const std::string& prefix = "priority.",
                        std::size_t hidden = kDefaultHidden) {
  params.add_uniform(prefix + "l1.W", Shape{hidden, 2}, rng, 0.1);
  params.add_uniform(prefix + "l1.b", Shape{hidden}, rng, 0.1);
  params.add_uniform(prefix + "l2.W", Shape{1, hidden}, rng, 0.1);
  params.add_uniform(prefix + "l2.b", Shape{1}, rng, 0.1);
}

inline Tensor mlp_input(double d_norm, double coverage_norm) {
  if (!std::isfinite(d_norm) || !std::isfinite(coverage_norm)) throw EvaluationError("priority: non-finite input");
  return Tensor::vector({std::clamp(d_norm, 0.0, 1.0), std::clamp(coverage_norm, 0.0, 1.0)});
}

// Raw score p_k on the graph.
inline ad::Var score(ad::Graph& g, double d_norm, double coverage_norm, const std::string& prefix = "priority.") {
  ad::Var x = g.constant(mlp_input(d_norm, coverage_norm));
  ad::Var h = ad::relu(ad::linear(x, g.param(prefix + "l1.W"), g.param(prefix + "l1.b")));
  ad::Var p = ad::linear(h, g.param(prefix + "l2.W"), g.param(prefix + "l2.b"));
  if (!std::isfinite(p.value()[0])) throw EvaluationError("priority: non-finite score (check parameters)");
  return ad::reshape(p, Shape{1});
}

inline double priority_score(double d_norm, double coverage_norm, const ParamSet& theta,
                             const std::string& prefix = "priority.") {
  const Tensor x = mlp_input(d_norm, coverage_norm);
  Tensor h = linear_forward(x, theta.value(prefix + "l1.W"), theta.value(prefix + "l1.b"));
  for (double& v : h.values()) v = std::max(v, 0.0);
  const double p = linear_forward(h, theta.value(prefix + "l2.W"), theta.value(prefix + "l2.b"))[0];
  if (!std::isfinite(p)) throw EvaluationError("priority: non-finite score (check parameters)");
  return p;
}

struct Weights {
  Tensor w;
  double w0 = 0.0;

  // e^{w0 - w_k}, the rate penalty factor.
  double factor(std::size_t k) const { return std::exp(w0 - w[k]); }
};

inline Weights compute_weights(const Tensor& scores, W0Mode mode = W0Mode::kRunningMax, double w0_constant = 1.0) {
  Weights out{softmax(scores), 0.0};
  out.w0 = mode == W0Mode::kRunningMax ? *std::max_element(out.w.values().begin(), out.w.values().end())
                                       : w0_constant;
  return out;
}

// Fixed 1/K weights for the non-prioritized ablation.
inline Weights equal_weights(std::size_t cameras) {
  if (cameras == 0) throw DomainError("equal_weights: no cameras");
  const double w = 1.0 / static_cast<double>(cameras);
  return Weights{Tensor(Shape{cameras}, w), w};
}

struct WeightVars {
  ad::Var w;
  ad::Var w0;
};

inline WeightVars compute_weights(ad::Graph& g, ad::Var scores, W0Mode mode = W0Mode::kRunningMax,
                                  double w0_constant = 1.0) {
  ad::Var w = ad::softmax(scores);
  ad::Var w0 = mode == W0Mode::kRunningMax ? ad::max_element(w) : g.constant(w0_constant);
  return {w, w0};
}

}  // namespace pib::priority
