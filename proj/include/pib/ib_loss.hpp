#pragma once

// Priority-weighted information bottleneck objective, through its variational
// bounds:
//
//   L1 = sum_k  w_k * E[-log q(Y|Z)]  +  lambda * sum_k min(R_max, R_k * e^{w0 - w_k})
//   L2 = sum_k  KL(empirical Z_t | context  ||  q(Z_t | Z_<t))
//   L3 = sum_k  [d_k < eps] (w_k - W_target)^2 + [d_k > eps] w_k^2
//   total = L1 + alpha2 * L2 + alpha3 * L3
//
// R_k is the cross-entropy rate of (Z, V) under the coding models, in nats.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pib/error.hpp"
#include "pib/numerics/autodiff.hpp"

namespace pib::loss {

struct GateConfig {
  double epsilon = 0.5;
  double w_target = 1.0 / 7.0;

  void validate() const {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ConfigError("gate: epsilon must lie in (0, 1]");
    if (!(w_target >= 0.0 && w_target <= 1.0)) throw ConfigError("gate: W_target must lie in [0, 1]");
  }
};

struct LossWeights {
  double lambda = 0.01;
  double r_max = 0.0;  // nats per camera
  double alpha2 = 1.0;
  double alpha3 = 1.0;
};

// Default W_target: 1 / (number of cameras with d_norm < epsilon), or 0.
inline double default_w_target(std::span<const double> d_norm, double epsilon) {
  std::size_t on_time = 0;
  for (double d : d_norm) on_time += d < epsilon ? 1 : 0;
  return on_time == 0 ? 0.0 : 1.0 / static_cast<double>(on_time);
}

// -w_k * log q(Y|Z), with log q already averaged over the batch.
inline double distortion_term(double w_k, double log_q) {
  if (!std::isfinite(log_q)) throw EvaluationError("distortion: non-finite likelihood");
  return -w_k * log_q;
}

inline double rate_term(double w_k, double w0, double rate_nats, double r_max) {
  if (w0 < w_k) throw EvaluationError("rate_term: reference weight w0 below w_k");
  if (!(rate_nats >= 0.0)) throw DomainError("rate_term: rate must be non-negative");
  return std::min(r_max, rate_nats * std::exp(w0 - w_k));
}

inline double loss_l3(std::span<const double> w, std::span<const double> d_norm, const GateConfig& gate) {
  if (w.size() != d_norm.size()) throw ShapeError("loss_l3: weight and delay counts differ");
  double total = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (d_norm[k] < gate.epsilon) total += (w[k] - gate.w_target) * (w[k] - gate.w_target);
    else if (d_norm[k] > gate.epsilon) total += w[k] * w[k];
  }
  return total;
}

// Empirical conditional KL, in nats per element:
//   mean_i[-log q(z_i | c_i)] - H_emp(Z | C)
// where contexts group elements that share the model input. Non-negative
// whenever q(. | c) is the same sub-normalized distribution within a group.
template <typename Context>
double empirical_conditional_entropy(std::span<const int> symbols, std::span<const Context> contexts) {
  if (symbols.size() != contexts.size()) throw ShapeError("empirical entropy: symbol and context counts differ");
  std::map<Context, std::map<int, std::size_t>> counts;
  for (std::size_t i = 0; i < symbols.size(); ++i) ++counts[contexts[i]][symbols[i]];
  const double n = static_cast<double>(symbols.size());
  double h = 0.0;
  for (const auto& [ctx, hist] : counts) {
    std::size_t total = 0;
    for (const auto& [s, c] : hist) total += c;
    for (const auto& [s, c] : hist) {
      const double p = static_cast<double>(c) / static_cast<double>(total);
      h -= static_cast<double>(c) / n * std::log(p);
    }
  }
  return h;
}

template <typename Context>
double empirical_kl(std::span<const int> symbols, std::span<const Context> contexts, std::span<const double> model_prob) {
  if (symbols.size() != model_prob.size()) throw ShapeError("empirical_kl: symbol and probability counts differ");
  if (symbols.empty()) return 0.0;
  double ce = 0.0;
  for (double q : model_prob) {
    if (q <= 0.0) return std::numeric_limits<double>::infinity();
    ce -= std::log(q);
  }
  ce /= static_cast<double>(symbols.size());
  return ce - empirical_conditional_entropy(symbols, contexts);
}

struct L2Term {
  ad::Var value;
  bool warmup = false;  // true when history was too short and the term is zero
};

// Differentiable L2 for one camera: `nll` holds -log q(z_i | c_i) per element.
template <typename Context>
L2Term loss_l2(ad::Graph& g, ad::Var nll, std::span<const int> symbols, std::span<const Context> contexts,
               bool history_available = true) {
  if (!history_available || symbols.empty()) return {g.constant(0.0), true};
  if (nll.size() != symbols.size()) throw ShapeError("loss_l2: nll and symbol counts differ");
  const double h = empirical_conditional_entropy(symbols, contexts);
  return {ad::add_const(ad::mean(nll), -h), false};
}

struct LossBreakdown {
  std::vector<double> distortion;       // per camera, nats
  std::vector<double> rate_unweighted;  // per camera R_k, nats
  std::vector<double> rate_raw;         // per camera R_k * e^{w0 - w_k}, before clipping
  std::vector<double> rate_clipped;     // per camera min(R_max, rate_raw)
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  double r_max = 0.0;
};

struct LossInputs {
  ad::Var weights;                 // w[K]
  ad::Var w0;                      // scalar
  ad::Var distortion_nll;          // scalar: batch mean of sum over cells -log q(Y|Z)
  std::vector<ad::Var> rate_nats;  // per camera scalar: batch mean rate of (Z, V)
  ad::Var l2;                      // scalar
  std::vector<double> d_norm;      // per camera
  GateConfig gate;
  LossWeights coeffs;
};

struct LossResult {
  ad::Var total;
  LossBreakdown breakdown;
};

inline LossResult total_loss(ad::Graph& g, const LossInputs& in) {
  const std::size_t K = in.rate_nats.size();
  if (in.weights.size() != K || in.d_norm.size() != K) throw ShapeError("total_loss: camera counts differ");
  if (!std::isfinite(in.distortion_nll.item())) throw EvaluationError("total_loss: non-finite distortion");
  in.gate.validate();
  LossBreakdown b;
  b.lambda = in.coeffs.lambda;
  b.r_max = in.coeffs.r_max;

  const double w0v = in.w0.item();
  std::vector<ad::Var> l1_terms, l3_terms;
  for (std::size_t k = 0; k < K; ++k) {
    ad::Var wk = ad::index(in.weights, k);
    if (w0v < wk.item()) throw EvaluationError("total_loss: reference weight w0 below w_k");
    ad::Var dist = ad::mul(wk, in.distortion_nll);
    ad::Var factor = ad::exp(ad::sub(in.w0, wk));
    ad::Var weighted = ad::mul(in.rate_nats[k], factor);
    ad::Var clipped = ad::clamp_max(weighted, in.coeffs.r_max);
    b.distortion.push_back(dist.item());
    b.rate_unweighted.push_back(in.rate_nats[k].item());
    b.rate_raw.push_back(weighted.item());
    b.rate_clipped.push_back(clipped.item());
    l1_terms.push_back(dist);
    l1_terms.push_back(ad::mul_const(clipped, in.coeffs.lambda));
    if (in.d_norm[k] < in.gate.epsilon) {
      l3_terms.push_back(ad::square(ad::add_const(wk, -in.gate.w_target)));
    } else if (in.d_norm[k] > in.gate.epsilon) {
      l3_terms.push_back(ad::square(wk));
    }
  }
  ad::Var l1 = ad::add_n(l1_terms);
  ad::Var l3 = l3_terms.empty() ? g.constant(0.0) : ad::add_n(l3_terms);
  ad::Var total = ad::add_n({l1, ad::mul_const(in.l2, in.coeffs.alpha2), ad::mul_const(l3, in.coeffs.alpha3)});
  if (!std::isfinite(total.item())) throw EvaluationError("total_loss: non-finite total");
  b.l1 = l1.item();
  b.l2 = in.l2.item();
  b.l3 = l3.item();
  b.total = total.item();
  return {total, b};
}

}  // namespace pib::loss
