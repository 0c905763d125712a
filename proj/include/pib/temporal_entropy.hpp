#pragma once

// Coding distributions for the latents.
//
// The current latent Z_t is modelled as a per-element Gaussian whose mean and
// scale come from the tau previous quantized latents (theta_tau), shifted by a
// conditional term computed from the side information V (theta_con). V itself
// is a 4x spatially downsampled map of Z coded with a factorized per-channel
// Gaussian prior (theta_l). Coding uses the Gaussians discretized to integer
// bins on a bounded support, with the tails folded into the edge bins.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pib/error.hpp"
#include "pib/numerics/autodiff.hpp"
#include "pib/numerics/gaussian.hpp"
#include "pib/numerics/param_set.hpp"
#include "pib/random.hpp"

namespace pib::entropy {

inline constexpr double kSigmaFloor = 1e-6;
inline constexpr std::size_t kSideFactor = 4;

// Integer alphabet [lo, hi].
struct Support {
  int lo = -64;
  int hi = 63;

  std::size_t size() const { return static_cast<std::size_t>(hi - lo + 1); }
  bool contains(int b) const { return b >= lo && b <= hi; }
};

inline constexpr Support kLatentSupport{-64, 63};

struct DiscretizedGaussian {
  double mu = 0.0;
  double sigma = 1.0;
  double bin_width = 1.0;
};

// Probability of integer bin b; edge bins absorb the tails.
inline double pmf(const DiscretizedGaussian& m, int bin, Support support = kLatentSupport) {
  if (!support.contains(bin)) throw DomainError("pmf: bin " + std::to_string(bin) + " outside support");
  if (!(m.sigma > 0.0) || !(m.bin_width > 0.0)) throw DomainError("pmf: sigma and bin width must be positive");
  const double inf = std::numeric_limits<double>::infinity();
  const double lower = bin == support.lo ? -inf : ((bin - 0.5) * m.bin_width - m.mu) / m.sigma;
  const double upper = bin == support.hi ? inf : ((bin + 0.5) * m.bin_width - m.mu) / m.sigma;
  return normal_interval(lower, upper);
}

// Same values as pmf() bin by bin, with one erfc per bin edge.
inline std::vector<double> pmf_table(const DiscretizedGaussian& m, Support support = kLatentSupport) {
  if (!(m.sigma > 0.0) || !(m.bin_width > 0.0)) throw DomainError("pmf: sigma and bin width must be positive");
  const std::size_t n = support.size();
  // Edge j sits between bins j-1 and j; lower[j] = Phi(e_j), upper[j] = 1 - Phi(e_j),
  // each computed directly on its well-conditioned side.
  std::vector<double> edge(n + 1), lower(n + 1), upper(n + 1);
  for (std::size_t j = 1; j < n; ++j) {
    const double e = ((support.lo + static_cast<int>(j) - 0.5) * m.bin_width - m.mu) / m.sigma;
    edge[j] = e;
    if (e >= 0.0) upper[j] = 0.5 * std::erfc(e * kInvSqrt2);
    else lower[j] = 0.5 * std::erfc(-e * kInvSqrt2);
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool has_lo = i > 0, has_hi = i + 1 < n;
    const double a = has_lo ? edge[i] : -std::numeric_limits<double>::infinity();
    const double b = has_hi ? edge[i + 1] : std::numeric_limits<double>::infinity();
    if (a >= 0.0) {
      out[i] = upper[i] - (has_hi ? upper[i + 1] : 0.0);
    } else if (b < 0.0) {
      out[i] = lower[i + 1] - (has_lo ? lower[i] : 0.0);
    } else {
      out[i] = 1.0 - (has_hi ? upper[i + 1] : 0.0) - (has_lo ? lower[i] : 0.0);
    }
  }
  return out;
}

// D_KL(p || q) in nats. Infinite when q vanishes where p has mass.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DomainError("kl_divergence: support mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw DomainError("kl_divergence: negative probability");
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    total += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(total, 0.0);
}

// -------------------------------------------------------------------------
// Parametric model

struct ModelShape {
  std::size_t latent_channels = 4;
  std::size_t side_channels = 2;
  std::size_t tau = 2;
};

// Parameter names (prefix "entropy."):
//   tau.{mu,sigma}.{W,b}   1x1 conv over the tau stacked past latents
//   tau.{mu,sigma}.S       per-channel 3x3 kernel over the most recent latent
//   con.{mu,sigma}.{W,b}   1x1 conv over upsampled side information
//   side.{W,b}             4x4 stride-4 analysis of Z into V
//   prior.{mu,sigma}       per-channel factorized prior of V (sigma pre-softplus)
inline void init_params(ParamSet& params, Rng& rng, const ModelShape& s, const std::string& prefix = "entropy.") {
  if (s.tau < 1) throw ConfigError("entropy model: tau must be at least 1");
  const std::size_t cz = s.latent_channels, cv = s.side_channels;
  for (const char* head : {"mu", "sigma"}) {
    const std::string p = prefix + "tau." + head + ".";
    params.add_uniform(p + "W", Shape{cz, s.tau * cz, 1, 1}, rng, 0.1);
    params.add(p + "b", Tensor(Shape{cz}, std::string(head) == "mu" ? 0.0 : 1.0));
    params.add_uniform(p + "S", Shape{cz, 1, 3, 3}, rng, 0.1);
  }
  // The mean starts out carrying the previous latent forward.
  Tensor& carry = params.value(prefix + "tau.mu.W");
  for (std::size_t c = 0; c < cz; ++c) carry[c * s.tau * cz + c] += 1.0;
  params.add_uniform(prefix + "con.mu.W", Shape{cz, cv, 1, 1}, rng, 0.1);
  params.add(prefix + "con.mu.b", Tensor(Shape{cz}, 0.0));
  params.add_uniform(prefix + "con.sigma.W", Shape{cz, cv, 1, 1}, rng, 0.1);
  params.add(prefix + "con.sigma.b", Tensor(Shape{cz}, 0.0));
  params.add_uniform(prefix + "side.W", Shape{cv, cz, kSideFactor, kSideFactor}, rng, 0.1);
  params.add(prefix + "side.b", Tensor(Shape{cv}, 0.0));
  params.add(prefix + "prior.mu", Tensor(Shape{cv}, 0.0));
  params.add(prefix + "prior.sigma", Tensor(Shape{cv}, 1.0));
}

// Stacks the tau most recent latents (history.back() is Z_{t-1}) channel-wise,
// most recent first; frames before the start of the stream are zero.
inline Tensor stack_past(const std::vector<Tensor>& history, std::size_t tau, const Shape& latent_shape) {
  if (latent_shape.size() != 3) throw ShapeError("stack_past: latent must be C x H x W");
  const std::size_t c = latent_shape[0], h = latent_shape[1], w = latent_shape[2];
  Tensor out(Shape{tau * c, h, w});
  for (std::size_t i = 0; i < tau && i < history.size(); ++i) {
    const Tensor& frame = history[history.size() - 1 - i];
    if (frame.shape() != latent_shape) {
      throw ShapeError("stack_past: frame " + to_string(frame.shape()) + " vs latent " + to_string(latent_shape));
    }
    std::copy(frame.values().begin(), frame.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(i * c * h * w));
  }
  return out;
}

struct GaussianVars {
  ad::Var mu;
  ad::Var sigma;
};

struct GaussianPre {
  ad::Var mu;
  ad::Var sigma_pre;  // before softplus
};

inline ad::Var positive_scale(ad::Var pre) { return ad::clamp_min(ad::softplus(pre), kSigmaFloor); }

inline GaussianPre temporal_heads(ad::Graph& g, const Tensor& stacked_past, const std::string& prefix = "entropy.") {
  const Tensor& wmu = g.param(prefix + "tau.mu.W").value();
  const std::size_t cz = wmu.dim(0);
  if (stacked_past.rank() != 3 || stacked_past.dim(0) != wmu.dim(1)) {
    throw ShapeError("predict_params: stacked past " + to_string(stacked_past.shape()) + " does not match tau*C = " +
                     std::to_string(wmu.dim(1)));
  }
  const std::size_t plane = stacked_past.dim(1) * stacked_past.dim(2);
  Tensor recent(Shape{cz, stacked_past.dim(1), stacked_past.dim(2)});
  std::copy(stacked_past.values().begin(), stacked_past.values().begin() + static_cast<std::ptrdiff_t>(cz * plane),
            recent.values().begin());
  ad::Var past = g.constant(stacked_past);
  ad::Var last = g.constant(std::move(recent));
  ad::Var no_bias = g.constant(Tensor(Shape{cz}, 0.0));
  auto head = [&](const std::string& h) {
    const std::string p = prefix + "tau." + h + ".";
    return ad::add(ad::conv2d(past, g.param(p + "W"), g.param(p + "b"), 1, 0),
                   ad::depthwise_conv2d(last, g.param(p + "S"), no_bias, 1));
  };
  return {head("mu"), head("sigma")};
}

// Hash of everything the temporal model sees when predicting element
// (c, y, x): the stacked past at (y, x) and the 3x3 neighbourhood of channel c
// in the most recent latent. Elements with equal keys get equal predictions.
inline std::uint64_t context_key(const Tensor& stacked_past, std::size_t c, std::size_t y, std::size_t x) {
  const std::size_t C = stacked_past.dim(0), H = stacked_past.dim(1), W = stacked_past.dim(2);
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::int64_t v) {
    h ^= static_cast<std::uint64_t>(v) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    h *= 1099511628211ull;
  };
  mix(static_cast<std::int64_t>(c));
  for (std::size_t i = 0; i < C; ++i) mix(std::llround(stacked_past[(i * H + y) * W + x]));
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy, xx = static_cast<std::ptrdiff_t>(x) + dx;
      if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(H) || xx >= static_cast<std::ptrdiff_t>(W)) {
        mix(std::numeric_limits<std::int64_t>::min());
        continue;
      }
      mix(std::llround(stacked_past[(c * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xx)]));
    }
  return h;
}

// q(Z_t | Z_{t-1..t-tau}; theta_tau).
inline GaussianVars predict_params(ad::Graph& g, const Tensor& stacked_past, const std::string& prefix = "entropy.") {
  GaussianPre h = temporal_heads(g, stacked_past, prefix);
  return {h.mu, positive_scale(h.sigma_pre)};
}

struct GaussianTensors {
  Tensor mu;
  Tensor sigma;
};

inline GaussianTensors predict_params(const ParamSet& theta, const Tensor& stacked_past,
                                      const std::string& prefix = "entropy.") {
  ParamSet copy = theta;
  ad::Graph g(&copy);
  GaussianVars v = predict_params(g, stacked_past, prefix);
  return {v.mu.value(), v.sigma.value()};
}

// Continuous side information V = analysis(Z).
inline ad::Var side_info(ad::Graph& g, ad::Var z, const std::string& prefix = "entropy.") {
  const Shape& s = z.shape();
  if (s.size() != 3 || s[1] % kSideFactor != 0 || s[2] % kSideFactor != 0) {
    throw ShapeError("side_info: latent " + to_string(s) + " not divisible by 4");
  }
  return ad::conv2d(z, g.param(prefix + "side.W"), g.param(prefix + "side.b"), kSideFactor, 0);
}

// Factorized prior q(V; theta_l) broadcast to the shape of V.
inline GaussianVars side_prior(ad::Graph& g, const Shape& side_shape, const std::string& prefix = "entropy.") {
  const std::size_t cv = side_shape.at(0), per = side_shape.at(1) * side_shape.at(2);
  ad::Var ones = g.constant(Tensor(side_shape, 1.0));
  ad::Var mu = ad::scale_channels(ones, g.param(prefix + "prior.mu"));
  ad::Var pre = ad::scale_channels(ones, g.param(prefix + "prior.sigma"));
  if (mu.value().dim(0) != cv || mu.size() != cv * per) throw ShapeError("side_prior: channel mismatch");
  return {mu, positive_scale(pre)};
}

// q(Z_t | Z_<t, V): temporal heads shifted by the side-information terms.
inline GaussianVars conditional_params(ad::Graph& g, const GaussianPre& t, ad::Var side_hat,
                                       const std::string& prefix = "entropy.") {
  ad::Var up = ad::upsample_nearest(side_hat, kSideFactor);
  ad::Var cmu = ad::conv2d(up, g.param(prefix + "con.mu.W"), g.param(prefix + "con.mu.b"));
  ad::Var csp = ad::conv2d(up, g.param(prefix + "con.sigma.W"), g.param(prefix + "con.sigma.b"));
  require_same_shape(t.mu.value(), cmu.value(), "conditional_params");
  return {ad::add(t.mu, cmu), positive_scale(ad::add(t.sigma_pre, csp))};
}

inline GaussianVars conditional_params(ad::Graph& g, const Tensor& stacked_past, ad::Var side_hat,
                                       const std::string& prefix = "entropy.") {
  return conditional_params(g, temporal_heads(g, stacked_past, prefix), side_hat, prefix);
}

inline std::vector<DiscretizedGaussian> to_models(const Tensor& mu, const Tensor& sigma) {
  require_same_shape(mu, sigma, "to_models");
  std::vector<DiscretizedGaussian> out(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) out[i] = DiscretizedGaussian{mu[i], sigma[i], 1.0};
  return out;
}

}  // namespace pib::entropy
