#pragma once

#include <cmath>
#include <numbers>
#include <span>

#include "pib/error.hpp"

namespace pib {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

// Phi(upper) - Phi(lower) for lower <= upper, evaluated on whichever side of
// the distribution keeps the subtraction well conditioned.
inline double normal_interval(double lower, double upper) {
  if (lower >= 0.0) return 0.5 * (std::erfc(lower * kInvSqrt2) - std::erfc(upper * kInvSqrt2));
  if (upper <= 0.0) return 0.5 * (std::erfc(-upper * kInvSqrt2) - std::erfc(-lower * kInvSqrt2));
  return 1.0 - 0.5 * std::erfc(upper * kInvSqrt2) - 0.5 * std::erfc(-lower * kInvSqrt2);
}

// Sum over elements of log N(x; mu, sigma^2), in nats.
inline double gaussian_log_likelihood(std::span<const double> x, std::span<const double> mu,
                                      std::span<const double> sigma) {
  if (x.size() != mu.size() || x.size() != sigma.size()) throw ShapeError("gaussian_log_likelihood: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw DomainError("gaussian_log_likelihood: sigma must be positive");
    const double d = x[i] - mu[i];
    total += -0.5 * std::log(2.0 * std::numbers::pi * sigma[i] * sigma[i]) - d * d / (2.0 * sigma[i] * sigma[i]);
  }
  return total;
}

inline double gaussian_log_likelihood(double x, double mu, double sigma) {
  return gaussian_log_likelihood(std::span<const double>(&x, 1), std::span<const double>(&mu, 1),
                                 std::span<const double>(&sigma, 1));
}

}  // namespace pib
