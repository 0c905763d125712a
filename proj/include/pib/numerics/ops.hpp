#pragma once

// Plain (non-recording) versions of the numerics building blocks.

#include <algorithm>
#include <cmath>

#include "pib/error.hpp"
#include "pib/numerics/tensor.hpp"

namespace pib {

inline Tensor linear_forward(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (W.rank() != 2 || x.rank() != 1 || b.rank() != 1 || W.dim(1) != x.dim(0) || W.dim(0) != b.dim(0)) {
    throw ShapeError("linear_forward: W" + to_string(W.shape()) + " x" + to_string(x.shape()) + " b" +
                     to_string(b.shape()));
  }
  Tensor out = b;
  for (std::size_t o = 0; o < W.dim(0); ++o)
    for (std::size_t i = 0; i < W.dim(1); ++i) out[o] += W[o * W.dim(1) + i] * x[i];
  return out;
}

inline Tensor softmax(const Tensor& p) {
  if (p.size() == 0) throw DomainError("softmax of empty input");
  if (!p.all_finite()) throw DomainError("softmax: non-finite input");
  const double m = *std::max_element(p.values().begin(), p.values().end());
  Tensor out(p.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (out[i] = std::exp(p[i] - m));
  for (double& v : out.values()) v /= z;
  return out;
}

}  // namespace pib
