#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "pib/error.hpp"
#include "pib/numerics/autodiff.hpp"

namespace pib {

// Builds a scalar objective on a fresh graph bound to the given parameters.
using Objective = std::function<ad::Var(ad::Graph&)>;

struct GradCheckResult {
  double max_error = 0.0;      // max |numeric - analytic| / max(1, |analytic|)
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Central-difference check of the reverse-mode gradient of `f` at `theta`.
// `theta` is restored on return; its gradients hold the analytic gradient.
inline GradCheckResult grad_check(const Objective& f, ParamSet& theta, double step = 1e-5) {
  if (!(step >= 1e-5 && step <= 1e-2)) throw DomainError("grad_check: step must lie in [1e-5, 1e-2]");
  auto evaluate = [&]() {
    ad::Graph g(&theta);
    const double v = f(g).item();
    if (!std::isfinite(v)) throw EvaluationError("grad_check: objective is not finite");
    return v;
  };

  theta.zero_grad();
  {
    ad::Graph g(&theta);
    ad::Var loss = f(g);
    if (!std::isfinite(loss.item())) throw EvaluationError("grad_check: objective is not finite");
    g.backward(loss);
  }

  GradCheckResult result;
  for (auto& [name, entry] : theta) {
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double saved = entry.value[i];
      entry.value[i] = saved + step;
      const double up = evaluate();
      entry.value[i] = saved - step;
      const double down = evaluate();
      entry.value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = entry.grad[i];
      const double err = std::abs(numeric - analytic) / std::max(1.0, std::abs(analytic));
      ++result.checked;
      if (err > result.max_error || result.checked == 1) {
        result.max_error = err;
        result.worst_param = name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace pib
