#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "pib/numerics/grad_check.hpp"
#include "pib/priority.hpp"

using namespace pib;
using namespace pib::priority;

namespace {

ParamSet zero_mlp(std::size_t hidden) {
  ParamSet p;
  p.add("priority.l1.W", Tensor(Shape{hidden, 2}));
  p.add("priority.l1.b", Tensor(Shape{hidden}));
  p.add("priority.l2.W", Tensor(Shape{1, hidden}));
  p.add("priority.l2.b", Tensor(Shape{1}));
  return p;
}

}  // namespace

TEST(Coverage, Normalization) {
  EXPECT_EQ(normalize_coverage(10.0, 10.0, 30.0), 0.0);
  EXPECT_EQ(normalize_coverage(30.0, 10.0, 30.0), 1.0);
  EXPECT_EQ(normalize_coverage(20.0, 10.0, 30.0), 0.5);
  EXPECT_EQ(normalize_coverage(50.0, 10.0, 30.0), 1.0);
  EXPECT_EQ(normalize_coverage(0.0, 10.0, 30.0), 0.0);
  EXPECT_THROW(normalize_coverage(1.0, 3.0, 3.0), ConfigError);
  EXPECT_EQ((CameraCoverage{5.0, 0.0, 20.0}.normalized()), 0.25);
}

TEST(Score, ZeroNetworkGivesZero) {
  const ParamSet p = zero_mlp(kDefaultHidden);
  for (double d : {0.0, 0.3, 1.0})
    for (double c : {0.0, 0.5, 1.0}) EXPECT_EQ(priority_score(d, c, p), 0.0);
}

TEST(Score, HandSetTwoHidden) {
  ParamSet p = zero_mlp(2);
  p.value("priority.l1.W") = Tensor(Shape{2, 2}, {1.0, -2.0, 0.5, 3.0});
  p.value("priority.l1.b") = Tensor::vector({0.1, -1.0});
  p.value("priority.l2.W") = Tensor(Shape{1, 2}, {2.0, -1.5});
  p.value("priority.l2.b") = Tensor::vector({0.25});
  // h = relu(0.8 - 0.6 + 0.1, 0.4 + 0.9 - 1.0) = (0.3, 0.3); p = 0.6 - 0.45 + 0.25
  EXPECT_NEAR(priority_score(0.8, 0.3, p), 0.4, 1e-15);
  // h = relu(0.2 - 1.8 + 0.1, 0.1 + 2.7 - 1.0) = (0, 1.8); p = -2.7 + 0.25
  EXPECT_NEAR(priority_score(0.2, 0.9, p), -2.45, 1e-15);
  ad::Graph g(&p);
  EXPECT_NEAR(score(g, 0.2, 0.9).item(), -2.45, 1e-15);
}

TEST(Score, InputsClampedAndNonFiniteRejected) {
  Rng rng(1);
  ParamSet p;
  init_params(p, rng);
  EXPECT_EQ(priority_score(1.7, -0.2, p), priority_score(1.0, 0.0, p));
  EXPECT_THROW(priority_score(std::nan(""), 0.5, p), EvaluationError);
  p.value("priority.l2.b")[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(priority_score(0.5, 0.5, p), EvaluationError);
}

TEST(Score, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  ParamSet p;
  init_params(p, rng);
  for (auto& [name, e] : p)
    for (double& v : e.value.values()) v *= 5.0;
  const std::vector<std::pair<double, double>> cams{{0.1, 0.9}, {0.6, 0.4}, {0.95, 0.7}, {0.0, 0.2}};
  const GradCheckResult r = grad_check(
      [&](ad::Graph& g) {
        std::vector<ad::Var> s;
        for (const auto& [d, c] : cams) s.push_back(score(g, d, c));
        const WeightVars w = compute_weights(g, ad::concat(s));
        return ad::add(ad::sum(ad::square(w.w)), w.w0);
      },
      p);
  EXPECT_LT(r.max_error, 1e-4);
}

TEST(Weights, EqualScores) {
  const Weights w = compute_weights(Tensor(Shape{7}, 0.4));
  for (std::size_t k = 0; k < 7; ++k) {
    EXPECT_NEAR(w.w[k], 1.0 / 7.0, 1e-15);
    EXPECT_NEAR(w.factor(k), 1.0, 1e-15);
  }
  EXPECT_NEAR(w.w0, 1.0 / 7.0, 1e-15);
}

TEST(Weights, ExpRatioExample) {
  const Weights w = compute_weights(Tensor::vector({0.0, std::log(3.0)}));
  EXPECT_NEAR(w.w[0], 0.25, 1e-15);
  EXPECT_NEAR(w.w[1], 0.75, 1e-15);
  EXPECT_EQ(w.w0, w.w[1]);
  EXPECT_NEAR(w.factor(0), std::exp(0.5), 1e-15);
  EXPECT_EQ(w.factor(1), 1.0);
}

TEST(Weights, DominantScore) {
  const Weights w = compute_weights(Tensor::vector({0.1, 5.0, -1.0, 0.3}));
  EXPECT_EQ(w.factor(1), 1.0);
  for (std::size_t k : {0u, 2u, 3u}) EXPECT_GT(w.factor(k), 1.0);
}

TEST(Weights, ConstantReferenceMode) {
  const Weights w = compute_weights(Tensor::vector({0.0, 1.0}), W0Mode::kConstant, 1.0);
  EXPECT_EQ(w.w0, 1.0);
  ad::Graph g;
  const WeightVars v = compute_weights(g, g.constant(Tensor::vector({0.0, 1.0})), W0Mode::kConstant, 1.0);
  EXPECT_EQ(v.w0.item(), 1.0);
}

TEST(Weights, RandomPropertiesAndEquivariance) {
  Rng rng(21);
  for (int i = 0; i < 500; ++i) {
    const std::size_t K = 1 + rng.below(9);
    Tensor p(Shape{K});
    for (double& v : p.values()) v = rng.uniform(-10.0, 10.0);
    const Weights w = compute_weights(p);
    EXPECT_NEAR(std::accumulate(w.w.values().begin(), w.w.values().end(), 0.0), 1.0, 1e-12);
    EXPECT_EQ(w.w0, *std::max_element(w.w.values().begin(), w.w.values().end()));
    for (std::size_t k = 0; k < K; ++k) {
      EXPECT_GE(w.factor(k), 1.0);
      EXPECT_LT(w.factor(k), std::exp(1.0));
    }
    std::vector<std::size_t> perm(K);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t j = K; j > 1; --j) std::swap(perm[j - 1], perm[rng.below(j)]);
    Tensor q(Shape{K});
    for (std::size_t k = 0; k < K; ++k) q[k] = p[perm[k]];
    const Weights wq = compute_weights(q);
    for (std::size_t k = 0; k < K; ++k) EXPECT_DOUBLE_EQ(wq.w[k], w.w[perm[k]]);
  }
}

TEST(Weights, EqualAblation) {
  const Weights w = equal_weights(4);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(w.w[k], 0.25);
  EXPECT_EQ(w.w0, 0.25);
  EXPECT_THROW(equal_weights(0), DomainError);
}

TEST(Init, SeededUniformSmall) {
  Rng a(5), b(5);
  ParamSet p, q;
  init_params(p, a);
  init_params(q, b);
  EXPECT_TRUE(p == q);
  for (const auto& [name, e] : p)
    for (double v : e.value.values()) EXPECT_LE(std::abs(v), 0.1);
  EXPECT_EQ(p.value("priority.l1.W").shape(), (Shape{kDefaultHidden, 2}));
}
