#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "pib/harness/checks.hpp"
#include "pib/ib_loss.hpp"
#include "pib/numerics/grad_check.hpp"

using namespace pib;
using namespace pib::loss;

namespace {

struct ToyLoss {
  Tensor w{Tensor::vector({0.7, 0.3})};
  double distortion = 3.0;
  std::vector<double> rates{10.0, 4.0};
  double l2 = 0.2;
  std::vector<double> d_norm{0.1, 0.9};
  GateConfig gate{0.5, 1.0};
  LossWeights coeffs{0.01, 1e6, 1.0, 1.0};

  LossResult build(ad::Graph& g) const {
    LossInputs in;
    in.weights = g.constant(w);
    in.w0 = ad::max_element(in.weights);
    in.distortion_nll = g.constant(distortion);
    for (double r : rates) in.rate_nats.push_back(g.constant(r));
    in.l2 = g.constant(l2);
    in.d_norm = d_norm;
    in.gate = gate;
    in.coeffs = coeffs;
    return total_loss(g, in);
  }
};

}  // namespace

TEST(Distortion, Examples) {
  EXPECT_EQ(distortion_term(0.4, 0.0), 0.0);
  const double n = 64.0;
  EXPECT_NEAR(distortion_term(1.0, n * std::log(0.5)), n * std::log(2.0), 1e-12);
  EXPECT_EQ(distortion_term(0.6, -2.5), 2.0 * distortion_term(0.3, -2.5));
  EXPECT_THROW(distortion_term(0.5, -std::numeric_limits<double>::infinity()), EvaluationError);
}

TEST(Rate, Examples) {
  EXPECT_EQ(rate_term(0.3, 0.3, 12.0, 100.0), 12.0);
  EXPECT_EQ(rate_term(0.3, 0.3, 1e9, 100.0), 100.0);
  EXPECT_NEAR(rate_term(0.1, 0.1 + std::log(2.0), 10.0, 1e3), 20.0, 1e-12);
  EXPECT_NEAR(rate_term(0.1, 0.1 + std::log(2.0), 10.0, 15.0), 15.0, 0.0);
  EXPECT_THROW(rate_term(0.5, 0.4, 1.0, 10.0), EvaluationError);
  EXPECT_THROW(rate_term(0.1, 0.4, -1.0, 10.0), DomainError);
}

TEST(Rate, NonIncreasingInWeightAndCapped) {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const double w0 = rng.uniform(0.2, 1.0), rate = rng.uniform(0.0, 50.0), rmax = rng.uniform(1.0, 60.0);
    const double a = rng.uniform(0.0, w0), b = rng.uniform(a, w0);
    EXPECT_GE(rate_term(a, w0, rate, rmax), rate_term(b, w0, rate, rmax));
    EXPECT_LE(rate_term(a, w0, rate, rmax), rmax);
  }
}

TEST(Rate, ClipBlocksGradient) {
  ParamSet p;
  p.add("r", Tensor::scalar(500.0));
  ad::Graph g(&p);
  ad::Var clipped = ad::clamp_max(ad::mul(g.param("r"), ad::exp(g.constant(0.2))), 100.0);
  g.backward(clipped);
  EXPECT_EQ(clipped.item(), 100.0);
  EXPECT_EQ(p.grad("r")[0], 0.0);
}

TEST(L3, WorkedExample) {
  const std::vector<double> w{0.6, 0.4}, d{0.1, 0.9};
  EXPECT_NEAR(loss_l3(w, d, GateConfig{0.5, 0.5}), 0.17, 1e-15);
}

TEST(L3, ZeroCases) {
  const std::vector<double> w(4, 0.25), d(4, 0.2);
  EXPECT_EQ(loss_l3(w, d, GateConfig{0.5, 0.25}), 0.0);
  const std::vector<double> w2{0.5, 0.5, 0.0}, d2{0.1, 0.3, 0.95};
  EXPECT_EQ(loss_l3(w2, d2, GateConfig{0.5, 0.5}), 0.0);
  const std::vector<double> w3{0.5, 0.5}, d3{0.1, 0.5};
  EXPECT_EQ(loss_l3(w3, d3, GateConfig{0.5, 0.5}), 0.0);
  EXPECT_THROW(loss_l3(w3, d2, GateConfig{}), ShapeError);
}

TEST(L3, ZeroOnlyAtTargetsAndNonNegative) {
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const std::size_t K = 1 + rng.below(7);
    std::vector<double> w(K), d(K);
    for (std::size_t k = 0; k < K; ++k) w[k] = rng.uniform(), d[k] = rng.uniform();
    const GateConfig gate{0.5, rng.uniform()};
    const double v = loss_l3(w, d, gate);
    EXPECT_GE(v, 0.0);
    bool at_target = true;
    for (std::size_t k = 0; k < K; ++k) at_target = at_target && (d[k] < 0.5 ? w[k] == gate.w_target : w[k] == 0.0);
    EXPECT_EQ(v == 0.0, at_target);
  }
}

TEST(Gate, DefaultTargetAndValidation) {
  const std::vector<double> d{0.1, 0.7, 0.3, 0.99};
  EXPECT_EQ(default_w_target(d, 0.5), 0.5);
  EXPECT_EQ(default_w_target(std::vector<double>{0.9}, 0.5), 0.0);
  EXPECT_THROW((GateConfig{0.0, 0.5}.validate()), ConfigError);
  EXPECT_THROW((GateConfig{0.5, 1.5}.validate()), ConfigError);
}

TEST(L2, EmpiricalModelGivesZero) {
  // Two contexts, two symbols; q equals the within-context frequencies.
  const std::vector<int> s{0, 1, 1, 1, 0, 0, 0, 1};
  const std::vector<int> c{0, 0, 0, 0, 1, 1, 1, 1};
  const std::vector<double> q{0.25, 0.75, 0.75, 0.75, 0.75, 0.75, 0.75, 0.25};
  EXPECT_NEAR(empirical_kl<int>(s, c, q), 0.0, 1e-15);
}

TEST(L2, UniformModelDeterministicData) {
  const std::vector<int> s{5};
  const std::vector<int> c{0};
  const std::vector<double> q{1.0 / 128.0};
  EXPECT_NEAR(empirical_kl<int>(s, c, q), std::log(128.0), 1e-12);
}

TEST(L2, EightBinStreamBruteForce) {
  Rng rng(3);
  const std::size_t n = 400;
  std::vector<int> s(n), c(n);
  std::map<int, std::vector<double>> model;
  for (int ctx = 0; ctx < 3; ++ctx) {
    std::vector<double> q(8);
    double z = 0.0;
    for (double& v : q) z += (v = rng.uniform(0.05, 1.0));
    for (double& v : q) v /= z;
    model[ctx] = q;
  }
  std::vector<double> prob(n);
  for (std::size_t i = 0; i < n; ++i) {
    c[i] = static_cast<int>(rng.below(3));
    s[i] = static_cast<int>(rng.below(c[i] == 2 ? 3 : 8));
    prob[i] = model[c[i]][static_cast<std::size_t>(s[i])];
  }
  // sum_c P(c) KL(P(.|c) || q(.|c)) by enumeration.
  std::map<int, std::vector<double>> counts;
  for (int ctx = 0; ctx < 3; ++ctx) counts[ctx].assign(8, 0.0);
  for (std::size_t i = 0; i < n; ++i) counts[c[i]][static_cast<std::size_t>(s[i])] += 1.0;
  double want = 0.0;
  for (auto& [ctx, h] : counts) {
    double total = 0.0;
    for (double v : h) total += v;
    std::vector<double> p(8);
    for (std::size_t b = 0; b < 8; ++b) p[b] = h[b] / total;
    want += total / static_cast<double>(n) * entropy::kl_divergence(p, model[ctx]);
  }
  EXPECT_NEAR(empirical_kl<int>(s, c, prob), want, 1e-12);
  EXPECT_GE(empirical_kl<int>(s, c, prob), 0.0);
}

TEST(L2, GraphTermAndWarmup) {
  ParamSet p;
  p.add("nll", Tensor::vector({1.0, 2.0, 0.5, 0.5}));
  ad::Graph g(&p);
  const std::vector<int> s{0, 1, 0, 0};
  const std::vector<int> c{7, 7, 7, 7};
  const L2Term t = loss_l2<int>(g, g.param("nll"), s, c);
  EXPECT_FALSE(t.warmup);
  const double h = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
  EXPECT_NEAR(t.value.item(), 1.0 - h, 1e-15);
  const L2Term w = loss_l2<int>(g, g.param("nll"), s, c, false);
  EXPECT_TRUE(w.warmup);
  EXPECT_EQ(w.value.item(), 0.0);
  EXPECT_THROW(loss_l2<int>(g, g.param("nll"), std::vector<int>{0}, std::vector<int>{0}), ShapeError);
}

TEST(Total, AssemblyMatchesComponents) {
  ToyLoss toy;
  ad::Graph g;
  const LossBreakdown b = toy.build(g).breakdown;
  const double w0 = 0.7;
  double l1 = 0.0;
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(b.distortion[k], toy.w[k] * toy.distortion, 1e-15);
    EXPECT_NEAR(b.rate_raw[k], toy.rates[k] * std::exp(w0 - toy.w[k]), 1e-12);
    EXPECT_EQ(b.rate_clipped[k], b.rate_raw[k]);
    EXPECT_EQ(b.rate_unweighted[k], toy.rates[k]);
    l1 += b.distortion[k] + toy.coeffs.lambda * b.rate_clipped[k];
  }
  EXPECT_NEAR(b.l1, l1, 1e-12);
  EXPECT_NEAR(b.l3, 0.09 + 0.09, 1e-15);
  EXPECT_NEAR(b.total, b.l1 + b.l2 + b.l3, 1e-12);
  EXPECT_EQ(b.lambda, 0.01);
  EXPECT_EQ(b.r_max, 1e6);
}

TEST(Total, ClippedRateInvariants) {
  ToyLoss toy;
  toy.coeffs.r_max = 8.0;
  ad::Graph g;
  const LossBreakdown b = toy.build(g).breakdown;
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_LE(b.rate_clipped[k], 8.0);
    EXPECT_LE(b.rate_clipped[k], b.rate_raw[k]);
  }
  EXPECT_EQ(b.rate_clipped[0], 8.0);
}

TEST(Total, PureDistortion) {
  ToyLoss toy;
  toy.coeffs = LossWeights{0.0, 1e6, 0.0, 0.0};
  ad::Graph g;
  const LossBreakdown b = toy.build(g).breakdown;
  EXPECT_NEAR(b.total, toy.distortion, 1e-15);
}

TEST(Total, PerfectFitLeavesOnlyL3) {
  ToyLoss toy;
  toy.distortion = 0.0;
  toy.rates = {0.0, 0.0};
  toy.l2 = 0.0;
  ad::Graph g;
  const LossBreakdown b = toy.build(g).breakdown;
  EXPECT_NEAR(b.total, loss_l3(toy.w.values(), toy.d_norm, toy.gate), 1e-15);
}

TEST(Total, RejectsBadInputs) {
  ToyLoss toy;
  toy.d_norm = {0.1};
  ad::Graph g;
  EXPECT_THROW(toy.build(g), ShapeError);
  ToyLoss bad_w0;
  ad::Graph g2;
  LossInputs in;
  in.weights = g2.constant(bad_w0.w);
  in.w0 = g2.constant(0.5);
  in.distortion_nll = g2.constant(1.0);
  in.rate_nats = {g2.constant(1.0), g2.constant(1.0)};
  in.l2 = g2.constant(0.0);
  in.d_norm = bad_w0.d_norm;
  EXPECT_THROW(total_loss(g2, in), EvaluationError);
}

TEST(Total, GradCheckOnToyDeployment) {
  // Two cameras, 8 x 8 grid, 4 x 4 latent, through every model component.
  EXPECT_LT(harness::grad_check_toy(1).max_error, 1e-4);
  EXPECT_LT(harness::grad_check_toy(2, harness::Method::kEqual).max_error, 1e-4);
}

TEST(Bounds, JointEntropyDominatesMarginal) {
  Rng rng(4);
  EXPECT_EQ(harness::joint_entropy_failures(rng, 200), 0u);
}

TEST(Bounds, VariationalDecoderBelowTrueLikelihood) {
  Rng rng(5);
  EXPECT_EQ(harness::variational_decoder_failures(rng, 100), 0u);
}

TEST(Bounds, KlNonNegative) {
  Rng rng(6);
  EXPECT_EQ(harness::kl_failures(rng, 1000), 0u);
}
