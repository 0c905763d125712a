#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "pib/numerics/grad_check.hpp"
#include "pib/random.hpp"
#include "pib/temporal_entropy.hpp"

using namespace pib;
using namespace pib::entropy;

namespace {

Tensor random_latent(const Shape& s, Rng& rng) {
  Tensor t(s);
  for (double& v : t.values()) v = std::round(rng.uniform(-4.0, 4.0));
  return t;
}

double softplus(double x) { return std::log1p(std::exp(x)); }

}  // namespace

TEST(Pmf, CentralBinOracle) {
  EXPECT_NEAR(pmf({0.0, 1.0, 1.0}, 0), 0.3829249225480262073, 1e-15);
}

TEST(Pmf, SymmetricAboutZero) {
  for (double s : {0.3, 1.0, 7.0})
    for (int b = 1; b < 63; ++b) EXPECT_NEAR(pmf({0.0, s, 1.0}, b), pmf({0.0, s, 1.0}, -b), 1e-15);
}

TEST(Pmf, LargeSigmaFlatInterior) {
  // Tails fold into the edge bins, so only the interior becomes flat: every
  // interior bin approaches 1 / (sigma sqrt(2 pi)).
  const DiscretizedGaussian m{0.0, 100.0 * 64.0, 1.0};
  const double flat = 1.0 / (m.sigma * std::sqrt(2.0 * std::numbers::pi));
  for (int b = -63; b <= 62; ++b) EXPECT_NEAR(pmf(m, b) / flat, 1.0, 0.05);
  EXPECT_NEAR(pmf(m, 0) / pmf(m, 62), 1.0, 0.05);
  EXPECT_GT(pmf(m, -64), 0.49);
  EXPECT_GT(pmf(m, 63), 0.49);
}

TEST(Pmf, EdgeBinsAbsorbTails) {
  const DiscretizedGaussian far{200.0, 1.0, 1.0};
  EXPECT_NEAR(pmf(far, 63), 1.0, 1e-15);
  EXPECT_NEAR(pmf(DiscretizedGaussian{-64.0, 1.0, 1.0}, -64), normal_cdf(0.5), 1e-15);
}

TEST(Pmf, DomainErrors) {
  EXPECT_THROW(pmf({0.0, 1.0, 1.0}, 64), DomainError);
  EXPECT_THROW(pmf({0.0, 1.0, 1.0}, -65), DomainError);
  EXPECT_THROW(pmf({0.0, 0.0, 1.0}, 0), DomainError);
  EXPECT_THROW(pmf_table({0.0, -1.0, 1.0}), DomainError);
}

TEST(Pmf, NormalizedAndTableMatchesPerBin) {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const DiscretizedGaussian m{rng.uniform(-80.0, 80.0), std::exp(rng.uniform(std::log(1e-3), std::log(1e3))), 1.0};
    const std::vector<double> t = pmf_table(m);
    EXPECT_NEAR(std::accumulate(t.begin(), t.end(), 0.0), 1.0, 1e-9);
    for (int b = kLatentSupport.lo; b <= kLatentSupport.hi; b += 9) {
      EXPECT_NEAR(t[static_cast<std::size_t>(b - kLatentSupport.lo)], pmf(m, b), 1e-15);
    }
  }
}

TEST(Pmf, TableWithMeanOnBinEdge) {
  for (double mu : {0.5, -0.5, 3.5, -20.5}) {
    for (double sigma : {1e-3, 0.3, 2.0}) {
      const DiscretizedGaussian m{mu, sigma, 1.0};
      const std::vector<double> t = pmf_table(m);
      for (int b = kLatentSupport.lo; b <= kLatentSupport.hi; ++b) {
        EXPECT_NEAR(t[static_cast<std::size_t>(b - kLatentSupport.lo)], pmf(m, b), 1e-15) << mu << " " << sigma << " " << b;
      }
    }
  }
}

TEST(Kl, Examples) {
  const std::vector<double> p{0.3, 0.7};
  EXPECT_EQ(kl_divergence(p, p), 0.0);
  const std::vector<double> one{1.0, 0.0}, half{0.5, 0.5};
  EXPECT_NEAR(kl_divergence(one, half), std::log(2.0), 1e-15);
  EXPECT_TRUE(std::isinf(kl_divergence(half, one)));
  EXPECT_THROW(kl_divergence(p, std::vector<double>{1.0}), DomainError);
  EXPECT_THROW(kl_divergence(std::vector<double>{-0.1, 1.1}, half), DomainError);
}

TEST(Kl, EightBinOracle) {
  // Direct enumeration at 40 digits.
  const std::vector<double> p{0.05, 0.1, 0.2, 0.15, 0.05, 0.25, 0.1, 0.1};
  const std::vector<double> q{0.125, 0.2, 0.05, 0.1, 0.15, 0.1, 0.2, 0.075};
  EXPECT_NEAR(kl_divergence(p, q), 0.3565449415148173307, 1e-15);
}

TEST(Kl, NonNegativeOnRandomPairs) {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.below(20);
    std::vector<double> p(n), q(n);
    double sp = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      sp += (p[j] = rng.bernoulli(0.3) ? 0.0 : rng.uniform());
      sq += (q[j] = rng.uniform(1e-6, 1.0));
    }
    if (sp == 0.0) sp = p[0] = 1.0;
    for (std::size_t j = 0; j < n; ++j) p[j] /= sp, q[j] /= sq;
    EXPECT_GE(kl_divergence(p, q), 0.0);
    EXPECT_NEAR(kl_divergence(p, p), 0.0, 1e-12);
  }
}

TEST(StackPast, OrderAndZeroFill) {
  const Shape s{2, 2, 2};
  const Tensor a(s, 1.0), b(s, 2.0);
  const Tensor st = stack_past({a, b}, 3, s);
  EXPECT_EQ(st.shape(), (Shape{6, 2, 2}));
  EXPECT_EQ(st[0], 2.0);
  EXPECT_EQ(st[8], 1.0);
  EXPECT_EQ(st[16], 0.0);
  EXPECT_THROW(stack_past({Tensor(Shape{1, 2, 2})}, 1, s), ShapeError);
}

TEST(PredictParams, ZeroNetworkGivesBias) {
  Rng rng(1);
  ParamSet p;
  init_params(p, rng, ModelShape{3, 2, 2});
  for (auto& [name, e] : p) e.value.fill(0.0);
  p.value("entropy.tau.mu.b") = Tensor::vector({0.5, -1.0, 2.0});
  p.value("entropy.tau.sigma.b") = Tensor::vector({0.0, 1.0, -2.0});
  const Tensor past = random_latent(Shape{6, 4, 4}, rng);
  const GaussianTensors out = predict_params(p, past);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 16; ++i) {
      EXPECT_NEAR(out.mu[c * 16 + i], p.value("entropy.tau.mu.b")[c], 1e-15);
      EXPECT_NEAR(out.sigma[c * 16 + i], softplus(p.value("entropy.tau.sigma.b")[c]), 1e-15);
    }
}

TEST(PredictParams, SigmaFloorAndDeterminism) {
  Rng rng(2);
  ParamSet p;
  init_params(p, rng, ModelShape{2, 2, 2});
  p.value("entropy.tau.sigma.b").fill(-800.0);
  const Tensor past = random_latent(Shape{4, 4, 4}, rng);
  const GaussianTensors a = predict_params(p, past), b = predict_params(p, past);
  EXPECT_EQ(a.mu, b.mu);
  EXPECT_EQ(a.sigma, b.sigma);
  for (double s : a.sigma.values()) EXPECT_GE(s, kSigmaFloor);
  EXPECT_EQ(a.mu.shape(), (Shape{2, 4, 4}));
  EXPECT_THROW(predict_params(p, Tensor(Shape{3, 4, 4})), ShapeError);
}

TEST(PredictParams, CarryForwardInitialization) {
  Rng rng(3);
  ParamSet p;
  init_params(p, rng, ModelShape{2, 2, 2});
  const Tensor& w = p.value("entropy.tau.mu.W");
  EXPECT_GT(w[0 * 4 + 0], 0.9);
  EXPECT_GT(w[1 * 4 + 1], 0.9);
  EXPECT_LT(std::abs(w[0 * 4 + 2]), 0.1 + 1e-12);
}

TEST(PredictParams, CausalWindow) {
  Rng rng(4);
  ParamSet p;
  const std::size_t tau = 2;
  init_params(p, rng, ModelShape{2, 2, tau});
  const Shape s{2, 4, 4};
  std::vector<Tensor> history{random_latent(s, rng), random_latent(s, rng), random_latent(s, rng)};
  const GaussianTensors a = predict_params(p, stack_past(history, tau, s));
  history[0] = random_latent(s, rng);
  const GaussianTensors b = predict_params(p, stack_past(history, tau, s));
  EXPECT_EQ(a.mu, b.mu);
  EXPECT_EQ(a.sigma, b.sigma);
  history[1] = random_latent(s, rng);
  const GaussianTensors c = predict_params(p, stack_past(history, tau, s));
  EXPECT_NE(a.mu, c.mu);
}

TEST(PredictParams, GradientOfMeanSum) {
  Rng rng(5);
  ParamSet p;
  init_params(p, rng, ModelShape{2, 2, 2});
  const Tensor past = random_latent(Shape{4, 4, 4}, rng);
  const GradCheckResult r = grad_check(
      [&](ad::Graph& g) {
        const GaussianVars v = predict_params(g, past);
        return ad::add(ad::sum(v.mu), ad::mul_const(ad::sum(ad::log(v.sigma)), 0.3));
      },
      p);
  EXPECT_LT(r.max_error, 1e-4);
}

TEST(ContextKey, EqualContextsEqualPredictions) {
  Rng rng(6);
  ParamSet p;
  init_params(p, rng, ModelShape{2, 2, 2});
  Tensor past(Shape{4, 8, 8});
  past.at(0, 2, 2) = 3.0;
  past.at(2, 6, 5) = -1.0;
  const GaussianTensors out = predict_params(p, past);
  std::map<std::uint64_t, std::pair<double, double>> seen;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const std::size_t i = (c * 8 + y) * 8 + x;
        const auto [it, fresh] = seen.emplace(context_key(past, c, y, x), std::make_pair(out.mu[i], out.sigma[i]));
        if (!fresh) {
          EXPECT_NEAR(it->second.first, out.mu[i], 1e-12);
          EXPECT_NEAR(it->second.second, out.sigma[i], 1e-12);
        }
      }
  EXPECT_LT(seen.size(), 128u);
  EXPECT_NE(context_key(past, 0, 2, 2), context_key(past, 0, 2, 3));
}

TEST(SideInfo, ShapesAndConditional) {
  Rng rng(7);
  ParamSet p;
  init_params(p, rng, ModelShape{4, 2, 2});
  ad::Graph g(&p);
  ad::Var z = g.constant(random_latent(Shape{4, 8, 8}, rng));
  ad::Var v = side_info(g, z);
  EXPECT_EQ(v.shape(), (Shape{2, 2, 2}));
  const GaussianVars prior = side_prior(g, v.shape());
  EXPECT_EQ(prior.mu.shape(), v.shape());
  for (double s : prior.sigma.value().values()) EXPECT_NEAR(s, softplus(1.0), 1e-15);
  const GaussianVars cond = conditional_params(g, Tensor(Shape{8, 8, 8}), v);
  EXPECT_EQ(cond.mu.shape(), (Shape{4, 8, 8}));
  EXPECT_THROW(side_info(g, g.constant(Tensor(Shape{4, 6, 6}))), ShapeError);
  const auto models = to_models(cond.mu.value(), cond.sigma.value());
  EXPECT_EQ(models.size(), 256u);
  EXPECT_EQ(models[5].mu, cond.mu.value()[5]);
}

TEST(SideInfo, ConditionalGradient) {
  Rng rng(8);
  ParamSet p;
  init_params(p, rng, ModelShape{2, 2, 1});
  const Tensor z = random_latent(Shape{2, 4, 4}, rng);
  const Tensor past = random_latent(Shape{2, 4, 4}, rng);
  const GradCheckResult r = grad_check(
      [&](ad::Graph& g) {
        ad::Var v = side_info(g, g.constant(z));
        const GaussianVars prior = side_prior(g, v.shape());
        const GaussianVars cond = conditional_params(g, past, v);
        return ad::add(ad::sum(ad::gaussian_box_nll(g.constant(z), cond.mu, cond.sigma)),
                       ad::sum(ad::gaussian_box_nll(v, prior.mu, prior.sigma)));
      },
      p);
  EXPECT_LT(r.max_error, 1e-4);
}
