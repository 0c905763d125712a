#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "pib/channel.hpp"
#include "pib/random.hpp"

using namespace pib;
using namespace pib::channel;

namespace {

// dB-domain arithmetic evaluated separately at 40 digits.
constexpr double kSinrAtReference = 9.894646886277539294e-4;   // d = d0, shadowing 0, I = 0.1 W
constexpr double kSinrAt500m = 3.949966348228041362;           // n = 3.5, d = 500 m, B = 2 MHz, I = 1e-15 W
constexpr double kSinrCustom = 0.2358958973456791147;          // P = 0.5 W, d = 300 m, -3.5 dB, B = 1 MHz, I = 1e-12 W

// Independent linear-domain SINR: P_rx = P * 10^(-PL/10), N = 10^(N0/10) mW/Hz * B.
double linear_sinr(const ChannelParams& p, double shadow_db) {
  const double pl_db = p.reference_loss_db + 10.0 * p.path_loss_exponent * std::log10(p.distance_m / p.reference_distance_m) + shadow_db;
  const double rx = p.tx_power_w * std::pow(10.0, -pl_db / 10.0);
  const double noise = 1e-3 * std::pow(10.0, p.noise_density_dbm_hz / 10.0) * p.bandwidth_hz;
  return rx / (p.interference_power_w + noise);
}

}  // namespace

TEST(Channel, SinrMatchesOracleAtReferenceDistance) {
  ChannelParams p;
  p.distance_m = p.reference_distance_m;
  p.interference_power_w = 0.1;
  EXPECT_NEAR(compute_sinr(p, 0.0), kSinrAtReference, 1e-9 * kSinrAtReference);
}

TEST(Channel, SinrMatchesOracleAtDefaultGeometry) {
  ChannelParams p;
  p.distance_m = 500.0;
  EXPECT_NEAR(compute_sinr(p, 0.0), kSinrAt500m, 1e-9 * kSinrAt500m);
}

TEST(Channel, SinrMatchesOracleCustom) {
  ChannelParams p;
  p.tx_power_w = 0.5;
  p.distance_m = 300.0;
  p.bandwidth_hz = 1e6;
  p.interference_power_w = 1e-12;
  EXPECT_NEAR(compute_sinr(p, -3.5), kSinrCustom, 1e-9 * kSinrCustom);
}

TEST(Channel, SinrMatchesLinearOracleOnRandomDraws) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    ChannelParams p;
    p.bandwidth_hz = std::exp(rng.uniform(std::log(1e4), std::log(1e8)));
    p.path_loss_exponent = rng.uniform(1.5, 5.0);
    p.tx_power_w = std::exp(rng.uniform(std::log(1e-3), std::log(10.0)));
    p.interference_power_w = rng.bernoulli(0.2) ? 0.0 : std::exp(rng.uniform(std::log(1e-18), std::log(1e-3)));
    p.reference_distance_m = rng.uniform(0.5, 2.0);
    p.distance_m = p.reference_distance_m * std::exp(rng.uniform(0.0, std::log(2000.0)));
    const double shadow = rng.normal(0.0, 8.0);
    const double want = linear_sinr(p, shadow);
    EXPECT_NEAR(compute_sinr(p, shadow), want, 1e-9 * want) << "draw " << i;
  }
}

TEST(Channel, SinrDecreasesWithInterference) {
  ChannelParams p;
  for (double i = 1e-15; i < 1e3; i *= 10.0) {
    p.interference_power_w = i;
    const double a = compute_sinr(p, 0.0);
    p.interference_power_w = 10.0 * i;
    EXPECT_LT(compute_sinr(p, 0.0), a);
    EXPECT_GT(compute_sinr(p, 0.0), 0.0);
  }
}

TEST(Channel, InvalidParamsRejected) {
  ChannelParams p;
  p.bandwidth_hz = 0.0;
  EXPECT_THROW(compute_sinr(p, 0.0), ConfigError);
  p = ChannelParams{};
  p.distance_m = -1.0;
  EXPECT_THROW(compute_sinr(p, 0.0), ConfigError);
  p = ChannelParams{};
  p.distance_m = 0.5;
  EXPECT_THROW(compute_sinr(p, 0.0), ConfigError);
  p = ChannelParams{};
  p.path_loss_exponent = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = ChannelParams{};
  p.tx_power_w = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Channel, CapacityExamples) {
  EXPECT_EQ(capacity(2e6, 1.0), 2e6);
  EXPECT_EQ(capacity(2e6, 0.0), 0.0);
  EXPECT_EQ(capacity(1.0, 3.0), 2.0);
  EXPECT_THROW(capacity(1.0, -0.1), DomainError);
  EXPECT_THROW(capacity(0.0, 1.0), ConfigError);
}

TEST(Channel, CapacityIncreasesInSnrAndBandwidth) {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const double b = std::exp(rng.uniform(0.0, 20.0));
    const double s = std::exp(rng.uniform(-20.0, 20.0));
    const double f = 1.0 + rng.uniform(0.01, 1.0);
    EXPECT_LT(capacity(b, s), capacity(b, s * f));
    EXPECT_LT(capacity(b, s), capacity(b * f, s));
  }
}

TEST(Channel, DelayExamples) {
  EXPECT_EQ(delay(2e6, 2e6), 1.0);
  EXPECT_EQ(delay(0.0, 5e5), 0.0);
  EXPECT_EQ(delay(2e5, 3e6), 2.0 * delay(1e5, 3e6));
  EXPECT_TRUE(std::isinf(delay(1e5, 0.0)));
  EXPECT_THROW(delay(-1.0, 1.0), DomainError);
}

TEST(Channel, DelayIsRatioToMachinePrecision) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double d = std::exp(rng.uniform(0.0, 20.0)), c = std::exp(rng.uniform(0.0, 25.0));
    EXPECT_NEAR(delay(d, c) * c / d, 1.0, 1e-12);
  }
}

TEST(Channel, DelayDecreasesInSnr) {
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const double b = std::exp(rng.uniform(5.0, 18.0)), s = std::exp(rng.uniform(-10.0, 10.0));
    EXPECT_GT(delay(1e5, capacity(b, s)), delay(1e5, capacity(b, s * 1.5)));
  }
}

TEST(Channel, NormalizeDelay) {
  EXPECT_EQ(normalize_delay(0.5, 1.0), 0.5);
  EXPECT_EQ(normalize_delay(2.0, 1.0), 1.0);
  EXPECT_EQ(normalize_delay(3.0, 3.0), 1.0);
  EXPECT_EQ(normalize_delay(std::numeric_limits<double>::infinity(), 1.0), 1.0);
  EXPECT_THROW(normalize_delay(0.5, 0.0), ConfigError);
  EXPECT_THROW(normalize_delay(-0.5, 1.0), DomainError);
}

TEST(Channel, EvaluateLinkConsistent) {
  ChannelParams p;
  p.distance_m = 300.0;
  const LinkState s = evaluate_link(p, 2.0, 1e5, 1.0);
  EXPECT_EQ(s.snr_linear, compute_sinr(p, 2.0));
  EXPECT_EQ(s.capacity_bps, capacity(p.bandwidth_hz, s.snr_linear));
  EXPECT_EQ(s.delay_s, 1e5 / s.capacity_bps);
  EXPECT_GE(s.delay_norm, 0.0);
  EXPECT_LE(s.delay_norm, 1.0);
  EXPECT_FALSE(s.dead());
}

TEST(Channel, ShadowingIsSeeded) {
  ChannelParams p;
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_shadowing(a, p), sample_shadowing(b, p));
}
