#pragma once

// The invariant and oracle suite behind `verify`: exact-math gates, the
// full-loss gradient check on a toy deployment, coder round trips, and the
// information-theoretic bound checks. Every check is deterministic in its seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "pib/channel.hpp"
#include "pib/codec.hpp"
#include "pib/harness/config.hpp"
#include "pib/harness/records.hpp"
#include "pib/harness/system.hpp"
#include "pib/ib_loss.hpp"
#include "pib/numerics/grad_check.hpp"
#include "pib/numerics/ops.hpp"
#include "pib/random.hpp"
#include "pib/temporal_entropy.hpp"

namespace pib::harness {

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool at_most = true;  // pass iff value <= threshold, else value >= threshold
  bool passed = false;
};

inline CheckResult make_check(std::string name, double value, double threshold, bool at_most = true) {
  const bool ok = at_most ? value <= threshold : value >= threshold;
  return {std::move(name), value, threshold, at_most, ok && std::isfinite(value)};
}

inline CheckResult check_capacity_exact() {
  return make_check("capacity_exact", std::abs(channel::capacity(2e6, 1.0) - 2e6), 0.0);
}

inline CheckResult check_delay_ratio(Rng& rng, std::size_t cases) {
  double worst = 0.0;
  for (std::size_t i = 0; i < cases; ++i) {
    const double d = std::exp(rng.uniform(0.0, 20.0)), c = std::exp(rng.uniform(0.0, 25.0));
    worst = std::max(worst, std::abs(channel::delay(d, c) * c / d - 1.0));
  }
  return make_check("delay_relative_error", worst, 1e-12);
}

inline std::vector<CheckResult> check_softmax(Rng& rng, std::size_t cases) {
  double worst_sum = 0.0;
  std::size_t argmax_failures = 0;
  for (std::size_t i = 0; i < cases; ++i) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.below(32));
    Tensor p(Shape{n});
    for (double& v : p.values()) v = rng.uniform(-50.0, 50.0);
    const Tensor w = softmax(p);
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(w.values().begin(), w.values().end(), 0.0) - 1.0));
    const double shift = rng.uniform(-1e3, 1e3);
    Tensor q = p;
    for (double& v : q.values()) v += shift;
    const Tensor wq = softmax(q);
    auto argmax = [](const Tensor& t) { return std::max_element(t.values().begin(), t.values().end()) - t.values().begin(); };
    if (argmax(w) != argmax(wq) || argmax(w) != argmax(p)) ++argmax_failures;
  }
  return {make_check("softmax_sum_error", worst_sum, 1e-9),
          make_check("softmax_argmax_shift_failures", static_cast<double>(argmax_failures), 0.0)};
}

inline CheckResult check_l3_example() {
  const std::vector<double> w{0.6, 0.4}, d{0.1, 0.9};
  return make_check("l3_worked_example_error", std::abs(loss::loss_l3(w, d, loss::GateConfig{0.5, 0.5}) - 0.17),
                    1e-15);
}

// Two cameras on an 8 x 8 grid (4 x 4 latent); camera 1 delayed.
inline ExperimentConfig toy_config() {
  ExperimentConfig c;
  c.scenario = "toy";
  c.cameras = 2;
  c.rig.cameras = 2;
  c.world.height = c.world.width = 8;
  c.world.min_pedestrians = 2;
  c.world.max_pedestrians = 4;
  c.world.frames = 16;
  c.link.max_lag_frames = 2;
  c.training.eval_frames = 2;
  c.training.batch = 2;
  c.delayed_cameras = {1};
  c.loss.lambda = 0.05;
  return c;
}

inline GradCheckResult grad_check_toy(std::uint64_t seed, Method m = Method::kPib) {
  const ExperimentConfig c = toy_config();
  const Scenario s = build_scenario(c, seed, c.delayed_cameras);
  ParamSet theta = init_model(c, seed);
  Rng rng(seed);
  const Batch batch = prepare_batch(theta, s, c, m, sample_frames(c, c.training.batch, rng), rng);
  return grad_check([&](ad::Graph& g) { return forward_loss(g, s, c, m, batch).total; }, theta, 1e-5);
}

inline CheckResult check_grad_toy(std::uint64_t seed) {
  return make_check("total_loss_grad_check_max_error", grad_check_toy(seed).max_error, 1e-4);
}

struct CoderFuzzStats {
  std::size_t cases = 0;
  std::size_t roundtrip_failures = 0;
  std::size_t bound_failures = 0;
  double worst_excess = 0.0;  // max |bits - estimate| / max(128, 2% of estimate)
};

// Symbols are drawn from their own coding model, so the estimate is the
// expected code length of what is actually sent.
inline CoderFuzzStats coder_fuzz(Rng& rng, std::size_t cases, std::size_t max_elements = 400) {
  CoderFuzzStats st;
  const entropy::Support sup = entropy::kLatentSupport;
  for (std::size_t i = 0; i < cases; ++i) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.below(max_elements));
    std::vector<entropy::DiscretizedGaussian> models(n);
    std::vector<int> values(n);
    for (std::size_t j = 0; j < n; ++j) {
      models[j].mu = rng.uniform(-40.0, 40.0);
      models[j].sigma = std::exp(rng.uniform(std::log(0.05), std::log(20.0)));
      const double draw = models[j].mu + models[j].sigma * rng.normal();
      values[j] = std::clamp(static_cast<int>(std::lround(draw)), sup.lo, sup.hi);
    }
    const auto payload = codec::encode_symbols(values, models);
    const auto back = codec::decode_symbols(payload, models);
    ++st.cases;
    if (back != values) ++st.roundtrip_failures;
    const double bits = 8.0 * static_cast<double>(payload.size());
    const double est = codec::rate_estimate(values, models);
    const double excess = std::abs(bits - est) / std::max(128.0, 0.02 * est);
    st.worst_excess = std::max(st.worst_excess, excess);
    if (excess > 1.0) ++st.bound_failures;
  }
  return st;
}

inline std::vector<double> random_pmf(Rng& rng, std::size_t n, bool sparse) {
  std::vector<double> p(n);
  double total = 0.0;
  for (double& v : p) {
    v = sparse && rng.bernoulli(0.3) ? 0.0 : -std::log(1.0 - rng.uniform());
    total += v;
  }
  if (total == 0.0) p[rng.below(n)] = total = 1.0;
  for (double& v : p) v /= total;
  return p;
}

inline std::size_t kl_failures(Rng& rng, std::size_t cases) {
  std::size_t bad = 0;
  for (std::size_t i = 0; i < cases; ++i) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.below(15));
    const auto p = random_pmf(rng, n, rng.bernoulli(0.5));
    const auto q = random_pmf(rng, n, false);
    const double kl = entropy::kl_divergence(p, q);
    if (!(kl >= 0.0)) ++bad;
    if (entropy::kl_divergence(p, p) != 0.0) ++bad;
  }
  return bad;
}

inline double entropy_nats(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// H(Z, V) >= H(Z) on random joints, |Z|, |V| in [1, 8].
inline std::size_t joint_entropy_failures(Rng& rng, std::size_t cases) {
  std::size_t bad = 0;
  for (std::size_t i = 0; i < cases; ++i) {
    const std::size_t nz = 1 + static_cast<std::size_t>(rng.below(8)), nv = 1 + static_cast<std::size_t>(rng.below(8));
    const auto joint = random_pmf(rng, nz * nv, rng.bernoulli(0.5));
    std::vector<double> pz(nz, 0.0);
    for (std::size_t z = 0; z < nz; ++z)
      for (std::size_t v = 0; v < nv; ++v) pz[z] += joint[z * nv + v];
    if (entropy_nats(joint) < entropy_nats(pz) - 1e-12) ++bad;
  }
  return bad;
}

// E_p[log p(y|z)] >= E_p[log q(y|z)] for a random variational q.
inline std::size_t variational_decoder_failures(Rng& rng, std::size_t cases) {
  std::size_t bad = 0;
  for (std::size_t i = 0; i < cases; ++i) {
    const std::size_t ny = 2 + static_cast<std::size_t>(rng.below(3)), nz = 1 + static_cast<std::size_t>(rng.below(8));
    const auto joint = random_pmf(rng, ny * nz, false);
    double true_ll = 0.0, var_ll = 0.0;
    for (std::size_t z = 0; z < nz; ++z) {
      double pz = 0.0;
      for (std::size_t y = 0; y < ny; ++y) pz += joint[y * nz + z];
      const auto q = random_pmf(rng, ny, false);
      for (std::size_t y = 0; y < ny; ++y) {
        const double pyz = joint[y * nz + z];
        if (pyz == 0.0) continue;
        true_ll += pyz * std::log(pyz / pz);
        var_ll += pyz * std::log(q[y]);
      }
    }
    if (true_ll < var_ll - 1e-12) ++bad;
  }
  return bad;
}

inline CheckResult check_pmf_normalization(Rng& rng, std::size_t cases) {
  double worst = 0.0;
  for (std::size_t i = 0; i < cases; ++i) {
    const entropy::DiscretizedGaussian m{rng.uniform(-80.0, 80.0), std::exp(rng.uniform(std::log(1e-3), std::log(1e3))), 1.0};
    const auto t = entropy::pmf_table(m);
    worst = std::max(worst, std::abs(std::accumulate(t.begin(), t.end(), 0.0) - 1.0));
  }
  return make_check("pmf_normalization_error", worst, 1e-9);
}

struct VerifySizes {
  std::size_t delay_cases = 1000;
  std::size_t softmax_cases = 1000;
  std::size_t coder_cases = 10000;
  std::size_t kl_cases = 1000;
  std::size_t joint_cases = 200;
  std::size_t decoder_cases = 100;
  std::size_t pmf_cases = 1000;
};

inline std::vector<CheckResult> run_checks(std::uint64_t seed, const VerifySizes& n = {}) {
  Rng root(seed);
  std::vector<CheckResult> out;
  out.push_back(check_capacity_exact());
  Rng r1 = root.split(1);
  out.push_back(check_delay_ratio(r1, n.delay_cases));
  Rng r2 = root.split(2);
  for (auto& c : check_softmax(r2, n.softmax_cases)) out.push_back(c);
  out.push_back(check_l3_example());
  out.push_back(check_grad_toy(seed));
  Rng r3 = root.split(3);
  const CoderFuzzStats st = coder_fuzz(r3, n.coder_cases);
  out.push_back(make_check("coder_roundtrip_failures", static_cast<double>(st.roundtrip_failures), 0.0));
  out.push_back(make_check("coder_rate_bound_worst_ratio", st.worst_excess, 1.0));
  Rng r4 = root.split(4);
  out.push_back(make_check("kl_negative_failures", static_cast<double>(kl_failures(r4, n.kl_cases)), 0.0));
  Rng r5 = root.split(5);
  out.push_back(make_check("joint_entropy_failures", static_cast<double>(joint_entropy_failures(r5, n.joint_cases)), 0.0));
  Rng r6 = root.split(6);
  out.push_back(
      make_check("variational_decoder_failures", static_cast<double>(variational_decoder_failures(r6, n.decoder_cases)), 0.0));
  Rng r7 = root.split(7);
  out.push_back(check_pmf_normalization(r7, n.pmf_cases));
  return out;
}

// Columns: check, value, threshold, comparison, passed.
inline void write_checks(std::ostream& os, const std::vector<CheckResult>& checks) {
  write_row(os, {"check", "value", "threshold", "comparison", "passed"});
  for (const CheckResult& c : checks) {
    write_row(os, {c.name, format_double(c.value), format_double(c.threshold), c.at_most ? "<=" : ">=",
                   c.passed ? "1" : "0"});
  }
}

}  // namespace pib::harness
