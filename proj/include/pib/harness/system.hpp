#pragma once

// One simulated deployment (world, cameras, links) and the full model on top
// of it: batch preparation, the training loss, Adam training and coded
// evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "pib/channel.hpp"
#include "pib/codec.hpp"
#include "pib/error.hpp"
#include "pib/harness/config.hpp"
#include "pib/ib_loss.hpp"
#include "pib/numerics/autodiff.hpp"
#include "pib/numerics/grad_check.hpp"
#include "pib/numerics/param_set.hpp"
#include "pib/priority.hpp"
#include "pib/random.hpp"
#include "pib/scene/camera.hpp"
#include "pib/scene/fusion.hpp"
#include "pib/scene/moda.hpp"
#include "pib/scene/world.hpp"
#include "pib/temporal_entropy.hpp"

namespace pib::harness {

struct Scenario {
  scene::World world;
  scene::CameraRig rig;
  std::vector<std::vector<Tensor>> views;  // [k][t]
  std::vector<Tensor> targets;             // [t], 1 x H x W
  std::vector<channel::LinkState> links;
  std::vector<double> d_norm;
  std::vector<double> coverage_norm;
  std::vector<std::size_t> lag;  // frames of staleness at the server
  std::vector<bool> delayed;
  double w_target = 0.0;

  std::size_t cameras() const { return links.size(); }
  std::size_t frames() const { return targets.size(); }
};

inline Scenario build_scenario(const ExperimentConfig& c, std::uint64_t seed, const std::vector<std::size_t>& delayed) {
  c.validate();
  const double eps = c.loss.epsilon;
  if (!delayed.empty() && eps >= 1.0) throw ConfigError("delayed cameras need epsilon < 1 (d_norm saturates at 1)");
  Scenario s;
  s.world = scene::generate_world(seed, c.world);
  scene::RigConfig rig = c.rig;
  rig.cameras = c.cameras;
  s.rig = scene::make_rig(c.world.height, c.world.width, rig);
  s.views = scene::observe_all(s.world, s.rig, c.observation);
  for (std::size_t t = 0; t < s.world.size(); ++t) s.targets.push_back(s.world.occupancy(t));

  Rng shadow_rng = Rng(seed).split(0x5AD0);
  s.delayed.assign(c.cameras, false);
  for (std::size_t k : delayed) s.delayed.at(k) = true;
  const double upper = c.coverage_upper.value_or(static_cast<double>(c.world.cells()));
  const Tensor roi = s.rig.full_roi();
  for (std::size_t k = 0; k < c.cameras; ++k) {
    channel::ChannelParams p = camera_link(c, k);
    const double shadow = channel::sample_shadowing(shadow_rng, p);
    if (s.delayed[k]) p.reference_loss_db += c.link.delayed_extra_loss_db;
    channel::LinkState link = channel::evaluate_link(p, shadow, c.link.payload_bits, c.link.delay_max_s);
    for (int extra = 0; s.delayed[k] && !(link.delay_norm > eps); ++extra) {
      if (extra > 300) throw ConfigError("cannot degrade camera " + std::to_string(k) + " past epsilon");
      p.reference_loss_db += 1.0;
      link = channel::evaluate_link(p, shadow, c.link.payload_bits, c.link.delay_max_s);
    }
    const double frames_late = link.delay_s / c.link.frame_period_s;
    const std::size_t lag = frames_late >= static_cast<double>(c.link.max_lag_frames)
                                ? c.link.max_lag_frames
                                : static_cast<std::size_t>(std::floor(frames_late));
    s.links.push_back(link);
    s.d_norm.push_back(link.delay_norm);
    s.lag.push_back(lag);
    s.coverage_norm.push_back(priority::normalize_coverage(s.rig.coverage(k, roi), c.coverage_lower, upper));
  }
  s.w_target = c.loss.w_target.value_or(loss::default_w_target(s.d_norm, eps));
  return s;
}

// ---------------------------------------------------------------------------
// Parameters and shapes

inline Shape latent_shape(const ExperimentConfig& c) {
  return Shape{c.model.latent_channels, c.world.height / 2, c.world.width / 2};
}

inline Shape side_shape(const ExperimentConfig& c) {
  return Shape{c.model.side_channels, c.world.height / 2 / entropy::kSideFactor,
               c.world.width / 2 / entropy::kSideFactor};
}

// R_max in nats for one camera.
inline double r_max_nats(const ExperimentConfig& c) {
  const double elements = static_cast<double>(element_count(latent_shape(c)) + element_count(side_shape(c)));
  return c.loss.r_max_bits_per_element * elements * std::numbers::ln2;
}

inline ParamSet init_model(const ExperimentConfig& c, std::uint64_t seed) {
  Rng rng = Rng(seed).split(0x1417);
  ParamSet p;
  priority::init_params(p, rng, "priority.", c.model.priority_hidden);
  entropy::init_params(p, rng, entropy::ModelShape{c.model.latent_channels, c.model.side_channels, c.model.tau});
  scene::init_params(p, rng, scene::FusionShape{c.model.latent_channels, c.model.fused_channels});
  return p;
}

inline priority::Weights current_weights(const ParamSet& p, const Scenario& s, const ExperimentConfig& c, Method m) {
  if (m == Method::kEqual) return priority::equal_weights(s.cameras());
  Tensor scores(Shape{s.cameras()});
  for (std::size_t k = 0; k < s.cameras(); ++k) scores[k] = priority::priority_score(s.d_norm[k], s.coverage_norm[k], p);
  return priority::compute_weights(scores, c.loss.w0_mode, c.loss.w0_constant);
}

inline priority::WeightVars weight_vars(ad::Graph& g, const Scenario& s, const ExperimentConfig& c, Method m) {
  if (m == Method::kEqual) {
    const priority::Weights w = priority::equal_weights(s.cameras());
    return {g.constant(w.w), g.constant(w.w0)};
  }
  std::vector<ad::Var> scores;
  for (std::size_t k = 0; k < s.cameras(); ++k) scores.push_back(priority::score(g, s.d_norm[k], s.coverage_norm[k]));
  return priority::compute_weights(g, ad::concat(scores), c.loss.w0_mode, c.loss.w0_constant);
}

inline Tensor round_tensor(const Tensor& x) { return codec::dequantize(codec::quantize(x)); }

// Frames in [first_train, first_eval) are used for training, the rest for evaluation.
inline std::size_t first_train_frame(const ExperimentConfig& c) { return c.warmup_frames(); }
inline std::size_t first_eval_frame(const ExperimentConfig& c) { return c.world.frames - c.training.eval_frames; }

// ---------------------------------------------------------------------------
// Batches

struct CameraSample {
  std::size_t frame = 0;              // source frame, t - lag
  Tensor past;                        // tau stacked quantized latents, most recent first
  Tensor symbols;                     // hard-quantized current latent
  std::vector<int> symbol_ints;
  std::vector<std::uint64_t> contexts;
  Tensor z_noise;
  Tensor v_noise;
};

struct Sample {
  std::size_t t = 0;
  std::vector<CameraSample> cams;
};

using Batch = std::vector<Sample>;

// Quantities held fixed within one step: the quantized temporal contexts, the
// hard symbols supervising the temporal model, and the training noise.
inline Batch prepare_batch(ParamSet& p, const Scenario& s, const ExperimentConfig& c, Method m,
                           const std::vector<std::size_t>& frames, Rng& rng) {
  const priority::Weights w = current_weights(p, s, c, m);
  const Shape zs = latent_shape(c), vs = side_shape(c);
  const std::size_t tau = c.model.tau, K = s.cameras();
  Batch batch;
  ad::Graph g(&p);
  std::map<std::pair<std::size_t, std::size_t>, Tensor> cache;
  auto latent_q = [&](std::size_t k, std::size_t f) -> const Tensor& {
    auto key = std::make_pair(k, f);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    Tensor z = scene::encode(g, s.views[k][f], g.constant(w.w[k]), K).value();
    return cache.emplace(key, round_tensor(z)).first->second;
  };
  for (std::size_t t : frames) {
    Sample sample{t, {}};
    for (std::size_t k = 0; k < K; ++k) {
      if (t < s.lag[k] + tau) throw EvaluationError("prepare_batch: frame " + std::to_string(t) + " lacks history");
      CameraSample cs;
      cs.frame = t - s.lag[k];
      std::vector<Tensor> history;
      for (std::size_t i = tau; i >= 1; --i) history.push_back(latent_q(k, cs.frame - i));
      cs.past = entropy::stack_past(history, tau, zs);
      cs.symbols = latent_q(k, cs.frame);
      cs.symbol_ints = codec::quantize(cs.symbols).values;
      for (std::size_t ch = 0; ch < zs[0]; ++ch)
        for (std::size_t y = 0; y < zs[1]; ++y)
          for (std::size_t x = 0; x < zs[2]; ++x) cs.contexts.push_back(entropy::context_key(cs.past, ch, y, x));
      cs.z_noise = codec::uniform_noise(zs, rng);
      cs.v_noise = codec::uniform_noise(vs, rng);
      sample.cams.push_back(std::move(cs));
    }
    batch.push_back(std::move(sample));
  }
  return batch;
}

inline std::vector<std::size_t> sample_frames(const ExperimentConfig& c, std::size_t count, Rng& rng) {
  const std::size_t lo = first_train_frame(c), hi = first_eval_frame(c);
  if (hi <= lo) throw ConfigError("no training frames between warm-up and evaluation window");
  std::vector<std::size_t> out(count);
  for (auto& t : out) t = lo + static_cast<std::size_t>(rng.below(hi - lo));
  return out;
}

// ---------------------------------------------------------------------------
// Loss

inline loss::LossResult forward_loss(ad::Graph& g, const Scenario& s, const ExperimentConfig& c, Method m,
                                     const Batch& batch) {
  if (batch.empty()) throw EvaluationError("forward_loss: empty batch");
  const std::size_t K = s.cameras();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  priority::WeightVars wv = weight_vars(g, s, c, m);

  std::vector<std::vector<ad::Var>> rates(K), nlls(K);
  std::vector<std::vector<int>> symbols(K);
  std::vector<std::vector<std::uint64_t>> contexts(K);
  std::vector<ad::Var> distortion;
  for (const Sample& sample : batch) {
    std::vector<ad::Var> aligned;
    for (std::size_t k = 0; k < K; ++k) {
      const CameraSample& cs = sample.cams[k];
      ad::Var wk = ad::index(wv.w, k);
      ad::Var z = scene::encode(g, s.views[k][cs.frame], wk, K);
      ad::Var z_tilde = ad::add_const(z, cs.z_noise);
      ad::Var v_tilde = ad::add_const(entropy::side_info(g, z), cs.v_noise);
      entropy::GaussianVars prior = entropy::side_prior(g, v_tilde.shape());
      entropy::GaussianPre heads = entropy::temporal_heads(g, cs.past);
      entropy::GaussianVars cond = entropy::conditional_params(g, heads, v_tilde);
      rates[k].push_back(ad::add(ad::sum(ad::gaussian_box_nll(z_tilde, cond.mu, cond.sigma)),
                                 ad::sum(ad::gaussian_box_nll(v_tilde, prior.mu, prior.sigma))));
      nlls[k].push_back(ad::gaussian_box_nll(g.constant(cs.symbols), heads.mu, entropy::positive_scale(heads.sigma_pre)));
      symbols[k].insert(symbols[k].end(), cs.symbol_ints.begin(), cs.symbol_ints.end());
      contexts[k].insert(contexts[k].end(), cs.contexts.begin(), cs.contexts.end());
      aligned.push_back(scene::align(g, z_tilde, s.rig.masks[k]));
    }
    ad::Var logits = scene::fuse_logits(g, aligned, wv.w);
    distortion.push_back(ad::sum(ad::bernoulli_nll_logits(logits, s.targets[sample.t])));
  }

  loss::LossInputs in;
  in.weights = wv.w;
  in.w0 = wv.w0;
  in.distortion_nll = ad::mul_const(ad::add_n(distortion), inv_b);
  std::vector<ad::Var> l2_terms;
  for (std::size_t k = 0; k < K; ++k) {
    in.rate_nats.push_back(ad::mul_const(ad::add_n(rates[k]), inv_b));
    l2_terms.push_back(loss::loss_l2<std::uint64_t>(g, ad::concat(nlls[k]), symbols[k], contexts[k]).value);
  }
  in.l2 = ad::add_n(l2_terms);
  in.d_norm = s.d_norm;
  in.gate = loss::GateConfig{c.loss.epsilon, s.w_target};
  in.coeffs = loss::LossWeights{c.loss.lambda, r_max_nats(c), c.loss.alpha2, c.loss.alpha3};
  return loss::total_loss(g, in);
}

// ---------------------------------------------------------------------------
// Optimizer

class Adam {
 public:
  explicit Adam(const TrainingConfig& t) : lr_(t.learning_rate), b1_(t.beta1), b2_(t.beta2), eps_(t.adam_epsilon) {}

  void step(ParamSet& p) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& [name, e] : p) {
      auto& [m, v] = moments_[name];
      if (m.empty()) m.assign(e.value.size(), 0.0), v.assign(e.value.size(), 0.0);
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const double g = e.grad[i];
        m[i] = b1_ * m[i] + (1.0 - b1_) * g;
        v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
        e.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainLogRow {
  std::size_t step = 0;
  loss::LossBreakdown breakdown;
  std::vector<double> weights;
};

struct TrainResult {
  ParamSet params;
  std::vector<TrainLogRow> log;
  double grad_check_error = std::numeric_limits<double>::quiet_NaN();
};

inline TrainResult train(const ExperimentConfig& c, const Scenario& s, Method m, std::uint64_t seed) {
  TrainResult r;
  r.params = init_model(c, seed);
  Rng rng = Rng(seed).split(0x7EA1);
  Adam adam(c.training);
  for (std::size_t step = 0; step < c.training.steps; ++step) {
    const Batch batch = prepare_batch(r.params, s, c, m, sample_frames(c, c.training.batch, rng), rng);
    r.params.zero_grad();
    ad::Graph g(&r.params);
    loss::LossResult out;
    try {
      out = forward_loss(g, s, c, m, batch);
    } catch (const EvaluationError& e) {
      throw EvaluationError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    g.backward(out.total);
    if (!r.params.all_finite()) throw EvaluationError("training diverged at step " + std::to_string(step));
    r.log.push_back({step, out.breakdown, current_weights(r.params, s, c, m).w.storage()});
    adam.step(r.params);
  }
  if (c.training.final_grad_check) {
    Batch probe = prepare_batch(r.params, s, c, m, sample_frames(c, 1, rng), rng);
    ParamSet theta = r.params;
    const GradCheckResult gc =
        grad_check([&](ad::Graph& g) { return forward_loss(g, s, c, m, probe).total; }, theta, 1e-5);
    r.grad_check_error = gc.max_error;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation with real bitstreams

struct EvalResult {
  std::vector<double> bits_per_camera;  // mean payload bits per transmitted frame
  double total_bits = 0.0;              // sum over cameras, per frame
  double estimate_bits = 0.0;           // model cross-entropy, summed the same way
  scene::ModaResult moda;
  std::vector<double> weights;
  double w0 = 0.0;
  std::size_t frames = 0;
};

inline EvalResult evaluate(const ParamSet& trained, const Scenario& s, const ExperimentConfig& c, Method m) {
  ParamSet p = trained;
  const priority::Weights w = current_weights(p, s, c, m);
  const std::size_t K = s.cameras(), tau = c.model.tau;
  const std::size_t t0 = first_eval_frame(c), T = s.frames();
  const Shape zs = latent_shape(c);
  EvalResult r;
  r.weights = w.w.storage();
  r.w0 = w.w0;
  r.frames = T - t0;
  r.bits_per_camera.assign(K, 0.0);
  std::vector<double> estimate(K, 0.0);
  std::vector<std::vector<Tensor>> decoded(T, std::vector<Tensor>(K));
  scene::ModaCounts counts;

  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t lo = t0 - s.lag[k] - tau;
    std::vector<std::optional<Tensor>> z_cont(T), z_hat(T);
    ad::Graph enc(&p);
    for (std::size_t f = lo; f + s.lag[k] < T; ++f) {
      z_cont[f] = scene::encode(enc, s.views[k][f], enc.constant(w.w[k]), K).value();
      z_hat[f] = round_tensor(*z_cont[f]);
    }
    for (std::size_t t = t0; t < T; ++t) {
      const std::size_t f = t - s.lag[k];
      ad::Graph g(&p);
      std::vector<Tensor> history;
      for (std::size_t i = tau; i >= 1; --i) history.push_back(*z_hat[f - i]);
      const Tensor past = entropy::stack_past(history, tau, zs);
      codec::QuantizedFeature zq = codec::quantize(*z_cont[f]);
      codec::QuantizedFeature vq = codec::quantize(entropy::side_info(g, g.constant(*z_cont[f])).value());
      zq.camera_id = vq.camera_id = static_cast<std::uint16_t>(k);
      zq.frame_index = vq.frame_index = static_cast<std::uint32_t>(f);
      const entropy::GaussianVars prior = entropy::side_prior(g, vq.shape);
      const auto v_models = entropy::to_models(prior.mu.value(), prior.sigma.value());
      const entropy::GaussianPre heads = entropy::temporal_heads(g, past);
      auto z_models_for = [&](const codec::QuantizedFeature& v) {
        const entropy::GaussianVars cond = entropy::conditional_params(g, heads, g.constant(codec::dequantize(v)));
        return entropy::to_models(cond.mu.value(), cond.sigma.value());
      };
      const auto z_models = z_models_for(vq);
      const codec::Bitstream bs = codec::encode_frame(vq, v_models, zq, z_models, static_cast<std::uint8_t>(tau));
      if (c.training.verify_decode) {
        const codec::Bitstream wire = codec::Bitstream::parse(bs.serialize());
        const codec::DecodedFrame back = codec::decode_frame(wire, v_models, z_models_for);
        if (back.z.values != zq.values || back.v.values != vq.values) {
          throw CoderError("decode mismatch for camera " + std::to_string(k) + " frame " + std::to_string(f));
        }
      }
      r.bits_per_camera[k] += static_cast<double>(bs.payload_bits());
      estimate[k] += codec::rate_estimate(zq, z_models) + codec::rate_estimate(vq, v_models);
      decoded[t][k] = codec::dequantize(zq);
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    r.bits_per_camera[k] /= static_cast<double>(r.frames);
    r.total_bits += r.bits_per_camera[k];
    r.estimate_bits += estimate[k] / static_cast<double>(r.frames);
  }
  for (std::size_t t = t0; t < T; ++t) {
    const Tensor probs = scene::fuse_and_decode(decoded[t], w.w, s.rig, p);
    counts += scene::match_detections(probs, s.targets[t], c.world.width);
  }
  r.moda = scene::moda_from_counts(counts);
  return r;
}

}  // namespace pib::harness
