#pragma once

// Experiment configuration, read from JSON.
//
// Every key is optional; unknown keys are rejected. Schema (defaults shown):
//
// {
//   "scenario": "default",
//   "seeds": [1],
//   "method": "pib",                      // "pib" | "equal" (fixed 1/K weights)
//   "cameras": 7,
//   "delayed_cameras": [],                // camera indices whose link is degraded
//   "delay_order": null,                  // camera order used by the delay sweep (default 0..K-1)
//   "world": {"height": 16, "width": 16, "min_pedestrians": 5, "max_pedestrians": 15,
//             "frames": 400, "move_probability": 0.8},
//   "rig": {"focal_ring": 0.3, "fov_radius": 0.42},
//   "observation": {"noise_sigma": 0.3, "occlusion": 0.2},
//   "channel": {"carrier_freq_hz": 2.4e9, "bandwidth_hz": 2e6, "path_loss_exponent": 3.5,
//               "shadowing_sigma_db": 8, "tx_power_w": 1, "interference_power_w": 1e-15,
//               "noise_density_dbm_hz": -174, "distance_m": 300, "reference_distance_m": 1,
//               "reference_loss_db": 40.045997,
//               "payload_bits": 1e5, "delay_max_s": 1, "frame_period_s": 0.5, "max_lag_frames": 8,
//               "delayed_extra_loss_db": 40,
//               "per_camera": [ {<any of the link keys above>}, ... ]},
//   "coverage": {"lower": 0, "upper": null},   // null: number of grid cells
//   "model": {"latent_channels": 4, "side_channels": 2, "fused_channels": 4, "tau": 2,
//             "priority_hidden": 16},
//   "loss": {"lambda": 0.01, "r_max_bits_per_element": 2, "alpha2": 1, "alpha3": 1,
//            "epsilon": 0.5, "w_target": null,  // null: 1 / on-time camera count
//            "w0_mode": "running_max", "w0_constant": 1},
//   "training": {"steps": 2000, "learning_rate": 1e-3, "beta1": 0.9, "beta2": 0.999, "adam_epsilon": 1e-8,
//                "batch": 4, "eval_frames": 40, "final_grad_check": true, "verify_decode": true},
//   "sweep": {"axis": "lambda", "values": [0.001, 0.01, 0.1], "include_ablation": true},
//   "output": "out"
// }

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pib/channel.hpp"
#include "pib/error.hpp"
#include "pib/ib_loss.hpp"
#include "pib/priority.hpp"
#include "pib/scene/camera.hpp"
#include "pib/scene/world.hpp"

namespace pib::harness {

inline constexpr const char* kCodeVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

enum class Method { kPib, kEqual };

inline const char* to_string(Method m) { return m == Method::kPib ? "pib" : "equal"; }

enum class SweepAxis { kLambda, kDelayed };

struct LinkConfig {
  channel::ChannelParams base;
  double payload_bits = 1e5;
  double delay_max_s = 1.0;
  double frame_period_s = 0.5;
  std::size_t max_lag_frames = 8;
  double delayed_extra_loss_db = 40.0;
  std::vector<nlohmann::json> per_camera;  // overrides applied on top of base
};

struct ModelConfig {
  std::size_t latent_channels = 4;
  std::size_t side_channels = 2;
  std::size_t fused_channels = 4;
  std::size_t tau = 2;
  std::size_t priority_hidden = 16;
};

struct LossConfig {
  double lambda = 0.01;
  double r_max_bits_per_element = 2.0;
  double alpha2 = 1.0;
  double alpha3 = 1.0;
  double epsilon = 0.5;
  std::optional<double> w_target;
  priority::W0Mode w0_mode = priority::W0Mode::kRunningMax;
  double w0_constant = 1.0;
};

struct TrainingConfig {
  std::size_t steps = 2000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch = 4;
  std::size_t eval_frames = 40;
  bool final_grad_check = true;
  bool verify_decode = true;
};

struct SweepConfig {
  SweepAxis axis = SweepAxis::kLambda;
  std::vector<double> values{0.001, 0.01, 0.1};
  bool include_ablation = true;
};

struct ExperimentConfig {
  std::string scenario = "default";
  std::vector<std::uint64_t> seeds{1};
  Method method = Method::kPib;
  std::size_t cameras = 7;
  std::vector<std::size_t> delayed_cameras;
  std::vector<std::size_t> delay_order;
  scene::WorldConfig world;
  scene::RigConfig rig;
  scene::ObservationConfig observation;
  LinkConfig link;
  double coverage_lower = 0.0;
  std::optional<double> coverage_upper;
  ModelConfig model;
  LossConfig loss;
  TrainingConfig training;
  SweepConfig sweep;
  std::string output = "out";

  ExperimentConfig() {
    link.base.distance_m = 300.0;
    world.frames = 400;
  }

  std::vector<std::size_t> effective_delay_order() const {
    if (!delay_order.empty()) return delay_order;
    std::vector<std::size_t> order(cameras);
    for (std::size_t k = 0; k < cameras; ++k) order[k] = k;
    return order;
  }

  std::size_t warmup_frames() const { return link.max_lag_frames + model.tau; }

  void validate() const {
    if (seeds.empty()) throw ConfigError("seeds must be non-empty");
    if (cameras == 0) throw ConfigError("cameras must be positive");
    for (std::size_t k : delayed_cameras)
      if (k >= cameras) throw ConfigError("delayed camera index " + std::to_string(k) + " out of range");
    if (!delay_order.empty()) {
      std::set<std::size_t> seen(delay_order.begin(), delay_order.end());
      if (seen.size() != delay_order.size()) throw ConfigError("delay_order has repeated cameras");
      for (std::size_t k : delay_order)
        if (k >= cameras) throw ConfigError("delay_order index out of range");
    }
    world.validate();
    if (world.height % 8 != 0 || world.width % 8 != 0) {
      throw ConfigError("world: height and width must be multiples of 8 (latent stride 2, side stride 4)");
    }
    observation.validate();
    link.base.validate();
    if (link.per_camera.size() > cameras) throw ConfigError("channel.per_camera lists more entries than cameras");
    if (!(link.payload_bits > 0.0)) throw ConfigError("channel: payload_bits must be positive");
    if (!(link.delay_max_s > 0.0)) throw ConfigError("channel: delay_max_s must be positive");
    if (!(link.frame_period_s > 0.0)) throw ConfigError("channel: frame_period_s must be positive");
    if (!(link.delayed_extra_loss_db >= 0.0)) throw ConfigError("channel: delayed_extra_loss_db must be >= 0");
    if (coverage_upper && !(*coverage_upper > coverage_lower)) throw ConfigError("coverage: upper must exceed lower");
    if (model.tau < 1 || model.tau > 255) throw ConfigError("model: tau must lie in [1, 255]");
    if (model.latent_channels == 0 || model.side_channels == 0 || model.fused_channels == 0 ||
        model.priority_hidden == 0) {
      throw ConfigError("model: channel counts must be positive");
    }
    if (!(loss.lambda >= 0.0)) throw ConfigError("loss: lambda must be non-negative");
    if (!(loss.r_max_bits_per_element > 0.0)) throw ConfigError("loss: r_max_bits_per_element must be positive");
    if (!(loss.alpha2 >= 0.0) || !(loss.alpha3 >= 0.0)) throw ConfigError("loss: alpha2, alpha3 must be non-negative");
    loss::GateConfig{loss.epsilon, loss.w_target.value_or(0.0)}.validate();
    if (!(training.learning_rate > 0.0)) throw ConfigError("training: learning_rate must be positive");
    if (!(training.beta1 >= 0.0 && training.beta1 < 1.0) || !(training.beta2 >= 0.0 && training.beta2 < 1.0)) {
      throw ConfigError("training: Adam betas must lie in [0, 1)");
    }
    if (!(training.adam_epsilon > 0.0)) throw ConfigError("training: adam_epsilon must be positive");
    if (training.batch == 0) throw ConfigError("training: batch must be positive");
    if (training.eval_frames == 0) throw ConfigError("training: eval_frames must be positive");
    if (world.frames < warmup_frames() + training.eval_frames + 1) {
      throw ConfigError("world: too few frames for warm-up (" + std::to_string(warmup_frames()) +
                        "), training and evaluation (" + std::to_string(training.eval_frames) + ")");
    }
    if (sweep.values.empty()) throw ConfigError("sweep: values must be non-empty");
    if (sweep.axis == SweepAxis::kDelayed) {
      for (double v : sweep.values)
        if (v < 0.0 || v > static_cast<double>(cameras) || v != static_cast<double>(static_cast<std::size_t>(v))) {
          throw ConfigError("sweep: delayed counts must be integers in [0, cameras]");
        }
    }
  }
};

namespace detail {

using nlohmann::json;

// Reads optional keys from one JSON object and rejects anything unexpected.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }

  const json* child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return nullptr;
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline void read_link_keys(Reader& r, channel::ChannelParams& p) {
  r.get("carrier_freq_hz", p.carrier_freq_hz);
  r.get("bandwidth_hz", p.bandwidth_hz);
  r.get("path_loss_exponent", p.path_loss_exponent);
  r.get("shadowing_sigma_db", p.shadowing_sigma_db);
  r.get("tx_power_w", p.tx_power_w);
  r.get("interference_power_w", p.interference_power_w);
  r.get("noise_density_dbm_hz", p.noise_density_dbm_hz);
  r.get("distance_m", p.distance_m);
  r.get("reference_distance_m", p.reference_distance_m);
  r.get("reference_loss_db", p.reference_loss_db);
}

inline json link_keys_to_json(const channel::ChannelParams& p) {
  return {{"carrier_freq_hz", p.carrier_freq_hz},
          {"bandwidth_hz", p.bandwidth_hz},
          {"path_loss_exponent", p.path_loss_exponent},
          {"shadowing_sigma_db", p.shadowing_sigma_db},
          {"tx_power_w", p.tx_power_w},
          {"interference_power_w", p.interference_power_w},
          {"noise_density_dbm_hz", p.noise_density_dbm_hz},
          {"distance_m", p.distance_m},
          {"reference_distance_m", p.reference_distance_m},
          {"reference_loss_db", p.reference_loss_db}};
}

}  // namespace detail

// Link parameters of camera k: base, then its per_camera override if any.
inline channel::ChannelParams camera_link(const ExperimentConfig& c, std::size_t k) {
  channel::ChannelParams p = c.link.base;
  if (k < c.link.per_camera.size() && !c.link.per_camera[k].is_null()) {
    detail::Reader r(c.link.per_camera[k], "channel.per_camera[" + std::to_string(k) + "]");
    detail::read_link_keys(r, p);
    r.finish();
  }
  p.validate();
  return p;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::Reader;
  ExperimentConfig c;
  Reader top(j, "config");
  top.get("scenario", c.scenario);
  top.get("seeds", c.seeds);
  std::string method = "pib";
  top.get("method", method);
  if (method == "pib") c.method = Method::kPib;
  else if (method == "equal") c.method = Method::kEqual;
  else throw ConfigError("config.method: expected 'pib' or 'equal', got '" + method + "'");
  top.get("cameras", c.cameras);
  c.rig.cameras = c.cameras;
  top.get("delayed_cameras", c.delayed_cameras);
  top.get("delay_order", c.delay_order);
  top.get("output", c.output);
  if (const auto* w = top.child("world")) {
    Reader r(*w, "world");
    r.get("height", c.world.height);
    r.get("width", c.world.width);
    r.get("min_pedestrians", c.world.min_pedestrians);
    r.get("max_pedestrians", c.world.max_pedestrians);
    r.get("frames", c.world.frames);
    r.get("move_probability", c.world.move_probability);
    r.finish();
  }
  if (const auto* w = top.child("rig")) {
    Reader r(*w, "rig");
    r.get("focal_ring", c.rig.focal_ring);
    r.get("fov_radius", c.rig.fov_radius);
    r.finish();
  }
  if (const auto* w = top.child("observation")) {
    Reader r(*w, "observation");
    r.get("noise_sigma", c.observation.noise_sigma);
    r.get("occlusion", c.observation.occlusion);
    r.finish();
  }
  if (const auto* w = top.child("channel")) {
    Reader r(*w, "channel");
    detail::read_link_keys(r, c.link.base);
    r.get("payload_bits", c.link.payload_bits);
    r.get("delay_max_s", c.link.delay_max_s);
    r.get("frame_period_s", c.link.frame_period_s);
    r.get("max_lag_frames", c.link.max_lag_frames);
    r.get("delayed_extra_loss_db", c.link.delayed_extra_loss_db);
    if (const auto* pc = r.child("per_camera")) {
      if (!pc->is_array()) throw ConfigError("channel.per_camera: expected an array");
      c.link.per_camera.assign(pc->begin(), pc->end());
    }
    r.finish();
  }
  if (const auto* w = top.child("coverage")) {
    Reader r(*w, "coverage");
    r.get("lower", c.coverage_lower);
    r.get("upper", c.coverage_upper);
    r.finish();
  }
  if (const auto* w = top.child("model")) {
    Reader r(*w, "model");
    r.get("latent_channels", c.model.latent_channels);
    r.get("side_channels", c.model.side_channels);
    r.get("fused_channels", c.model.fused_channels);
    r.get("tau", c.model.tau);
    r.get("priority_hidden", c.model.priority_hidden);
    r.finish();
  }
  if (const auto* w = top.child("loss")) {
    Reader r(*w, "loss");
    r.get("lambda", c.loss.lambda);
    r.get("r_max_bits_per_element", c.loss.r_max_bits_per_element);
    r.get("alpha2", c.loss.alpha2);
    r.get("alpha3", c.loss.alpha3);
    r.get("epsilon", c.loss.epsilon);
    r.get("w_target", c.loss.w_target);
    std::string mode = "running_max";
    r.get("w0_mode", mode);
    if (mode == "running_max") c.loss.w0_mode = priority::W0Mode::kRunningMax;
    else if (mode == "constant") c.loss.w0_mode = priority::W0Mode::kConstant;
    else throw ConfigError("loss.w0_mode: expected 'running_max' or 'constant'");
    r.get("w0_constant", c.loss.w0_constant);
    r.finish();
  }
  if (const auto* w = top.child("training")) {
    Reader r(*w, "training");
    r.get("steps", c.training.steps);
    r.get("learning_rate", c.training.learning_rate);
    r.get("beta1", c.training.beta1);
    r.get("beta2", c.training.beta2);
    r.get("adam_epsilon", c.training.adam_epsilon);
    r.get("batch", c.training.batch);
    r.get("eval_frames", c.training.eval_frames);
    r.get("final_grad_check", c.training.final_grad_check);
    r.get("verify_decode", c.training.verify_decode);
    r.finish();
  }
  if (const auto* w = top.child("sweep")) {
    Reader r(*w, "sweep");
    std::string axis = "lambda";
    r.get("axis", axis);
    if (axis == "lambda") c.sweep.axis = SweepAxis::kLambda;
    else if (axis == "delayed") c.sweep.axis = SweepAxis::kDelayed;
    else throw ConfigError("sweep.axis: expected 'lambda' or 'delayed'");
    r.get("values", c.sweep.values);
    r.get("include_ablation", c.sweep.include_ablation);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json channel = detail::link_keys_to_json(c.link.base);
  channel["payload_bits"] = c.link.payload_bits;
  channel["delay_max_s"] = c.link.delay_max_s;
  channel["frame_period_s"] = c.link.frame_period_s;
  channel["max_lag_frames"] = c.link.max_lag_frames;
  channel["delayed_extra_loss_db"] = c.link.delayed_extra_loss_db;
  channel["per_camera"] = c.link.per_camera;
  nlohmann::json loss = {{"lambda", c.loss.lambda},
                         {"r_max_bits_per_element", c.loss.r_max_bits_per_element},
                         {"alpha2", c.loss.alpha2},
                         {"alpha3", c.loss.alpha3},
                         {"epsilon", c.loss.epsilon},
                         {"w_target", nullptr},
                         {"w0_mode", c.loss.w0_mode == priority::W0Mode::kRunningMax ? "running_max" : "constant"},
                         {"w0_constant", c.loss.w0_constant}};
  if (c.loss.w_target) loss["w_target"] = *c.loss.w_target;
  nlohmann::json coverage = {{"lower", c.coverage_lower}, {"upper", nullptr}};
  if (c.coverage_upper) coverage["upper"] = *c.coverage_upper;
  return {{"scenario", c.scenario},
          {"seeds", c.seeds},
          {"method", to_string(c.method)},
          {"cameras", c.cameras},
          {"delayed_cameras", c.delayed_cameras},
          {"delay_order", c.delay_order},
          {"world",
           {{"height", c.world.height},
            {"width", c.world.width},
            {"min_pedestrians", c.world.min_pedestrians},
            {"max_pedestrians", c.world.max_pedestrians},
            {"frames", c.world.frames},
            {"move_probability", c.world.move_probability}}},
          {"rig", {{"focal_ring", c.rig.focal_ring}, {"fov_radius", c.rig.fov_radius}}},
          {"observation", {{"noise_sigma", c.observation.noise_sigma}, {"occlusion", c.observation.occlusion}}},
          {"channel", channel},
          {"coverage", coverage},
          {"model",
           {{"latent_channels", c.model.latent_channels},
            {"side_channels", c.model.side_channels},
            {"fused_channels", c.model.fused_channels},
            {"tau", c.model.tau},
            {"priority_hidden", c.model.priority_hidden}}},
          {"loss", loss},
          {"training",
           {{"steps", c.training.steps},
            {"learning_rate", c.training.learning_rate},
            {"beta1", c.training.beta1},
            {"beta2", c.training.beta2},
            {"adam_epsilon", c.training.adam_epsilon},
            {"batch", c.training.batch},
            {"eval_frames", c.training.eval_frames},
            {"final_grad_check", c.training.final_grad_check},
            {"verify_decode", c.training.verify_decode}}},
          {"sweep",
           {{"axis", c.sweep.axis == SweepAxis::kLambda ? "lambda" : "delayed"},
            {"values", c.sweep.values},
            {"include_ablation", c.sweep.include_ablation}}},
          {"output", c.output}};
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

// FNV-1a over the canonical serialization (sorted keys, defaults filled in),
// leaving out the output directory.
inline std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = config_to_json(c);
  j.erase("output");
  const std::string text = j.dump();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace pib::harness
