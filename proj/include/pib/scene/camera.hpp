#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "pib/error.hpp"
#include "pib/numerics/tensor.hpp"
#include "pib/random.hpp"
#include "pib/scene/world.hpp"

namespace pib::scene {

// Cameras sit around the scene; each sees a disc of cells around its focal
// point. Cells left uncovered are assigned to the nearest focal point so the
// union of FoVs always covers the grid.
struct RigConfig {
  std::size_t cameras = 7;
  double focal_ring = 0.3;   // focal-point ring radius, fraction of min(H, W)
  double fov_radius = 0.42;  // FoV disc radius, fraction of min(H, W)
};

struct CameraRig {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Tensor> masks;  // one H x W mask per camera, entries in {0, 1}

  std::size_t size() const { return masks.size(); }

  // CO_k = |FoV_k ∩ RoI|.
  double coverage(std::size_t k, const Tensor& roi) const {
    require_same_shape(masks.at(k), roi, "coverage");
    double n = 0.0;
    for (std::size_t i = 0; i < roi.size(); ++i) n += (masks[k][i] > 0.5 && roi[i] > 0.5) ? 1.0 : 0.0;
    return n;
  }

  Tensor full_roi() const { return Tensor(Shape{height, width}, 1.0); }
};

inline CameraRig make_rig(std::size_t height, std::size_t width, const RigConfig& config) {
  if (config.cameras == 0) throw ConfigError("rig: at least one camera required");
  CameraRig rig{height, width, {}};
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const double scale = static_cast<double>(std::min(height, width));
  std::vector<std::pair<double, double>> focal;
  for (std::size_t k = 0; k < config.cameras; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(config.cameras);
    focal.emplace_back(cy + config.focal_ring * scale * std::sin(a), cx + config.focal_ring * scale * std::cos(a));
  }
  const double r2 = std::pow(config.fov_radius * scale, 2);
  for (std::size_t k = 0; k < config.cameras; ++k) {
    Tensor m(Shape{height, width});
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double d2 = std::pow(y - focal[k].first, 2) + std::pow(x - focal[k].second, 2);
        m[y * width + x] = d2 <= r2 ? 1.0 : 0.0;
      }
    rig.masks.push_back(std::move(m));
  }
  for (std::size_t i = 0; i < height * width; ++i) {
    bool covered = false;
    for (const Tensor& m : rig.masks) covered = covered || m[i] > 0.5;
    if (covered) continue;
    const double y = static_cast<double>(i / width), x = static_cast<double>(i % width);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < focal.size(); ++k) {
      const double d = std::pow(y - focal[k].first, 2) + std::pow(x - focal[k].second, 2);
      if (d < best_d) best_d = d, best = k;
    }
    rig.masks[best][i] = 1.0;
  }
  return rig;
}

struct ObservationConfig {
  double noise_sigma = 0.3;
  double occlusion = 0.2;  // per-cell dropout probability inside the FoV

  void validate() const {
    if (!(noise_sigma >= 0.0)) throw ConfigError("observation: noise sigma must be non-negative");
    if (occlusion < 0.0 || occlusion > 1.0) throw ConfigError("observation: occlusion outside [0, 1]");
  }
};

inline constexpr std::size_t kObservationChannels = 2;

// X_t^(k), 2 x H x W: channel 0 is the occluded, noisy occupancy inside the
// FoV, channel 1 is the FoV indicator. Outside the FoV both are zero.
inline Tensor observe(const Tensor& occupancy, const Tensor& mask, const ObservationConfig& config, Rng& rng) {
  config.validate();
  if (occupancy.size() != mask.size()) throw ShapeError("observe: occupancy and mask sizes differ");
  const std::size_t n = mask.size();
  const std::size_t h = mask.rank() == 2 ? mask.dim(0) : 1, w = n / h;
  Tensor x(Shape{kObservationChannels, h, w});
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] <= 0.5) continue;
    const bool dropped = rng.bernoulli(config.occlusion);
    x[i] = (dropped ? 0.0 : occupancy[i]) + config.noise_sigma * rng.normal();
    x[n + i] = 1.0;
  }
  return x;
}

// Observation stream seed for (world seed, camera, frame).
inline std::uint64_t observation_seed(std::uint64_t world_seed, std::size_t camera, std::size_t frame) {
  std::uint64_t z = world_seed * 0x9E3779B97F4A7C15ull + camera * 0xBF58476D1CE4E5B9ull + frame * 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

// All frames for all cameras: result[k][t].
inline std::vector<std::vector<Tensor>> observe_all(const World& world, const CameraRig& rig,
                                                    const ObservationConfig& config) {
  std::vector<std::vector<Tensor>> out(rig.size());
  for (std::size_t k = 0; k < rig.size(); ++k) {
    out[k].reserve(world.size());
    for (std::size_t t = 0; t < world.size(); ++t) {
      Rng rng(observation_seed(world.seed, k, t));
      out[k].push_back(observe(world.occupancy(t), rig.masks[k], config, rng));
    }
  }
  return out;
}

}  // namespace pib::scene
