#pragma once

// Camera-side feature encoder and server-side fusion decoder.
//
// Encoder: 2x2 stride-2 conv from the 2-channel view to C_z latent channels,
// scaled per channel by a gain conditioned on the camera's priority weight,
// softplus(a * K * w_k + b). Server: a non-overlapping 2x2 transposed conv
// lifts each decoded latent back to the ground plane inside the camera's FoV
// mask; aligned features are summed with the priority weights, and a 3x3 conv
// produces per-cell occupancy logits.

#include <string>
#include <vector>

#include "pib/error.hpp"
#include "pib/numerics/autodiff.hpp"
#include "pib/numerics/param_set.hpp"
#include "pib/random.hpp"
#include "pib/scene/camera.hpp"

namespace pib::scene {

struct FusionShape {
  std::size_t latent_channels = 4;
  std::size_t fused_channels = 4;
};

// Parameter names (prefix "scene."): enc.{W,b}, gain.{a,b}, align.{W,b}, fuse.{W,b}.
inline void init_params(ParamSet& params, Rng& rng, const FusionShape& s, const std::string& prefix = "scene.") {
  const std::size_t cz = s.latent_channels, cf = s.fused_channels;
  params.add_uniform(prefix + "enc.W", Shape{cz, kObservationChannels, 2, 2}, rng, 0.5);
  params.add(prefix + "enc.b", Tensor(Shape{cz}, 0.0));
  params.add(prefix + "gain.a", Tensor(Shape{cz}, 1.0));
  params.add(prefix + "gain.b", Tensor(Shape{cz}, 0.5));
  params.add_uniform(prefix + "align.W", Shape{cz, cf, 2, 2}, rng, 2.0);
  params.add_uniform(prefix + "align.b", Shape{cf}, rng, 0.1);
  params.add_uniform(prefix + "fuse.W", Shape{1, cf, 3, 3}, rng, 0.5);
  params.add(prefix + "fuse.b", Tensor(Shape{1}, -3.0));
}

// Continuous latent Z for one view. `weight` is the scalar w_k and `cameras`
// is K (so that the equal weight 1/K maps to a conditioning input of 1).
inline ad::Var encode(ad::Graph& g, const Tensor& view, ad::Var weight, std::size_t cameras,
                      const std::string& prefix = "scene.") {
  if (view.rank() != 3 || view.dim(0) != kObservationChannels || view.dim(1) % 2 != 0 || view.dim(2) % 2 != 0) {
    throw ShapeError("encode: view must be 2 x H x W with even H, W; got " + to_string(view.shape()));
  }
  ad::Var x = g.constant(view);
  ad::Var feat = ad::conv2d(x, g.param(prefix + "enc.W"), g.param(prefix + "enc.b"), 2, 0);
  const std::size_t cz = feat.value().dim(0);
  ad::Var cond = ad::mul_const(ad::scale(g.constant(Tensor(Shape{cz}, 1.0)), weight), static_cast<double>(cameras));
  ad::Var gain = ad::softplus(ad::add(ad::mul(cond, g.param(prefix + "gain.a")), g.param(prefix + "gain.b")));
  return ad::scale_channels(feat, gain);
}

// Decoded latent lifted onto the ground plane and masked by the FoV.
inline ad::Var align(ad::Graph& g, ad::Var latent, const Tensor& mask, const std::string& prefix = "scene.") {
  ad::Var up = ad::conv_transpose2d(latent, g.param(prefix + "align.W"), g.param(prefix + "align.b"));
  const Shape& s = up.shape();
  if (mask.size() != s[1] * s[2]) throw ShapeError("align: mask does not match ground plane " + to_string(s));
  Tensor m(s);
  for (std::size_t c = 0; c < s[0]; ++c)
    for (std::size_t i = 0; i < mask.size(); ++i) m[c * mask.size() + i] = mask[i];
  return ad::mul_const(up, m);
}

// Occupancy logits, 1 x H x W, from aligned features and weights w[K].
inline ad::Var fuse_logits(ad::Graph& g, const std::vector<ad::Var>& aligned, ad::Var weights,
                           const std::string& prefix = "scene.") {
  if (aligned.empty()) throw ShapeError("fuse: no cameras");
  if (weights.size() != aligned.size()) throw ShapeError("fuse: weight count does not match camera count");
  std::vector<ad::Var> terms;
  terms.reserve(aligned.size());
  for (std::size_t k = 0; k < aligned.size(); ++k) terms.push_back(ad::scale(aligned[k], ad::index(weights, k)));
  ad::Var fused = ad::add_n(terms);
  return ad::conv2d(fused, g.param(prefix + "fuse.W"), g.param(prefix + "fuse.b"), 1, 1);
}

// sigmoid(conv(sum_k w_k align(Z_k))) for already decoded latents.
inline Tensor fuse_and_decode(const std::vector<Tensor>& latents, const Tensor& weights, const CameraRig& rig,
                              const ParamSet& theta, const std::string& prefix = "scene.") {
  if (latents.size() != rig.size()) throw ShapeError("fuse_and_decode: latent count does not match rig");
  ParamSet copy = theta;
  ad::Graph g(&copy);
  std::vector<ad::Var> aligned;
  for (std::size_t k = 0; k < latents.size(); ++k) aligned.push_back(align(g, g.constant(latents[k]), rig.masks[k], prefix));
  return ad::sigmoid(fuse_logits(g, aligned, g.constant(weights), prefix)).value();
}

}  // namespace pib::scene
