#pragma once

#include <array>
#include <cmath>

#include "core/policy.hpp"

namespace dpa {

enum class AttackMode { Untargeted, Targeted };

struct AttackConfig {
  double sigma = 0.03;      // L-inf pixel budget
  double alpha = 0.001875;  // PGD step size
  int steps = 50;           // PGD iterations
  AttackMode mode = AttackMode::Targeted;
  Tensor target;            // normalized [L_a, D_a]; defaults to all ones
  SamplerConfig scheduler;  // sampling chain for the end-to-end loss
  uint64_t seed = 0;
  bool resample_tau_per_iter = false;  // literal per-iteration tau* draw

  void validate() const;
  Tensor resolved_target() const;  // target or the all-ones default
};

// Additive pixel perturbation(s), one tensor per observation frame slot; a
// single tensor is shared across slots. The budget holds element-wise always.
struct GlobalPerturbation {
  std::vector<Tensor> deltas;
  double sigma = 0.0;

  const Tensor& delta_for_slot(size_t slot) const;
  void check_budget() const;  // throws UsageError on violation
};

// Sampled pose for the patch in centered image coordinates.
struct AffineTransform {
  double shift_x = 0.0, shift_y = 0.0;  // fraction of image, in [-0.4, 0.4]
  double rotation = 0.0;                // radians
  double scale = 1.0;
  double shear_x = 0.0, shear_y = 0.0;  // radians

  // Forward 2x2 linear part (rotation * shear * scale) and its inverse.
  std::array<double, 4> linear() const;
  std::array<double, 4> inverse_linear() const;  // throws on singular
  double det() const;
};

struct AffineTransformFamily {
  double shift_range = 0.4;
  double rot_range = M_PI / 4.0;
  double scale_lo = 1.0, scale_hi = 1.0;
  double shear_range = 50.0 * M_PI / 180.0;

  AffineTransform sample(Rng& rng) const;  // rejects near-singular shears
};

// clip(I + delta, 0, 1) per frame; differentiable in both arguments.
std::vector<Tensor> apply_global(const std::vector<Tensor>& frames,
                                 const GlobalPerturbation& pert);

// replace(I, T(x)): composite the patch onto the base image under the
// transform, bilinear in patch space; differentiable w.r.t. the patch.
// Identity transform writes exactly the centered h_p x w_p block.
Tensor paste_patch(const Tensor& base, const Tensor& patch,
                   const AffineTransform& t);

// Noise-prediction adversarial loss (one Monte-Carlo (k, eps) draw):
// s * ||eps_theta(q_sample(tau_ref, k, eps), k, frames) - eps||^2 / n,
// s = -1 untargeted, +1 targeted.
Tensor adv_loss(const DiffusionPolicy& policy,
                const std::vector<Tensor>& frames, const Tensor& tau_ref,
                AttackMode mode, Rng& rng);

// Algorithm: online PGD on the noise-prediction loss, one delta per frame.
GlobalPerturbation attack_online_global(const DiffusionPolicy& policy,
                                        const std::vector<Tensor>& frames,
                                        const AttackConfig& cfg);

// Offline variant: one shared delta optimized over dataset minibatches;
// dataset trajectories serve as tau_ref in untargeted mode.
GlobalPerturbation attack_offline_global(const DiffusionPolicy& policy,
                                         const DemoDataset& dataset,
                                         const AttackConfig& cfg, int epochs,
                                         int batch);

// Patch attack: pixel-space PGD on a [3, hp, wp] patch composited under
// random transforms; patch values clipped to [0, 1].
Tensor attack_patch(const DiffusionPolicy& policy, const DemoDataset& dataset,
                    const AffineTransformFamily& family,
                    const AttackConfig& cfg, int epochs, int batch,
                    int patch_px = 13);

// End-to-end PGD through the full sampling chain; all chain noises are fixed
// across PGD iterations.
GlobalPerturbation end2end_attack(const DiffusionPolicy& policy,
                                  const std::vector<Tensor>& frames,
                                  const AttackConfig& cfg);

GlobalPerturbation random_noise_baseline(const std::vector<int>& frame_shape,
                                         int n_slots, double sigma,
                                         uint64_t seed);

}  // namespace dpa
