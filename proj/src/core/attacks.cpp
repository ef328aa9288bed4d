#include "core/attacks.hpp"

#include <algorithm>
#include <cmath>

namespace dpa {

namespace {

double clampd(double v, double lo, double hi) {
  return std::min(hi, std::max(lo, v));
}

Observation frames_observation(std::vector<Tensor> frames) {
  Observation obs;
  obs.frames = std::move(frames);
  obs.agent_state = Tensor::zeros({4});
  return obs;
}

// PGD step on a delta box: d <- clip(d - alpha * sign(g), -sigma, sigma).
void pgd_update(Tensor& delta, const std::vector<double>& grad, double alpha,
                double sigma) {
  for (int i = 0; i < delta.numel(); ++i) {
    const double g = grad[i];
    const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
    delta.data()[i] = clampd(delta.data()[i] - alpha * s, -sigma, sigma);
  }
}

struct Window {
  int episode, t;
};

std::vector<Window> dataset_windows(const DemoDataset& ds) {
  std::vector<Window> ws;
  for (size_t e = 0; e < ds.episodes.size(); ++e)
    for (int t = 0; t + DiffusionPolicy::kActionLen <= ds.episodes[e].steps;
         ++t)
      ws.push_back({static_cast<int>(e), t});
  if (ws.empty()) throw UsageError("attack: dataset has no usable windows");
  return ws;
}

std::vector<Tensor> window_frames(const DemoDataset& ds, const Window& w) {
  return {ds.frame(w.episode, std::max(0, w.t - 1)), ds.frame(w.episode, w.t)};
}

Tensor window_traj(const DemoDataset& ds, const Window& w,
                   const ActionNormalizer& norm) {
  std::vector<double> vals;
  for (int i = 0; i < DiffusionPolicy::kActionLen; ++i)
    for (int d = 0; d < DiffusionPolicy::kActionDim; ++d)
      vals.push_back(
          ds.episodes[w.episode].actions[(w.t + i) * ds.action_dim + d]);
  return norm.normalize(Tensor::from(
      {DiffusionPolicy::kActionLen, DiffusionPolicy::kActionDim},
      std::move(vals)));
}

// Runs the policy's sampling chain with gradients enabled and all chain
// noises replayed from chain_seed, so the objective is fixed across PGD
// iterations. The observation is re-encoded at every denoising step, per the
// per-step conditioning of the reverse process.
class ObsDenoiser : public Denoiser {
 public:
  ObsDenoiser(const DiffusionPolicy& p, const Observation& obs)
      : p_(p), obs_(obs) {}
  Tensor predict(const Tensor& x_k, int k, const Tensor&) const override {
    return p_.predict_noise(x_k, k, obs_);
  }

 private:
  const DiffusionPolicy& p_;
  const Observation& obs_;
};

Tensor e2e_sample(const DiffusionPolicy& policy, const Observation& obs,
                  const SamplerConfig& sampler, uint64_t chain_seed) {
  Rng chain_rng(chain_seed);
  ObsDenoiser od(policy, obs);
  const Tensor cond = Tensor::zeros({1});  // unused by ObsDenoiser
  Tensor x = Tensor::randn(
      {DiffusionPolicy::kActionLen, DiffusionPolicy::kActionDim}, chain_rng);
  if (sampler.kind == SamplerKind::Ddpm) {
    for (int k = policy.schedule.K() - 1; k >= 0; --k)
      x = ddpm_step(policy.schedule, x, k, od, cond, chain_rng);
  } else {
    const std::vector<int> ts =
        ddim_timesteps(policy.schedule.K(), sampler.ddim_steps);
    for (size_t i = 0; i < ts.size(); ++i) {
      const int k_to = i + 1 < ts.size() ? ts[i + 1] : -1;
      x = ddim_step(policy.schedule, x, ts[i], k_to, od, cond);
    }
  }
  return clamp(x, -DiffusionPolicy::kSampleClamp, DiffusionPolicy::kSampleClamp);
}

}  // namespace

void AttackConfig::validate() const {
  if (sigma < 0.0) throw UsageError("attack: sigma must be >= 0");
  if (alpha <= 0.0) throw UsageError("attack: alpha must be > 0");
  if (steps < 0) throw UsageError("attack: steps must be >= 0");
  if (mode == AttackMode::Targeted && target.defined() &&
      target.shape() != std::vector<int>{DiffusionPolicy::kActionLen,
                                         DiffusionPolicy::kActionDim})
    throw UsageError("attack: target must be [L_a, D_a]");
}

Tensor AttackConfig::resolved_target() const {
  if (target.defined()) return target.detach();
  return Tensor::full(
      {DiffusionPolicy::kActionLen, DiffusionPolicy::kActionDim}, 1.0);
}

const Tensor& GlobalPerturbation::delta_for_slot(size_t slot) const {
  if (deltas.empty()) throw UsageError("perturbation: no deltas");
  return deltas.size() == 1 ? deltas[0] : deltas.at(slot);
}

void GlobalPerturbation::check_budget() const {
  for (const auto& d : deltas)
    for (double v : d.vec())
      if (std::fabs(v) > sigma + 1e-12)
        throw UsageError("perturbation: budget violated");
}

std::array<double, 4> AffineTransform::linear() const {
  // rotation * shear * scale, all in centered coordinates
  const double c = std::cos(rotation), s = std::sin(rotation);
  const double tx = std::tan(shear_x), ty = std::tan(shear_y);
  const double a00 = (1.0 + tx * ty) * scale, a01 = tx * scale;
  const double a10 = ty * scale, a11 = scale;
  return {c * a00 - s * a10, c * a01 - s * a11, s * a00 + c * a10,
          s * a01 + c * a11};
}

double AffineTransform::det() const {
  const auto m = linear();
  return m[0] * m[3] - m[1] * m[2];
}

std::array<double, 4> AffineTransform::inverse_linear() const {
  const auto m = linear();
  const double d = m[0] * m[3] - m[1] * m[2];
  if (std::fabs(d) < 1e-9)
    throw UsageError("affine transform: singular linear part");
  return {m[3] / d, -m[1] / d, -m[2] / d, m[0] / d};
}

AffineTransform AffineTransformFamily::sample(Rng& rng) const {
  for (int attempt = 0; attempt < 100; ++attempt) {
    AffineTransform t;
    t.shift_x = rng.uniform(-shift_range, shift_range);
    t.shift_y = rng.uniform(-shift_range, shift_range);
    t.rotation = rng.uniform(-rot_range, rot_range);
    t.scale = rng.uniform(scale_lo, scale_hi);
    t.shear_x = rng.uniform(-shear_range, shear_range);
    t.shear_y = rng.uniform(-shear_range, shear_range);
    if (std::fabs(t.det()) >= 0.05) return t;
  }
  throw UsageError("affine transform: sampling kept hitting singular shears");
}

std::vector<Tensor> apply_global(const std::vector<Tensor>& frames,
                                 const GlobalPerturbation& pert) {
  std::vector<Tensor> out;
  for (size_t i = 0; i < frames.size(); ++i) {
    const Tensor& d = pert.delta_for_slot(i);
    if (d.shape() != frames[i].shape())
      throw DimensionError("apply_global: delta/frame shape mismatch");
    out.push_back(clamp(add(frames[i], d), 0.0, 1.0));
  }
  return out;
}

Tensor paste_patch(const Tensor& base, const Tensor& patch,
                   const AffineTransform& t) {
  if (base.shape().size() != 3 || patch.shape().size() != 3 ||
      base.shape()[0] != patch.shape()[0])
    throw DimensionError("paste_patch: expected [C,H,W] base and patch");
  const int C = base.shape()[0], H = base.shape()[1], W = base.shape()[2];
  const int ph = patch.shape()[1], pw = patch.shape()[2];
  const auto inv = t.inverse_linear();
  const double bx = 2.0 * t.shift_x, by = 2.0 * t.shift_y;
  // Canonical (identity) placement: the patch occupies the integer pixel
  // block starting at (W - pw + 1) / 2, so its center in centered
  // coordinates sits at off_x / off_y (0 for odd sizes, half a pixel for
  // even ones). One patch pixel spans one image pixel.
  const double off_x = (2.0 * ((W - pw + 1) / 2) + pw - W) / W;
  const double off_y = (2.0 * ((H - ph + 1) / 2) + ph - H) / H;

  // Per covered pixel: up to 4 bilinear taps (patch index, weight).
  struct Tap {
    int out_idx, patch_idx;
    double w;
  };
  std::vector<Tap> taps;
  std::vector<bool> covered(static_cast<size_t>(H) * W, false);
  std::vector<double> out = base.vec();

  for (int row = 0; row < H; ++row)
    for (int col = 0; col < W; ++col) {
      const double px = (col + 0.5) / W * 2.0 - 1.0;
      const double py = (row + 0.5) / H * 2.0 - 1.0;
      const double rx = px - bx, ry = py - by;
      const double qx = inv[0] * rx + inv[1] * ry;
      const double qy = inv[2] * rx + inv[3] * ry;
      const double u = (qx - off_x) * W * 0.5 + (pw - 1) * 0.5;
      const double v = (qy - off_y) * H * 0.5 + (ph - 1) * 0.5;
      if (u <= -0.5 || u >= pw - 0.5 || v <= -0.5 || v >= ph - 0.5) continue;
      covered[static_cast<size_t>(row) * W + col] = true;
      const int u0 = static_cast<int>(std::floor(u));
      const int v0 = static_cast<int>(std::floor(v));
      const double fu = u - u0, fv = v - v0;
      for (int c = 0; c < C; ++c) {
        double val = 0.0;
        const int oi = (c * H + row) * W + col;
        for (int dv = 0; dv < 2; ++dv)
          for (int du = 0; du < 2; ++du) {
            const int uu = std::min(pw - 1, std::max(0, u0 + du));
            const int vv = std::min(ph - 1, std::max(0, v0 + dv));
            const double w =
                (du ? fu : 1.0 - fu) * (dv ? fv : 1.0 - fv);
            if (w == 0.0) continue;
            const int pi = (c * ph + vv) * pw + uu;
            val += w * patch.data()[pi];
            taps.push_back({oi, pi, w});
          }
        out[oi] = val;
      }
    }

  auto base_impl = base.impl();
  auto patch_impl = patch.impl();
  const int HW = H * W;
  return make_node(
      base.shape(), std::move(out), {base, patch},
      [base_impl, patch_impl, taps = std::move(taps),
       covered = std::move(covered), C, HW](Tensor::Impl& n) {
        if (patch_impl->requires_grad)
          for (const Tap& t : taps)
            patch_impl->grad[t.patch_idx] += t.w * n.grad[t.out_idx];
        if (base_impl->requires_grad)
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < HW; ++i)
              if (!covered[i]) base_impl->grad[c * HW + i] += n.grad[c * HW + i];
      });
}

Tensor adv_loss(const DiffusionPolicy& policy,
                const std::vector<Tensor>& frames, const Tensor& tau_ref,
                AttackMode mode, Rng& rng) {
  const int k = rng.uniform_int(policy.schedule.K());
  Tensor eps = Tensor::randn(tau_ref.shape(), rng);
  Tensor x_k = forward_sample(policy.schedule, tau_ref.detach(), k, eps);
  Observation obs = frames_observation(frames);
  Tensor l = mse(policy.predict_noise(x_k, k, obs), eps);
  return mode == AttackMode::Targeted ? l : scale(l, -1.0);
}

GlobalPerturbation attack_online_global(const DiffusionPolicy& policy,
                                        const std::vector<Tensor>& frames,
                                        const AttackConfig& cfg) {
  cfg.validate();
  GlobalPerturbation pert;
  pert.sigma = cfg.sigma;
  for (const auto& f : frames) pert.deltas.push_back(Tensor::zeros(f.shape()));

  Rng rng(derive_seed(cfg.seed, "online_attack"));
  Rng tau_rng(derive_seed(cfg.seed, "online_tau"));
  Tensor tau_ref;
  if (cfg.mode == AttackMode::Targeted) {
    tau_ref = cfg.resolved_target();
  } else {
    tau_ref = policy.generate_normalized(frames_observation(frames), tau_rng,
                                         cfg.scheduler);
  }

  for (int n = 0; n < cfg.steps; ++n) {
    if (cfg.mode == AttackMode::Untargeted && cfg.resample_tau_per_iter)
      tau_ref = policy.generate_normalized(
          frames_observation(apply_global(frames, pert)), tau_rng,
          cfg.scheduler);
    std::vector<Tensor> leaves;
    for (auto& d : pert.deltas) leaves.push_back(d.clone_with_grad());
    GlobalPerturbation live{leaves, cfg.sigma};
    Tensor loss = adv_loss(policy, apply_global(frames, live), tau_ref,
                           cfg.mode, rng);
    backward(loss);
    for (size_t i = 0; i < pert.deltas.size(); ++i)
      pgd_update(pert.deltas[i], leaves[i].grad_vec(), cfg.alpha, cfg.sigma);
    pert.check_budget();
  }
  return pert;
}

GlobalPerturbation attack_offline_global(const DiffusionPolicy& policy,
                                         const DemoDataset& dataset,
                                         const AttackConfig& cfg, int epochs,
                                         int batch) {
  cfg.validate();
  if (epochs < 0 || batch <= 0)
    throw UsageError("attack: epochs >= 0 and batch > 0 required");
  GlobalPerturbation pert;
  pert.sigma = cfg.sigma;
  pert.deltas.push_back(Tensor::zeros({3, dataset.image_size,
                                       dataset.image_size}));
  Tensor& delta = pert.deltas[0];

  const std::vector<Window> all_windows = dataset_windows(dataset);
  const Tensor target = cfg.resolved_target();

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "offline_attack", epoch));
    std::vector<Window> windows = all_windows;
    for (int i = static_cast<int>(windows.size()) - 1; i > 0; --i)
      std::swap(windows[i], windows[rng.uniform_int(i + 1)]);

    size_t pos = 0;
    while (pos < windows.size()) {
      const size_t batch_end =
          std::min(windows.size(), pos + static_cast<size_t>(batch));
      const double inv_n = 1.0 / static_cast<double>(batch_end - pos);
      Tensor leaf = delta.clone_with_grad();
      GlobalPerturbation live{{leaf}, cfg.sigma};
      for (; pos < batch_end; ++pos) {
        const Window& w = windows[pos];
        Tensor tau_ref = cfg.mode == AttackMode::Targeted
                             ? target
                             : window_traj(dataset, w, policy.normalizer);
        Tensor loss =
            scale(adv_loss(policy, apply_global(window_frames(dataset, w), live),
                           tau_ref, cfg.mode, rng),
                  inv_n);
        backward(loss);
      }
      pgd_update(delta, leaf.grad_vec(), cfg.alpha, cfg.sigma);
      pert.check_budget();
    }
  }
  return pert;
}

Tensor attack_patch(const DiffusionPolicy& policy, const DemoDataset& dataset,
                    const AffineTransformFamily& family,
                    const AttackConfig& cfg, int epochs, int batch,
                    int patch_px) {
  cfg.validate();
  if (epochs < 0 || batch <= 0 || patch_px <= 0)
    throw UsageError("attack: bad patch training parameters");

  Rng init_rng(derive_seed(cfg.seed, "patch_init"));
  Tensor x = Tensor::randn({3, patch_px, patch_px}, init_rng);
  for (auto& v : x.vec()) v = clampd(v + 0.5, 0.0, 1.0);

  const std::vector<Window> all_windows = dataset_windows(dataset);
  const Tensor target = cfg.resolved_target();

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "patch_attack", epoch));
    std::vector<Window> windows = all_windows;
    for (int i = static_cast<int>(windows.size()) - 1; i > 0; --i)
      std::swap(windows[i], windows[rng.uniform_int(i + 1)]);

    size_t pos = 0;
    while (pos < windows.size()) {
      const size_t batch_end =
          std::min(windows.size(), pos + static_cast<size_t>(batch));
      const double inv_n = 1.0 / static_cast<double>(batch_end - pos);
      Tensor leaf = x.clone_with_grad();
      for (; pos < batch_end; ++pos) {
        const Window& w = windows[pos];
        const AffineTransform t = family.sample(rng);
        std::vector<Tensor> attacked;
        for (const auto& f : window_frames(dataset, w))
          attacked.push_back(paste_patch(f, leaf, t));
        Tensor tau_ref = cfg.mode == AttackMode::Targeted
                             ? target
                             : window_traj(dataset, w, policy.normalizer);
        backward(scale(adv_loss(policy, attacked, tau_ref, cfg.mode, rng),
                       inv_n));
      }
      const auto& g = leaf.grad_vec();
      for (int i = 0; i < x.numel(); ++i) {
        const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
        x.data()[i] = clampd(x.data()[i] - cfg.alpha * s, 0.0, 1.0);
      }
    }
  }
  return x;
}

GlobalPerturbation end2end_attack(const DiffusionPolicy& policy,
                                  const std::vector<Tensor>& frames,
                                  const AttackConfig& cfg) {
  cfg.validate();
  GlobalPerturbation pert;
  pert.sigma = cfg.sigma;
  for (const auto& f : frames) pert.deltas.push_back(Tensor::zeros(f.shape()));

  Rng tau_rng(derive_seed(cfg.seed, "e2e_tau"));
  Tensor tau_ref =
      cfg.mode == AttackMode::Targeted
          ? cfg.resolved_target()
          : policy.generate_normalized(frames_observation(frames), tau_rng,
                                       cfg.scheduler);
  const uint64_t chain_seed = derive_seed(cfg.seed, "e2e_chain");

  for (int n = 0; n < cfg.steps; ++n) {
    std::vector<Tensor> leaves;
    for (auto& d : pert.deltas) leaves.push_back(d.clone_with_grad());
    GlobalPerturbation live{leaves, cfg.sigma};
    Observation obs = frames_observation(apply_global(frames, live));
    Tensor sample = e2e_sample(policy, obs, cfg.scheduler, chain_seed);
    Tensor loss = mse(sample, tau_ref);
    if (cfg.mode == AttackMode::Untargeted) loss = scale(loss, -1.0);
    backward(loss);
    for (size_t i = 0; i < pert.deltas.size(); ++i)
      pgd_update(pert.deltas[i], leaves[i].grad_vec(), cfg.alpha, cfg.sigma);
    pert.check_budget();
  }
  return pert;
}

GlobalPerturbation random_noise_baseline(const std::vector<int>& frame_shape,
                                         int n_slots, double sigma,
                                         uint64_t seed) {
  if (sigma < 0.0) throw UsageError("attack: sigma must be >= 0");
  if (n_slots <= 0) throw UsageError("attack: n_slots must be > 0");
  Rng rng(derive_seed(seed, "random_noise"));
  GlobalPerturbation pert;
  pert.sigma = sigma;
  for (int s = 0; s < n_slots; ++s) {
    Tensor d = Tensor::randn(frame_shape, rng);
    for (auto& v : d.vec()) v = clampd(sigma * v, -sigma, sigma);
    pert.deltas.push_back(std::move(d));
  }
  pert.check_budget();
  return pert;
}

}  // namespace dpa
