#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/attacks.hpp"
#include "gradcheck.hpp"

using namespace dpa;

namespace {

std::vector<Tensor> random_frames(Rng& rng) {
  std::vector<Tensor> fs;
  for (int i = 0; i < DiffusionPolicy::kObsHorizon; ++i) {
    Tensor f = Tensor::zeros({3, 64, 64});
    for (auto& v : f.vec()) v = rng.uniform();
    fs.push_back(f);
  }
  return fs;
}

// Monte-Carlo objective estimate with fresh (k, eps) draws.
double mc_loss(const DiffusionPolicy& policy, const std::vector<Tensor>& frames,
               const Tensor& tau_ref, AttackMode mode, uint64_t seed,
               int draws = 256) {
  NoGradGuard ng;
  Rng rng(seed);
  double total = 0.0;
  for (int i = 0; i < draws; ++i)
    total += adv_loss(policy, frames, tau_ref, mode, rng).item();
  return total / draws;
}

}  // namespace

TEST_CASE("attack config validation") {
  AttackConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  Tensor t = cfg.resolved_target();
  CHECK(t.shape() == std::vector<int>{8, 2});
  for (double v : t.vec()) CHECK(v == 1.0);

  cfg.sigma = -0.1;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg.sigma = 0.03;
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg.alpha = 1e-3;
  cfg.steps = -1;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg.steps = 5;
  cfg.target = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(cfg.validate(), UsageError);
}

TEST_CASE("random noise baseline: clip contract and clipped fraction") {
  GlobalPerturbation z = random_noise_baseline({3, 64, 64}, 2, 0.0, 1);
  for (const auto& d : z.deltas)
    for (double v : d.vec()) CHECK(v == 0.0);

  const double sigma = 0.03;
  GlobalPerturbation p = random_noise_baseline({3, 64, 64}, 2, sigma, 7);
  REQUIRE(p.deltas.size() == 2);
  CHECK_NOTHROW(p.check_budget());

  int clipped = 0, n = 0;
  for (const auto& d : p.deltas)
    for (double v : d.vec()) {
      ++n;
      if (std::fabs(std::fabs(v) - sigma) < 1e-15) ++clipped;
    }
  // elements clip when |z| > 1: P = 0.3173
  const double ph = 0.31731;
  const double se = std::sqrt(ph * (1 - ph) / n);
  CHECK(std::fabs(static_cast<double>(clipped) / n - ph) < 3.0 * se);

  // determinism
  GlobalPerturbation q = random_noise_baseline({3, 64, 64}, 2, sigma, 7);
  CHECK(q.deltas[0].vec() == p.deltas[0].vec());
}

TEST_CASE("affine family: containment and invertibility over 1000 samples") {
  AffineTransformFamily fam;
  Rng rng(13);
  for (int i = 0; i < 1000; ++i) {
    AffineTransform t = fam.sample(rng);
    CHECK(std::fabs(t.shift_x) <= 0.4);
    CHECK(std::fabs(t.shift_y) <= 0.4);
    CHECK(std::fabs(t.rotation) <= M_PI / 4 + 1e-12);
    CHECK(t.scale == 1.0);
    CHECK(std::fabs(t.shear_x) <= 50.0 * M_PI / 180.0 + 1e-12);
    CHECK(std::fabs(t.shear_y) <= 50.0 * M_PI / 180.0 + 1e-12);
    CHECK(std::fabs(t.det()) > 1e-6);

    const auto m = t.linear();
    const auto inv = t.inverse_linear();
    CHECK(std::fabs(m[0] * inv[0] + m[1] * inv[2] - 1.0) < 1e-9);
    CHECK(std::fabs(m[0] * inv[1] + m[1] * inv[3]) < 1e-9);
    CHECK(std::fabs(m[2] * inv[0] + m[3] * inv[2]) < 1e-9);
    CHECK(std::fabs(m[2] * inv[1] + m[3] * inv[3] - 1.0) < 1e-9);
  }
}

TEST_CASE("paste_patch: identity transform writes the exact centered block") {
  Rng rng(3);
  Tensor base = Tensor::zeros({3, 64, 64});
  for (auto& v : base.vec()) v = rng.uniform();
  Tensor patch = Tensor::zeros({3, 13, 13});
  for (auto& v : patch.vec()) v = rng.uniform();

  Tensor out = paste_patch(base, patch, AffineTransform{});
  int changed = 0;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 64; ++r)
      for (int col = 0; col < 64; ++col) {
        const double o = out.data()[(c * 64 + r) * 64 + col];
        const bool inside = r >= 26 && r <= 38 && col >= 26 && col <= 38;
        if (inside) {
          CHECK(o == doctest::Approx(
                         patch.data()[(c * 13 + (r - 26)) * 13 + (col - 26)])
                         .epsilon(1e-12));
          ++changed;
        } else {
          CHECK(o == base.data()[(c * 64 + r) * 64 + col]);
        }
      }
  CHECK(changed == 3 * 13 * 13);
}

TEST_CASE("paste_patch: finite-difference gradients") {
  Rng rng(9);
  Tensor base = Tensor::zeros({3, 16, 16});
  for (auto& v : base.vec()) v = rng.uniform();
  base.set_requires_grad(true);
  Tensor patch = Tensor::zeros({3, 5, 5});
  for (auto& v : patch.vec()) v = rng.uniform();
  patch.set_requires_grad(true);
  Tensor target = Tensor::zeros({3, 16, 16});
  for (auto& v : target.vec()) v = rng.uniform();

  AffineTransformFamily fam;
  AffineTransform t = fam.sample(rng);
  auto fwd = [&]() { return mse(paste_patch(base, patch, t), target); };
  backward(fwd());
  auto fval = [&]() { return fwd().item(); };

  auto rp = testing::finite_diff_check(patch, fval, patch.grad_vec());
  CHECK(rp.max_rel_err < 1e-4);
  std::vector<int> idx;
  Rng pick(4);
  for (int i = 0; i < 60; ++i) idx.push_back(pick.uniform_int(base.numel()));
  auto rb =
      testing::finite_diff_check_subset(base, fval, base.grad_vec(), idx);
  CHECK(rb.max_rel_err < 1e-4);
}

TEST_CASE("apply_global: clip contract") {
  Rng rng(5);
  std::vector<Tensor> frames = random_frames(rng);
  GlobalPerturbation zero{{Tensor::zeros({3, 64, 64})}, 0.03};
  auto same = apply_global(frames, zero);
  for (size_t i = 0; i < frames.size(); ++i)
    CHECK(same[i].vec() == frames[i].vec());

  std::vector<Tensor> ones{Tensor::full({3, 64, 64}, 1.0),
                           Tensor::full({3, 64, 64}, 1.0)};
  GlobalPerturbation pos{{Tensor::full({3, 64, 64}, 0.03)}, 0.03};
  for (const auto& f : apply_global(ones, pos))
    for (double v : f.vec()) CHECK(v == 1.0);

  GlobalPerturbation bad{{Tensor::zeros({3, 32, 32})}, 0.03};
  CHECK_THROWS_AS(apply_global(frames, bad), DimensionError);
}

TEST_CASE("adv_loss: sign identity and pixel gradients") {
  DiffusionPolicy p;
  p.init(11);
  Rng rng(2);
  std::vector<Tensor> frames = random_frames(rng);
  Tensor tau = Tensor::randn({8, 2}, rng);

  {
    NoGradGuard ng;
    Rng r1(42), r2(42);
    const double lt = adv_loss(p, frames, tau, AttackMode::Targeted, r1).item();
    const double lu =
        adv_loss(p, frames, tau, AttackMode::Untargeted, r2).item();
    CHECK(lt == doctest::Approx(-lu).epsilon(1e-12));
    CHECK(lt > 0.0);
  }

  frames[1].set_requires_grad(true);
  auto fwd = [&]() {
    Rng r(42);  // replayed (k, eps) draw so the objective is deterministic
    return adv_loss(p, frames, tau, AttackMode::Targeted, r);
  };
  backward(fwd());
  std::vector<int> idx;
  Rng pick(6);
  for (int i = 0; i < 40; ++i) idx.push_back(pick.uniform_int(3 * 64 * 64));
  auto r = testing::finite_diff_check_subset(
      frames[1], [&]() { return fwd().item(); }, frames[1].grad_vec(), idx);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("online attack: trivial cases, budget, determinism") {
  DiffusionPolicy p;
  p.init(20);
  Rng rng(8);
  std::vector<Tensor> frames = random_frames(rng);

  AttackConfig cfg;
  cfg.steps = 0;
  GlobalPerturbation z = attack_online_global(p, frames, cfg);
  REQUIRE(z.deltas.size() == 2);
  for (const auto& d : z.deltas)
    for (double v : d.vec()) CHECK(v == 0.0);

  cfg.steps = 5;
  cfg.sigma = 0.0;
  GlobalPerturbation z2 = attack_online_global(p, frames, cfg);
  for (const auto& d : z2.deltas)
    for (double v : d.vec()) CHECK(v == 0.0);

  cfg.sigma = 0.03;
  cfg.seed = 71;
  GlobalPerturbation a = attack_online_global(p, frames, cfg);
  GlobalPerturbation b = attack_online_global(p, frames, cfg);
  for (size_t i = 0; i < a.deltas.size(); ++i)
    CHECK(a.deltas[i].vec() == b.deltas[i].vec());
  CHECK_NOTHROW(a.check_budget());
}

TEST_CASE("online attack: Monte-Carlo loss descent (targeted, N=50)") {
  DiffusionPolicy p;
  p.init(30);
  Rng rng(12);
  std::vector<Tensor> frames = random_frames(rng);

  AttackConfig cfg;  // defaults: sigma 0.03, alpha 0.001875, N 50, targeted
  cfg.seed = 5;
  GlobalPerturbation pert = attack_online_global(p, frames, cfg);

  const Tensor target = cfg.resolved_target();
  const double before =
      mc_loss(p, frames, target, AttackMode::Targeted, 9001);
  const double after = mc_loss(p, apply_global(frames, pert), target,
                               AttackMode::Targeted, 9001);
  CHECK(after < before);
}

TEST_CASE("online attack: untargeted increases the denoising loss") {
  DiffusionPolicy p;
  p.init(31);
  Rng rng(13);
  std::vector<Tensor> frames = random_frames(rng);

  AttackConfig cfg;
  cfg.mode = AttackMode::Untargeted;
  cfg.seed = 6;
  GlobalPerturbation pert = attack_online_global(p, frames, cfg);

  Rng tau_rng(derive_seed(cfg.seed, "online_tau"));
  Tensor tau;
  {
    Observation obs;
    obs.frames = frames;
    obs.agent_state = Tensor::zeros({4});
    tau = p.generate_normalized(obs, tau_rng, cfg.scheduler);
  }
  // untargeted objective is the negated denoising loss; it must decrease
  const double before =
      mc_loss(p, frames, tau, AttackMode::Untargeted, 9002);
  const double after = mc_loss(p, apply_global(frames, pert), tau,
                               AttackMode::Untargeted, 9002);
  CHECK(after < before);
}

TEST_CASE("offline attack: trivial case, budget, held-out descent") {
  DemoDataset ds = generate_dataset(2, 200, 44);
  DiffusionPolicy p;
  p.init(40);
  p.normalizer = ActionNormalizer::fit(ds);

  AttackConfig cfg;
  cfg.seed = 3;
  GlobalPerturbation z = attack_offline_global(p, ds, cfg, 0, 64);
  REQUIRE(z.deltas.size() == 1);
  for (double v : z.deltas[0].vec()) CHECK(v == 0.0);

  cfg.alpha = 0.01;  // large steps so a short run can saturate
  GlobalPerturbation pert = attack_offline_global(p, ds, cfg, 2, 64);
  CHECK_NOTHROW(pert.check_budget());
  double max_abs = 0.0;
  for (double v : pert.deltas[0].vec())
    max_abs = std::max(max_abs, std::fabs(v));
  CHECK(max_abs == doctest::Approx(cfg.sigma).epsilon(1e-9));

  // held-out frames: later timesteps of episode 0
  const Tensor target = cfg.resolved_target();
  const int t0 = ds.episodes[0].steps / 2;
  double before = 0.0, after = 0.0;
  {
  NoGradGuard ng;
  for (int i = 0; i < 50; ++i) {
    const int t = t0 + i % (ds.episodes[0].steps - t0);
    std::vector<Tensor> fs{ds.frame(0, std::max(0, t - 1)), ds.frame(0, t)};
    Rng r1(derive_seed(777, "holdout", i));
    Rng r2(derive_seed(777, "holdout", i));
    before += adv_loss(p, fs, target, AttackMode::Targeted, r1).item();
    after += adv_loss(p, apply_global(fs, pert), target, AttackMode::Targeted,
                      r2)
                 .item();
  }
  }
  CHECK(after < before);

  // determinism
  GlobalPerturbation pert2 = attack_offline_global(p, ds, cfg, 2, 64);
  CHECK(pert.deltas[0].vec() == pert2.deltas[0].vec());
}

TEST_CASE("patch attack: trivial cases and transform-averaged descent") {
  DemoDataset ds = generate_dataset(2, 200, 45);
  DiffusionPolicy p;
  p.init(50);
  p.normalizer = ActionNormalizer::fit(ds);
  AffineTransformFamily fam;

  AttackConfig cfg;
  cfg.mode = AttackMode::Untargeted;
  cfg.seed = 14;
  Tensor x0 = attack_patch(p, ds, fam, cfg, 0, 32);
  CHECK(x0.shape() == std::vector<int>{3, 13, 13});
  for (double v : x0.vec()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  // 0 epochs returns the clipped random init, deterministically
  Tensor x0b = attack_patch(p, ds, fam, cfg, 0, 32);
  CHECK(x0.vec() == x0b.vec());

  // the expected-loss signal through a random-init policy is weak, so the
  // descent check needs a long optimization and a large paired evaluation
  cfg.alpha = 0.02;
  Tensor x = attack_patch(p, ds, fam, cfg, 20, 32);
  for (double v : x.vec()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  // transform-averaged untargeted loss: trained patch vs its own init (same
  // seed, zero epochs), a paired comparison that isolates the optimization

  auto eval_patch = [&](const Tensor& patch) {
    NoGradGuard ng;
    Rng erng(4242);
    double total = 0.0;
    for (int i = 0; i < 400; ++i) {
      const AffineTransform t = fam.sample(erng);
      const int ep = i % static_cast<int>(ds.episodes.size());
      const int tt = (i * 7) % (ds.episodes[ep].steps -
                                DiffusionPolicy::kActionLen);
      std::vector<Tensor> fs{ds.frame(ep, std::max(0, tt - 1)),
                             ds.frame(ep, tt)};
      std::vector<Tensor> attacked;
      for (const auto& f : fs) attacked.push_back(paste_patch(f, patch, t));
      std::vector<double> vals;
      for (int j = 0; j < DiffusionPolicy::kActionLen; ++j)
        for (int d = 0; d < 2; ++d)
          vals.push_back(ds.episodes[ep].actions[(tt + j) * 2 + d]);
      Tensor tau = p.normalizer.normalize(Tensor::from({8, 2}, vals));
      Rng lr(derive_seed(31337, "patch_eval", i));
      total += adv_loss(p, attacked, tau, AttackMode::Untargeted, lr).item();
    }
    return total / 400.0;
  };
  CHECK(eval_patch(x) < eval_patch(x0));
}

TEST_CASE("end-to-end attack: trivial case, determinism, budget") {
  DiffusionPolicy p;
  p.init(60);
  Rng rng(15);
  std::vector<Tensor> frames = random_frames(rng);

  AttackConfig cfg;
  cfg.steps = 0;
  GlobalPerturbation z = end2end_attack(p, frames, cfg);
  for (const auto& d : z.deltas)
    for (double v : d.vec()) CHECK(v == 0.0);

  cfg.steps = 3;
  cfg.scheduler.kind = SamplerKind::Ddim;
  cfg.scheduler.ddim_steps = 4;
  cfg.seed = 77;
  GlobalPerturbation a = end2end_attack(p, frames, cfg);
  GlobalPerturbation b = end2end_attack(p, frames, cfg);
  for (size_t i = 0; i < a.deltas.size(); ++i) {
    CHECK(a.deltas[i].vec() == b.deltas[i].vec());
    bool nonzero = false;
    for (double v : a.deltas[i].vec())
      if (v != 0.0) nonzero = true;
    CHECK(nonzero);
  }
  CHECK_NOTHROW(a.check_budget());
}

TEST_CASE("end-to-end attack: gradient through a 2-step chain matches FD") {
  DiffusionPolicy p;
  p.init(61);
  Rng rng(16);
  std::vector<Tensor> frames = random_frames(rng);
  frames[0].set_requires_grad(true);

  struct Adapter : Denoiser {
    const DiffusionPolicy* p;
    const Observation* obs;
    Tensor predict(const Tensor& x, int k, const Tensor&) const override {
      return p->predict_noise(x, k, *obs);
    }
  };

  Observation obs;
  obs.frames = frames;
  obs.agent_state = Tensor::zeros({4});
  Adapter ad;
  ad.p = &p;
  ad.obs = &obs;

  Tensor target = Tensor::full({8, 2}, 1.0);
  const std::vector<int> ts = ddim_timesteps(p.schedule.K(), 2);
  auto fwd = [&]() {
    Rng chain(31);
    Tensor x = Tensor::randn({8, 2}, chain);
    for (size_t i = 0; i < ts.size(); ++i)
      x = ddim_step(p.schedule, x, ts[i],
                    i + 1 < ts.size() ? ts[i + 1] : -1, ad,
                    Tensor::zeros({1}));
    return mse(x, target);
  };
  backward(fwd());
  std::vector<int> idx;
  Rng pick(17);
  for (int i = 0; i < 25; ++i) idx.push_back(pick.uniform_int(3 * 64 * 64));
  auto r = testing::finite_diff_check_subset(
      frames[0], [&]() { return fwd().item(); }, frames[0].grad_vec(), idx,
      1e-4);
  CHECK(r.max_rel_err < 1e-3);
}
