#include "core/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dpa {

namespace {

// Adapts the policy's denoiser to the sampler interface; cond carries the
// precomputed visual feature so the encoder runs once per inference.
class PolicyDenoiser : public Denoiser {
 public:
  explicit PolicyDenoiser(const DiffusionPolicy& p) : p_(p) {}
  Tensor predict(const Tensor& x_k, int k, const Tensor& cond) const override {
    return p_.predict_noise_feat(x_k, k, cond);
  }

 private:
  const DiffusionPolicy& p_;
};

}  // namespace

ActionNormalizer ActionNormalizer::fit(const DemoDataset& ds) {
  if (ds.episodes.empty()) throw UsageError("normalizer: empty dataset");
  const int d = ds.action_dim;
  ActionNormalizer n;
  n.lo.assign(d, std::numeric_limits<double>::infinity());
  n.hi.assign(d, -std::numeric_limits<double>::infinity());
  for (const auto& e : ds.episodes)
    for (size_t i = 0; i < e.actions.size(); ++i) {
      const int dim = static_cast<int>(i) % d;
      n.lo[dim] = std::min(n.lo[dim], static_cast<double>(e.actions[i]));
      n.hi[dim] = std::max(n.hi[dim], static_cast<double>(e.actions[i]));
    }
  for (int j = 0; j < d; ++j)
    if (n.hi[j] - n.lo[j] < 1e-9) n.hi[j] = n.lo[j] + 1.0;  // degenerate dim
  return n;
}

Tensor ActionNormalizer::normalize(const Tensor& actions) const {
  const int d = static_cast<int>(lo.size());
  if (actions.shape().size() != 2 || actions.shape()[1] != d)
    throw DimensionError("normalize: expected [L, action_dim]");
  Tensor out = actions.detach();
  for (int i = 0; i < out.numel(); ++i) {
    const int j = i % d;
    out.data()[i] = 2.0 * (out.data()[i] - lo[j]) / (hi[j] - lo[j]) - 1.0;
  }
  return out;
}

Tensor ActionNormalizer::denormalize(const Tensor& actions) const {
  const int d = static_cast<int>(lo.size());
  if (actions.shape().size() != 2 || actions.shape()[1] != d)
    throw DimensionError("denormalize: expected [L, action_dim]");
  Tensor out = actions.detach();
  for (int i = 0; i < out.numel(); ++i) {
    const int j = i % d;
    out.data()[i] = lo[j] + (out.data()[i] + 1.0) * 0.5 * (hi[j] - lo[j]);
  }
  return out;
}

void DiffusionPolicy::init(uint64_t seed) {
  Rng enc_rng(derive_seed(seed, "encoder_init"));
  encoder.init(3 * kObsHorizon, enc_rng);
  Rng den_rng(derive_seed(seed, "denoiser_init"));
  denoiser.init(ConvEncoder::kFeatureDim, kActionLen * kActionDim, den_rng);
  normalizer.lo.assign(kActionDim, -1.0);
  normalizer.hi.assign(kActionDim, 1.0);
}

Tensor DiffusionPolicy::encode_observation(const Observation& obs) const {
  if (obs.frames.size() != kObsHorizon)
    throw DimensionError("observation: expected " +
                         std::to_string(kObsHorizon) + " frames");
  for (const auto& f : obs.frames)
    if (f.shape() != std::vector<int>{3, 64, 64})
      throw DimensionError("observation: frames must be [3, 64, 64]");
  return encoder.forward(concat_channels(obs.frames));
}

Tensor DiffusionPolicy::predict_noise_feat(const Tensor& traj_k, int k,
                                           const Tensor& feature) const {
  Tensor flat = reshape(traj_k, {1, kActionLen * kActionDim});
  return reshape(denoiser.forward(flat, k, feature), traj_k.shape());
}

Tensor DiffusionPolicy::predict_noise(const Tensor& traj_k, int k,
                                      const Observation& obs) const {
  return predict_noise_feat(traj_k, k, encode_observation(obs));
}

Tensor DiffusionPolicy::generate_normalized(const Observation& obs, Rng& rng,
                                            const SamplerConfig& sampler) const {
  NoGradGuard no_grad;
  Tensor feature = encode_observation(obs);
  PolicyDenoiser pd(*this);
  Tensor traj = sample_loop(schedule, pd, feature, {kActionLen, kActionDim},
                            sampler, rng);
  return clamp(traj, -kSampleClamp, kSampleClamp);
}

ActionTrajectory DiffusionPolicy::generate_action(
    const Observation& obs, Rng& rng, const SamplerConfig& sampler) const {
  return {normalizer.denormalize(generate_normalized(obs, rng, sampler))};
}

Tensor DiffusionPolicy::denoising_loss_sample(const Observation& obs,
                                              const Tensor& norm_traj, int k,
                                              const Tensor& eps) const {
  Tensor feature = encode_observation(obs);
  Tensor x_k = forward_sample(schedule, norm_traj, k, eps);
  return mse(predict_noise_feat(x_k, k, feature), eps);
}

std::vector<Tensor> DiffusionPolicy::params() const {
  std::vector<Tensor> out = encoder.params();
  for (auto& t : denoiser.params()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, Tensor>> DiffusionPolicy::named_params()
    const {
  auto out = encoder.named_params("encoder");
  for (auto& p : denoiser.named_params("denoiser")) out.push_back(p);
  return out;
}

namespace {

struct Window {
  int episode, t;  // frames (t-1, t), actions t .. t + L_a - 1
};

std::vector<Window> make_windows(const DemoDataset& ds) {
  std::vector<Window> ws;
  for (size_t e = 0; e < ds.episodes.size(); ++e) {
    const int steps = ds.episodes[e].steps;
    for (int t = 0; t + DiffusionPolicy::kActionLen <= steps; ++t)
      ws.push_back({static_cast<int>(e), t});
  }
  if (ws.empty()) throw UsageError("train: dataset has no usable windows");
  return ws;
}

Observation window_observation(const DemoDataset& ds, const Window& w) {
  Observation obs;
  obs.frames = {ds.frame(w.episode, std::max(0, w.t - 1)),
                ds.frame(w.episode, w.t)};
  const auto& st = ds.episodes[w.episode].agent_states;
  obs.agent_state =
      Tensor::from({4}, {st[w.t * 4 + 0], st[w.t * 4 + 1], st[w.t * 4 + 2],
                         st[w.t * 4 + 3]});
  return obs;
}

Tensor window_actions(const DemoDataset& ds, const Window& w) {
  const auto& a = ds.episodes[w.episode].actions;
  std::vector<double> vals;
  vals.reserve(DiffusionPolicy::kActionLen * DiffusionPolicy::kActionDim);
  for (int i = 0; i < DiffusionPolicy::kActionLen; ++i)
    for (int d = 0; d < DiffusionPolicy::kActionDim; ++d)
      vals.push_back(a[(w.t + i) * DiffusionPolicy::kActionDim + d]);
  return Tensor::from(
      {DiffusionPolicy::kActionLen, DiffusionPolicy::kActionDim},
      std::move(vals));
}

void run_epochs(DiffusionPolicy& policy, Adam& opt, const DemoDataset& dataset,
                const TrainConfig& cfg, int start_epoch) {
  const std::vector<Window> all_windows = make_windows(dataset);
  std::vector<Tensor> params = policy.params();
  const int K = policy.schedule.K();

  for (int epoch = start_epoch; epoch < start_epoch + cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "train_epoch", epoch));
    // Fisher-Yates shuffle from canonical order, so an epoch's minibatch
    // composition depends only on (seed, epoch) and resume is exact.
    std::vector<Window> windows = all_windows;
    for (int i = static_cast<int>(windows.size()) - 1; i > 0; --i)
      std::swap(windows[i], windows[rng.uniform_int(i + 1)]);

    double epoch_loss = 0.0;
    size_t pos = 0;
    while (pos < windows.size()) {
      const size_t batch_end =
          std::min(windows.size(), pos + static_cast<size_t>(cfg.batch));
      const double inv_n = 1.0 / static_cast<double>(batch_end - pos);
      for (auto& p : params) p.zero_grad();
      for (; pos < batch_end; ++pos) {
        const Window& w = windows[pos];
        Observation obs = window_observation(dataset, w);
        Tensor traj = policy.normalizer.normalize(window_actions(dataset, w));
        const int k = rng.uniform_int(K);
        Tensor eps = Tensor::randn(traj.shape(), rng);
        Tensor loss =
            scale(policy.denoising_loss_sample(obs, traj, k, eps), inv_n);
        backward(loss);
        epoch_loss += loss.item() / inv_n;
      }
      opt.step(params);
    }
    // Round state to f32 at epoch boundaries so a checkpoint (stored as f32)
    // is an exact snapshot and resumed training matches an uninterrupted run.
    for (auto& p : params)
      for (auto& v : p.vec()) v = static_cast<float>(v);
    for (auto& m : opt.m)
      for (auto& v : m) v = static_cast<float>(v);
    for (auto& mv : opt.v)
      for (auto& v : mv) v = static_cast<float>(v);
    if (cfg.log) cfg.log(epoch, epoch_loss / windows.size());
  }
}

}  // namespace

DiffusionPolicy train_policy(const DemoDataset& dataset,
                             const TrainConfig& cfg) {
  DiffusionPolicy policy;
  policy.init(derive_seed(cfg.seed, "policy_init"));
  policy.normalizer = ActionNormalizer::fit(dataset);
  Adam opt;
  opt.lr = cfg.lr;
  run_epochs(policy, opt, dataset, cfg, 0);
  return policy;
}

void train_policy_continue(DiffusionPolicy& policy, Adam& opt,
                           const DemoDataset& dataset, const TrainConfig& cfg,
                           int start_epoch) {
  run_epochs(policy, opt, dataset, cfg, start_epoch);
}

RolloutTrace receding_horizon_execute(const DiffusionPolicy& policy,
                                      const PushEnv& env, const EnvState& start,
                                      int episode_len, Rng& rng,
                                      const SamplerConfig& sampler,
                                      const AttackHook* hook,
                                      const ScenePatch* patch,
                                      bool keep_attacked_frames) {
  RolloutTrace out;
  EnvState s = start;
  Tensor prev = env.render(s, patch);
  Tensor cur = prev;  // first inference sees a duplicated frame
  int step = 0;
  bool done = false;

  while (step < episode_len && !done) {
    std::vector<Tensor> frames{prev, cur};
    double attack_ms = 0.0;
    if (hook) {
      AttackHookResult hr = (*hook)(frames, step);
      frames = std::move(hr.frames);
      attack_ms = hr.attack_ms;
    }
    out.attack_ms.push_back(attack_ms);
    if (keep_attacked_frames) out.attacked_frames.push_back(frames);

    Observation obs;
    obs.frames = std::move(frames);
    obs.agent_state = Tensor::from(
        {4}, {s.agent_pos.x, s.agent_pos.y, s.agent_vel.x, s.agent_vel.y});
    ActionTrajectory traj = policy.generate_action(obs, rng, sampler);

    for (int i = 0; i < DiffusionPolicy::kExecSteps && step < episode_len;
         ++i) {
      const std::array<double, 2> a{traj.actions.data()[i * 2],
                                    traj.actions.data()[i * 2 + 1]};
      s = env.step(s, a);
      out.actions.push_back(a);
      out.states.push_back(s);
      out.step_scores.push_back(s.coverage);
      ++step;
      prev = cur;
      cur = env.render(s, patch);
      if (s.coverage >= 0.95) {  // success locked in; score is a running max
        done = true;
        break;
      }
    }
  }

  auto [score, success] = score_episode(out.step_scores);
  out.score = score;
  out.success = success;
  out.steps = step;
  return out;
}

}  // namespace dpa
