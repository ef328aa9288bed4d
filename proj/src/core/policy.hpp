#pragma once

#include <functional>

#include "core/diffusion.hpp"
#include "core/env.hpp"
#include "core/nets.hpp"

namespace dpa {

// Stacked RGB frames (T_o = 2, most recent last) plus the agent's
// position/velocity. Pixels live in [0,1]; only pixels condition the policy.
struct Observation {
  std::vector<Tensor> frames;  // T_o tensors of [3, 64, 64]
  Tensor agent_state;          // [4]
};

// Planned action sequence, denormalized to command units.
struct ActionTrajectory {
  Tensor actions;  // [L_a, D_a]
};

// Per-dimension min/max mapping dataset actions onto [-1, 1].
struct ActionNormalizer {
  std::vector<double> lo, hi;

  static ActionNormalizer fit(const DemoDataset& ds);
  Tensor normalize(const Tensor& actions) const;    // [L,D] -> [L,D]
  Tensor denormalize(const Tensor& actions) const;  // [L,D] -> [L,D]
};

class DiffusionPolicy {
 public:
  static constexpr int kObsHorizon = 2;
  static constexpr int kActionLen = 8;
  static constexpr int kActionDim = 2;
  static constexpr int kExecSteps = 4;
  static constexpr double kSampleClamp = 1.5;

  ConvEncoder encoder;
  MlpDenoiser denoiser;
  NoiseSchedule schedule = NoiseSchedule::linear();
  ActionNormalizer normalizer;

  void init(uint64_t seed);

  // [64]-d visual feature; differentiable w.r.t. pixels.
  Tensor encode_observation(const Observation& obs) const;

  // eps prediction for a noised normalized trajectory [L_a, D_a].
  Tensor predict_noise(const Tensor& traj_k, int k, const Observation& obs) const;
  Tensor predict_noise_feat(const Tensor& traj_k, int k,
                            const Tensor& feature) const;

  // Normalized trajectory sample, clamped to [-kSampleClamp, kSampleClamp].
  Tensor generate_normalized(const Observation& obs, Rng& rng,
                             const SamplerConfig& sampler) const;
  ActionTrajectory generate_action(const Observation& obs, Rng& rng,
                                   const SamplerConfig& sampler) const;

  // Training loss for one (observation, normalized trajectory) pair.
  Tensor denoising_loss_sample(const Observation& obs, const Tensor& norm_traj,
                               int k, const Tensor& eps) const;

  std::vector<Tensor> params() const;
  std::vector<std::pair<std::string, Tensor>> named_params() const;
};

struct TrainConfig {
  // ~1900 Adam steps per 10 epochs on a 150-episode dataset; the encoder
  // conditioning pathway needs well past 5000 steps to become load-bearing
  int epochs = 40;
  int batch = 64;
  double lr = 1e-3;
  uint64_t seed = 1;
  std::function<void(int epoch, double mean_loss)> log;
};

DiffusionPolicy train_policy(const DemoDataset& dataset, const TrainConfig& cfg);

// Continue training an existing policy (checkpoint resume).
void train_policy_continue(DiffusionPolicy& policy, Adam& opt,
                           const DemoDataset& dataset, const TrainConfig& cfg,
                           int start_epoch);

// Observation frames may be replaced by an attack hook before the policy
// sees them; the hook also reports its own wall time in milliseconds.
struct AttackHookResult {
  std::vector<Tensor> frames;
  double attack_ms = 0.0;
};
using AttackHook =
    std::function<AttackHookResult(const std::vector<Tensor>& frames, int step)>;

struct RolloutTrace {
  std::vector<EnvState> states;  // one per env step, post-step
  std::vector<std::array<double, 2>> actions;
  std::vector<double> step_scores;
  std::vector<double> attack_ms;  // one per policy inference
  std::vector<std::vector<Tensor>> attacked_frames;  // per inference, post-hook
  double score = 0.0;
  bool success = false;
  int steps = 0;
};

// Receding-horizon control: render, (optionally attack), plan L_a actions,
// execute kExecSteps, repeat. Stops early once the success score is locked in.
RolloutTrace receding_horizon_execute(const DiffusionPolicy& policy,
                                      const PushEnv& env, const EnvState& start,
                                      int episode_len, Rng& rng,
                                      const SamplerConfig& sampler,
                                      const AttackHook* hook = nullptr,
                                      const ScenePatch* patch = nullptr,
                                      bool keep_attacked_frames = false);

}  // namespace dpa
