#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace dpa {

struct Vec2 {
  double x = 0.0, y = 0.0;
};

// A physical patch placed on the table: image in [0,1], pose in workspace
// units, physical side length in workspace units.
struct ScenePatch {
  Tensor image;  // [3, h_p, w_p]
  Vec2 position;
  double rotation = 0.0;  // radians
  double size = 0.09;     // side length, workspace units
};

struct EnvConfig {
  double agent_radius = 0.045;
  double block_half = 0.08;
  Vec2 goal_center{0.70, 0.70};
  double goal_half = 0.14;
  double v_max = 0.035;          // workspace units per step at full command
  double vel_blend = 0.4;        // vel <- (1-blend)*vel + blend*cmd
  double action_slew = 0.25;     // per-step command delta bound (expert)
  double success_coverage = 0.9;
  int image_size = 64;
};

// Pure-value environment state; step() is a pure function of (state, action).
struct EnvState {
  Vec2 agent_pos, agent_vel;
  Vec2 block_pos;
  double block_rot = 0.0;
  std::array<double, 2> last_action{0.0, 0.0};
  int step_count = 0;
  double coverage = 0.0;  // goal-coverage fraction after the last step
};

class PushEnv {
 public:
  explicit PushEnv(EnvConfig cfg = {}) : cfg_(cfg) {}
  const EnvConfig& config() const { return cfg_; }

  // Seeded-random block pose and agent position; spawn excludes the goal
  // (initial coverage <= 0.1) and agent/block overlap.
  EnvState reset(uint64_t seed) const;

  // action: per-axis velocity command in [-1, 1] (clamped). Returns the new
  // state; state.coverage is the current goal-coverage score in [0, 1].
  EnvState step(const EnvState& s, const std::array<double, 2>& action) const;

  // Top-down raster [3, 64, 64] in [0,1]. The patch, when present, lies on
  // the table beneath block and agent. Pixels only; never affects physics.
  Tensor render(const EnvState& s,
                const ScenePatch* patch = nullptr) const;

  // Exact goal-coverage fraction of the block via polygon clipping.
  double coverage(const EnvState& s) const;

  // Waypoint controller: move behind the block along the block->goal axis,
  // then push toward the goal. Slew-limited against state.last_action.
  std::array<double, 2> scripted_expert(const EnvState& s) const;

  // Uniform patch pose on the table excluding the goal interior,
  // rotation in [-45 deg, 45 deg].
  void randomize_patch_pose(ScenePatch& patch, Rng& rng) const;

 private:
  EnvConfig cfg_;
};

// One expert (or policy) episode record. Frames are 8-bit RGB.
struct EpisodeRecord {
  std::vector<uint8_t> frames;       // steps * 3 * 64 * 64
  std::vector<float> agent_states;   // steps * 4 (pos, vel)
  std::vector<float> actions;        // steps * 2
  int steps = 0;
  double score = 0.0;  // max coverage over the episode
  bool success = false;
  uint64_t seed = 0;
};

struct DemoDataset {
  std::vector<EpisodeRecord> episodes;
  uint64_t seed = 0;
  int image_size = 64;
  int action_dim = 2;

  int total_steps() const;
  // Frame t of episode e as a [3,64,64] tensor in [0,1].
  Tensor frame(int episode, int t) const;
};

// Runs the expert for n_episodes and keeps successful episodes. Throws
// UsageError if more than 20% of episodes fail (env/expert misconfiguration).
DemoDataset generate_dataset(int n_episodes, int max_steps, uint64_t seed,
                             const EnvConfig& cfg = {});

// score = max step coverage, success = score >= 0.9.
std::pair<double, bool> score_episode(const std::vector<double>& step_scores);

}  // namespace dpa
