#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "core/env.hpp"
#include "core/rng.hpp"

using namespace dpa;

TEST_CASE("reset determinism and spawn constraints") {
  PushEnv env;
  EnvState a = env.reset(1234);
  EnvState b = env.reset(1234);
  CHECK(a.agent_pos.x == b.agent_pos.x);
  CHECK(a.block_pos.y == b.block_pos.y);
  CHECK(a.block_rot == b.block_rot);

  CHECK(a.step_count == 0);
  CHECK(a.coverage <= 0.2);  // spawn excludes the goal
}

TEST_CASE("reset covers the workspace (5x5 grid over 1000 seeds)") {
  PushEnv env;
  std::set<int> cells;
  for (uint64_t s = 0; s < 1000; ++s) {
    EnvState st = env.reset(s);
    const int cx = std::min(4, static_cast<int>(st.block_pos.x * 5.0));
    const int cy = std::min(4, static_cast<int>(st.block_pos.y * 5.0));
    cells.insert(cy * 5 + cx);
  }
  CHECK(cells.size() >= 20);  // >= 80% of 25 cells
}

TEST_CASE("step: zero action decelerates, block static without contact") {
  PushEnv env;
  EnvState s = env.reset(7);
  s.agent_vel = {0.02, -0.01};
  // place agent away from the block
  s.agent_pos = {s.block_pos.x > 0.5 ? 0.1 : 0.9, 0.1};
  const Vec2 block_before = s.block_pos;
  EnvState s2 = env.step(s, {0.0, 0.0});
  CHECK(std::fabs(s2.agent_vel.x) < std::fabs(s.agent_vel.x));
  CHECK(std::fabs(s2.agent_vel.y) < std::fabs(s.agent_vel.y));
  CHECK(s2.block_pos.x == block_before.x);
  CHECK(s2.block_pos.y == block_before.y);
  CHECK(s2.step_count == s.step_count + 1);
}

TEST_CASE("step: speed bounded under action fuzzing") {
  PushEnv env;
  Rng rng(99);
  EnvState s = env.reset(3);
  const double vmax = env.config().v_max;
  for (int i = 0; i < 10000; ++i) {
    std::array<double, 2> a{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
    s = env.step(s, a);
    CHECK(std::fabs(s.agent_vel.x) <= vmax + 1e-12);
    CHECK(std::fabs(s.agent_vel.y) <= vmax + 1e-12);
    CHECK(s.agent_pos.x >= 0.0);
    CHECK(s.agent_pos.x <= 1.0);
    CHECK(s.block_pos.x >= 0.0);
    CHECK(s.block_pos.x <= 1.0);
    CHECK(s.coverage >= 0.0);
    CHECK(s.coverage <= 1.0);
  }
}

TEST_CASE("coverage: block fully inside the goal gives 1") {
  PushEnv env;
  EnvState s;
  s.block_pos = {env.config().goal_center.x, env.config().goal_center.y};
  s.block_rot = 0.3;
  CHECK(env.coverage(s) == doctest::Approx(1.0));

  s.block_pos = {0.1, 0.1};
  CHECK(env.coverage(s) == 0.0);
}

TEST_CASE("render determinism and layering") {
  PushEnv env;
  EnvState s = env.reset(21);
  Tensor a = env.render(s);
  Tensor b = env.render(s);
  CHECK(a.vec() == b.vec());
  CHECK(a.shape() == std::vector<int>{3, 64, 64});
  for (double v : a.vec()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("patch rendering: exact footprint at rotation 0") {
  PushEnv env;
  EnvState s = env.reset(5);
  // keep the scene away from the patch corner
  s.agent_pos = {0.9, 0.9};
  s.block_pos = {0.5, 0.85};

  ScenePatch patch;
  patch.image = Tensor::full({3, 13, 13}, 1.0);
  patch.image.vec()[0] = 0.0;  // make it non-uniform
  patch.position = {0.2, 0.25};
  patch.rotation = 0.0;
  patch.size = 0.09;

  Tensor clean = env.render(s);
  Tensor with_patch = env.render(s, &patch);

  // expected footprint: pixels whose 2x2 supersample points hit the quad
  int changed = 0;
  for (int row = 0; row < 64; ++row)
    for (int col = 0; col < 64; ++col) {
      bool covered = false;
      for (int sy = 0; sy < 2 && !covered; ++sy)
        for (int sx = 0; sx < 2 && !covered; ++sx) {
          const double wx = (col + 0.25 + 0.5 * sx) / 64.0;
          const double wy = 1.0 - (row + 0.25 + 0.5 * sy) / 64.0;
          covered = std::fabs(wx - patch.position.x) < patch.size / 2 &&
                    std::fabs(wy - patch.position.y) < patch.size / 2;
        }
      bool differs = false;
      for (int c = 0; c < 3; ++c)
        if (clean.data()[(c * 64 + row) * 64 + col] !=
            with_patch.data()[(c * 64 + row) * 64 + col])
          differs = true;
      if (differs) ++changed;
      if (!covered) CHECK(!differs);
    }
  CHECK(changed > 0);
}

TEST_CASE("patch rendering responds to rotation") {
  PushEnv env;
  EnvState s = env.reset(5);
  s.agent_pos = {0.9, 0.9};
  s.block_pos = {0.5, 0.85};

  Rng rng(3);
  ScenePatch patch;
  patch.image = Tensor::zeros({3, 13, 13});
  for (auto& v : patch.image.vec()) v = rng.uniform();
  patch.position = {0.25, 0.25};
  patch.size = 0.09;

  patch.rotation = M_PI / 4.0;
  Tensor r1 = env.render(s, &patch);
  patch.rotation = -M_PI / 4.0;
  Tensor r2 = env.render(s, &patch);
  double diff = 0.0;
  for (int i = 0; i < r1.numel(); ++i)
    diff += std::fabs(r1.data()[i] - r2.data()[i]);
  CHECK(diff / r1.numel() > 0.0);
}

TEST_CASE("expert: near-zero action when block is already in the goal") {
  PushEnv env;
  EnvState s;
  s.block_pos = {env.config().goal_center.x, env.config().goal_center.y};
  s.block_rot = 0.1;
  s.agent_pos = {0.3, 0.3};
  s.coverage = env.coverage(s);
  auto a = env.scripted_expert(s);
  CHECK(std::fabs(a[0]) < 0.3);  // one slew step of decay at most
  CHECK(std::fabs(a[1]) < 0.3);
  // and it decays to zero within a few steps
  for (int i = 0; i < 6; ++i) {
    s = env.step(s, a);
    s.block_pos = {env.config().goal_center.x, env.config().goal_center.y};
    s.coverage = env.coverage(s);
    a = env.scripted_expert(s);
  }
  CHECK(std::fabs(a[0]) < 1e-9);
  CHECK(std::fabs(a[1]) < 1e-9);
}

TEST_CASE("expert: action continuity under the slew limit") {
  PushEnv env;
  EnvState s = env.reset(11);
  std::array<double, 2> prev{0.0, 0.0};
  for (int t = 0; t < 150; ++t) {
    auto a = env.scripted_expert(s);
    CHECK(std::fabs(a[0] - prev[0]) <= env.config().action_slew + 1e-12);
    CHECK(std::fabs(a[1] - prev[1]) <= env.config().action_slew + 1e-12);
    prev = a;
    s = env.step(s, a);
    if (s.coverage >= 0.95) break;
  }
}

TEST_CASE("expert solves >= 95% of 200 seeded episodes within 200 steps") {
  PushEnv env;
  int solved = 0;
  for (uint64_t seed = 0; seed < 200; ++seed) {
    EnvState s = env.reset(derive_seed(42, "env", seed));
    double best = 0.0;
    for (int t = 0; t < 200; ++t) {
      s = env.step(s, env.scripted_expert(s));
      best = std::max(best, s.coverage);
      if (best >= 0.95) break;
    }
    if (best >= 0.9) ++solved;
  }
  CHECK(solved >= 190);
}

TEST_CASE("score_episode") {
  CHECK_THROWS_AS(score_episode({}), UsageError);
  auto [s1, ok1] = score_episode({0.0, 0.05, 0.0});
  CHECK(s1 == doctest::Approx(0.05));
  CHECK(!ok1);
  auto [s2, ok2] = score_episode({0.1, 0.95, 0.4});
  CHECK(s2 == doctest::Approx(0.95));
  CHECK(ok2);
  // monotone under extension
  auto [s3, ok3] = score_episode({0.1, 0.95, 0.4, 0.0});
  CHECK(s3 >= s2);
}

TEST_CASE("dataset generation") {
  EnvConfig cfg;
  DemoDataset ds = generate_dataset(3, 200, 77, cfg);
  CHECK(ds.episodes.size() >= 2);
  for (const auto& e : ds.episodes) {
    CHECK(e.success);
    CHECK(e.steps > 0);
    CHECK(e.frames.size() == static_cast<size_t>(e.steps) * 3 * 64 * 64);
    CHECK(e.actions.size() == static_cast<size_t>(e.steps) * 2);
    for (float a : e.actions) {
      CHECK(a >= -1.0f);
      CHECK(a <= 1.0f);
    }
  }
  // determinism
  DemoDataset ds2 = generate_dataset(3, 200, 77, cfg);
  CHECK(ds.episodes.size() == ds2.episodes.size());
  CHECK(ds.episodes[0].frames == ds2.episodes[0].frames);
  CHECK(ds.episodes[0].actions == ds2.episodes[0].actions);
}

TEST_CASE("randomize_patch_pose stays on the table, outside the goal") {
  PushEnv env;
  Rng rng(8);
  ScenePatch p;
  p.image = Tensor::zeros({3, 13, 13});
  for (int i = 0; i < 500; ++i) {
    env.randomize_patch_pose(p, rng);
    CHECK(p.position.x >= p.size / 2);
    CHECK(p.position.x <= 1.0 - p.size / 2);
    CHECK(p.rotation >= -M_PI / 4);
    CHECK(p.rotation <= M_PI / 4);
    const bool outside_goal =
        std::fabs(p.position.x - env.config().goal_center.x) >
            env.config().goal_half + p.size / 2 ||
        std::fabs(p.position.y - env.config().goal_center.y) >
            env.config().goal_half + p.size / 2;
    CHECK(outside_goal);
  }
}
