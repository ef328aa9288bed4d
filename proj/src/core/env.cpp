#include "core/env.hpp"

#include <algorithm>
#include <cmath>

namespace dpa {

namespace {

double clampd(double v, double lo, double hi) {
  return std::min(hi, std::max(lo, v));
}

Vec2 rotate(const Vec2& v, double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

double norm(const Vec2& v) { return std::hypot(v.x, v.y); }

Vec2 normalized(const Vec2& v) {
  const double n = norm(v);
  if (n < 1e-12) return {0.0, 0.0};
  return {v.x / n, v.y / n};
}

using Poly = std::vector<Vec2>;

Poly block_polygon(const Vec2& c, double rot, double half) {
  Poly p;
  for (auto [sx, sy] : {std::pair{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}) {
    Vec2 corner = rotate({sx * half, sy * half}, rot);
    p.push_back({c.x + corner.x, c.y + corner.y});
  }
  return p;
}

// Sutherland-Hodgman clip of polygon against half-plane keep(p) >= 0.
template <typename FIn, typename FVal>
Poly clip_halfplane(const Poly& poly, FIn inside, FVal line_value) {
  Poly out;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % n];
    const bool ain = inside(a), bin = inside(b);
    if (ain) out.push_back(a);
    if (ain != bin) {
      const double va = line_value(a), vb = line_value(b);
      const double t = va / (va - vb);
      out.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
    }
  }
  return out;
}

Poly clip_to_rect(Poly poly, double x0, double y0, double x1, double y1) {
  auto clip = [&poly](auto val) {
    poly = clip_halfplane(
        poly, [&val](const Vec2& p) { return val(p) >= 0.0; }, val);
  };
  clip([x0](const Vec2& p) { return p.x - x0; });
  if (poly.empty()) return poly;
  clip([x1](const Vec2& p) { return x1 - p.x; });
  if (poly.empty()) return poly;
  clip([y0](const Vec2& p) { return p.y - y0; });
  if (poly.empty()) return poly;
  clip([y1](const Vec2& p) { return y1 - p.y; });
  return poly;
}

double poly_area(const Poly& p) {
  double a = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const Vec2& u = p[i];
    const Vec2& v = p[(i + 1) % p.size()];
    a += u.x * v.y - v.x * u.y;
  }
  return std::fabs(a) * 0.5;
}

}  // namespace

double PushEnv::coverage(const EnvState& s) const {
  Poly block = block_polygon(s.block_pos, s.block_rot, cfg_.block_half);
  const double gx0 = cfg_.goal_center.x - cfg_.goal_half;
  const double gx1 = cfg_.goal_center.x + cfg_.goal_half;
  const double gy0 = cfg_.goal_center.y - cfg_.goal_half;
  const double gy1 = cfg_.goal_center.y + cfg_.goal_half;
  Poly inter = clip_to_rect(block, gx0, gy0, gx1, gy1);
  if (inter.size() < 3) return 0.0;
  const double block_area = 4.0 * cfg_.block_half * cfg_.block_half;
  return poly_area(inter) / block_area;
}

EnvState PushEnv::reset(uint64_t seed) const {
  Rng rng(seed);
  EnvState s;
  // block pose: resample until mostly outside the goal
  for (int tries = 0; tries < 1000; ++tries) {
    s.block_pos = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
    s.block_rot = rng.uniform(0.0, 2.0 * M_PI);
    s.coverage = coverage(s);
    if (s.coverage <= 0.1) break;
  }
  // agent position: clear of the block
  const double r = cfg_.agent_radius;
  for (int tries = 0; tries < 1000; ++tries) {
    s.agent_pos = {rng.uniform(0.08, 0.92), rng.uniform(0.08, 0.92)};
    Vec2 local = rotate({s.agent_pos.x - s.block_pos.x,
                         s.agent_pos.y - s.block_pos.y},
                        -s.block_rot);
    Vec2 closest{clampd(local.x, -cfg_.block_half, cfg_.block_half),
                 clampd(local.y, -cfg_.block_half, cfg_.block_half)};
    const double dist = std::hypot(local.x - closest.x, local.y - closest.y);
    if (dist > r + 0.03) break;
  }
  return s;
}

EnvState PushEnv::step(const EnvState& prev,
                       const std::array<double, 2>& action) const {
  EnvState s = prev;
  const double r = cfg_.agent_radius;
  const std::array<double, 2> cmd{clampd(action[0], -1.0, 1.0),
                                  clampd(action[1], -1.0, 1.0)};

  // damped integrator
  s.agent_vel.x =
      (1.0 - cfg_.vel_blend) * s.agent_vel.x + cfg_.vel_blend * cmd[0] * cfg_.v_max;
  s.agent_vel.y =
      (1.0 - cfg_.vel_blend) * s.agent_vel.y + cfg_.vel_blend * cmd[1] * cfg_.v_max;
  s.agent_pos.x += s.agent_vel.x;
  s.agent_pos.y += s.agent_vel.y;

  // walls
  if (s.agent_pos.x < r) { s.agent_pos.x = r; s.agent_vel.x = 0.0; }
  if (s.agent_pos.x > 1 - r) { s.agent_pos.x = 1 - r; s.agent_vel.x = 0.0; }
  if (s.agent_pos.y < r) { s.agent_pos.y = r; s.agent_vel.y = 0.0; }
  if (s.agent_pos.y > 1 - r) { s.agent_pos.y = 1 - r; s.agent_vel.y = 0.0; }

  // quasi-static push: agent disc displaces the block by its penetration
  auto resolve = [&](bool move_block) {
    Vec2 local = rotate({s.agent_pos.x - s.block_pos.x,
                         s.agent_pos.y - s.block_pos.y},
                        -s.block_rot);
    Vec2 closest{clampd(local.x, -cfg_.block_half, cfg_.block_half),
                 clampd(local.y, -cfg_.block_half, cfg_.block_half)};
    Vec2 d{local.x - closest.x, local.y - closest.y};
    double dist = std::hypot(d.x, d.y);
    Vec2 n_local;
    if (dist > 1e-9) {
      n_local = {d.x / dist, d.y / dist};
    } else {
      // agent center inside the block: push along the dominant axis out
      n_local = std::fabs(local.x) > std::fabs(local.y)
                    ? Vec2{local.x >= 0 ? 1.0 : -1.0, 0.0}
                    : Vec2{0.0, local.y >= 0 ? 1.0 : -1.0};
      dist = 0.0;
    }
    if (dist >= r) return false;
    const double pen = r - dist;
    Vec2 n_world = rotate(n_local, s.block_rot);
    if (move_block) {
      s.block_pos.x -= n_world.x * pen;
      s.block_pos.y -= n_world.y * pen;
      const double bmin = cfg_.block_half * std::sqrt(2.0);
      s.block_pos.x = clampd(s.block_pos.x, bmin, 1.0 - bmin);
      s.block_pos.y = clampd(s.block_pos.y, bmin, 1.0 - bmin);
    } else {
      s.agent_pos.x += n_world.x * pen;
      s.agent_pos.y += n_world.y * pen;
    }
    return true;
  };
  if (resolve(/*move_block=*/true)) {
    // if the block hit a wall the agent may still interpenetrate
    resolve(/*move_block=*/false);
  }

  s.last_action = cmd;
  s.step_count = prev.step_count + 1;
  s.coverage = coverage(s);
  return s;
}

std::array<double, 2> PushEnv::scripted_expert(const EnvState& s) const {
  const double r = cfg_.agent_radius;
  std::array<double, 2> raw{0.0, 0.0};

  if (s.coverage < 0.92) {
    Vec2 to_goal{cfg_.goal_center.x - s.block_pos.x,
                 cfg_.goal_center.y - s.block_pos.y};
    const double goal_dist = norm(to_goal);
    Vec2 dir = normalized(to_goal);

    // support distance of the rotated square along -dir
    Vec2 dl = rotate(dir, -s.block_rot);
    const double support =
        cfg_.block_half * (std::fabs(dl.x) + std::fabs(dl.y));
    Vec2 push_point{s.block_pos.x - dir.x * (support + 0.85 * r),
                    s.block_pos.y - dir.y * (support + 0.85 * r)};

    Vec2 to_pp{push_point.x - s.agent_pos.x, push_point.y - s.agent_pos.y};
    const double pp_dist = norm(to_pp);
    Vec2 to_block{s.block_pos.x - s.agent_pos.x,
                  s.block_pos.y - s.agent_pos.y};
    const double block_dist = norm(to_block);
    const double avoid_radius =
        cfg_.block_half * std::sqrt(2.0) + r + 0.02;

    Vec2 desired;
    double speed;
    if (pp_dist > 0.02) {
      desired = normalized(to_pp);
      // detour around the block instead of plowing through it
      Vec2 bdir = normalized(to_block);
      const bool heading_in =
          desired.x * bdir.x + desired.y * bdir.y > 0.2;
      if (block_dist < avoid_radius + 0.02 && heading_in &&
          pp_dist > avoid_radius) {
        Vec2 tangent{-bdir.y, bdir.x};
        if (tangent.x * to_pp.x + tangent.y * to_pp.y < 0.0)
          tangent = {-tangent.x, -tangent.y};
        desired = tangent;
      }
      speed = clampd(pp_dist / (3.0 * cfg_.v_max), 0.25, 1.0);
    } else {
      desired = dir;
      speed = clampd(goal_dist / (4.0 * cfg_.v_max), 0.2, 0.8);
    }
    raw = {desired.x * speed, desired.y * speed};
  }

  // slew limit against the previous command
  std::array<double, 2> out{};
  for (int i = 0; i < 2; ++i) {
    const double delta =
        clampd(raw[i] - s.last_action[i], -cfg_.action_slew, cfg_.action_slew);
    out[i] = clampd(s.last_action[i] + delta, -1.0, 1.0);
  }
  return out;
}

// ---- rendering ----

namespace {

struct RenderShapes {
  Vec2 goal_min, goal_max;
  Poly block;
  Vec2 agent;
  double agent_r2;
  // patch, in patch-local coordinates
  const ScenePatch* patch = nullptr;
  double cosr = 1.0, sinr = 0.0;
};

void shade(const RenderShapes& sh, double wx, double wy, double rgb[3]) {
  rgb[0] = 0.92; rgb[1] = 0.92; rgb[2] = 0.90;  // table
  if (wx >= sh.goal_min.x && wx <= sh.goal_max.x && wy >= sh.goal_min.y &&
      wy <= sh.goal_max.y) {
    rgb[0] = 0.55; rgb[1] = 0.85; rgb[2] = 0.55;  // goal
  }
  if (sh.patch) {
    const ScenePatch& p = *sh.patch;
    const double dx = wx - p.position.x, dy = wy - p.position.y;
    const double lx = (sh.cosr * dx + sh.sinr * dy) / p.size + 0.5;
    const double ly = (-sh.sinr * dx + sh.cosr * dy) / p.size + 0.5;
    if (lx >= 0.0 && lx < 1.0 && ly >= 0.0 && ly < 1.0) {
      const int ph = p.image.shape()[1], pw = p.image.shape()[2];
      // bilinear sample; patch row 0 is the top of the patch
      const double u = lx * pw - 0.5;
      const double v = (1.0 - ly) * ph - 0.5;
      const int u0 = static_cast<int>(std::floor(u));
      const int v0 = static_cast<int>(std::floor(v));
      const double fu = u - u0, fv = v - v0;
      for (int c = 0; c < 3; ++c) {
        auto at = [&](int vv, int uu) {
          vv = std::clamp(vv, 0, ph - 1);
          uu = std::clamp(uu, 0, pw - 1);
          return p.image.data()[(c * ph + vv) * pw + uu];
        };
        rgb[c] = (1 - fv) * ((1 - fu) * at(v0, u0) + fu * at(v0, u0 + 1)) +
                 fv * ((1 - fu) * at(v0 + 1, u0) + fu * at(v0 + 1, u0 + 1));
      }
    }
  }
  // block: point-in-convex-polygon
  bool in_block = true;
  for (size_t i = 0; i < 4 && in_block; ++i) {
    const Vec2& a = sh.block[i];
    const Vec2& b = sh.block[(i + 1) % 4];
    if ((b.x - a.x) * (wy - a.y) - (b.y - a.y) * (wx - a.x) < 0.0)
      in_block = false;
  }
  if (in_block) {
    rgb[0] = 0.40; rgb[1] = 0.40; rgb[2] = 0.42;
  }
  const double adx = wx - sh.agent.x, ady = wy - sh.agent.y;
  if (adx * adx + ady * ady <= sh.agent_r2) {
    rgb[0] = 0.20; rgb[1] = 0.35; rgb[2] = 0.85;
  }
}

}  // namespace

Tensor PushEnv::render(const EnvState& s, const ScenePatch* patch) const {
  const int n = cfg_.image_size;
  RenderShapes sh;
  sh.goal_min = {cfg_.goal_center.x - cfg_.goal_half,
                 cfg_.goal_center.y - cfg_.goal_half};
  sh.goal_max = {cfg_.goal_center.x + cfg_.goal_half,
                 cfg_.goal_center.y + cfg_.goal_half};
  sh.block = block_polygon(s.block_pos, s.block_rot, cfg_.block_half);
  sh.agent = s.agent_pos;
  sh.agent_r2 = cfg_.agent_radius * cfg_.agent_radius;
  if (patch) {
    sh.patch = patch;
    sh.cosr = std::cos(patch->rotation);
    sh.sinr = std::sin(patch->rotation);
  }

  Tensor img = Tensor::zeros({3, n, n});
  double* out = img.data();
  const double px = 1.0 / n;
  for (int row = 0; row < n; ++row) {
    for (int col = 0; col < n; ++col) {
      double acc[3] = {0, 0, 0};
      // 2x2 supersampling
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double wx = (col + 0.25 + 0.5 * sx) * px;
          const double wy = 1.0 - (row + 0.25 + 0.5 * sy) * px;
          double rgb[3];
          shade(sh, wx, wy, rgb);
          for (int c = 0; c < 3; ++c) acc[c] += rgb[c];
        }
      for (int c = 0; c < 3; ++c)
        out[(c * n + row) * n + col] = acc[c] * 0.25;
    }
  }
  return img;
}

void PushEnv::randomize_patch_pose(ScenePatch& patch, Rng& rng) const {
  const double m = patch.size * 0.5;
  for (int tries = 0; tries < 1000; ++tries) {
    patch.position = {rng.uniform(m, 1.0 - m), rng.uniform(m, 1.0 - m)};
    // exclude the goal interior
    if (std::fabs(patch.position.x - cfg_.goal_center.x) > cfg_.goal_half + m ||
        std::fabs(patch.position.y - cfg_.goal_center.y) > cfg_.goal_half + m)
      break;
  }
  patch.rotation = rng.uniform(-M_PI / 4.0, M_PI / 4.0);
}

// ---- dataset ----

int DemoDataset::total_steps() const {
  int n = 0;
  for (const auto& e : episodes) n += e.steps;
  return n;
}

Tensor DemoDataset::frame(int episode, int t) const {
  const EpisodeRecord& e = episodes.at(episode);
  const int sz = image_size;
  const int stride = 3 * sz * sz;
  Tensor out = Tensor::zeros({3, sz, sz});
  const uint8_t* src = e.frames.data() + static_cast<size_t>(t) * stride;
  for (int i = 0; i < stride; ++i) out.data()[i] = src[i] / 255.0;
  return out;
}

DemoDataset generate_dataset(int n_episodes, int max_steps, uint64_t seed,
                             const EnvConfig& cfg) {
  if (n_episodes <= 0) throw UsageError("generate_dataset: n_episodes must be > 0");
  PushEnv env(cfg);
  DemoDataset ds;
  ds.seed = seed;
  ds.image_size = cfg.image_size;
  int failures = 0;
  for (int ep = 0; ep < n_episodes; ++ep) {
    const uint64_t ep_seed = derive_seed(seed, "env", ep);
    EnvState s = env.reset(ep_seed);
    EpisodeRecord rec;
    rec.seed = ep_seed;
    const int stride = 3 * cfg.image_size * cfg.image_size;
    for (int t = 0; t < max_steps; ++t) {
      Tensor frame = env.render(s);
      rec.frames.resize(rec.frames.size() + stride);
      uint8_t* dst = rec.frames.data() + rec.frames.size() - stride;
      for (int i = 0; i < stride; ++i)
        dst[i] = static_cast<uint8_t>(
            std::lround(clampd(frame.data()[i], 0.0, 1.0) * 255.0));
      rec.agent_states.push_back(static_cast<float>(s.agent_pos.x));
      rec.agent_states.push_back(static_cast<float>(s.agent_pos.y));
      rec.agent_states.push_back(static_cast<float>(s.agent_vel.x));
      rec.agent_states.push_back(static_cast<float>(s.agent_vel.y));
      auto a = env.scripted_expert(s);
      rec.actions.push_back(static_cast<float>(a[0]));
      rec.actions.push_back(static_cast<float>(a[1]));
      s = env.step(s, a);
      ++rec.steps;
      rec.score = std::max(rec.score, s.coverage);
      if (s.coverage >= 0.95) break;
    }
    rec.success = rec.score >= cfg.success_coverage;
    if (rec.success) {
      ds.episodes.push_back(std::move(rec));
    } else {
      ++failures;
    }
  }
  if (failures * 5 > n_episodes)
    throw UsageError("generate_dataset: expert failure rate exceeds 20%");
  return ds;
}

std::pair<double, bool> score_episode(const std::vector<double>& step_scores) {
  if (step_scores.empty()) throw UsageError("score_episode: empty trace");
  double best = 0.0;
  for (double v : step_scores) best = std::max(best, v);
  return {best, best >= 0.9};
}

}  // namespace dpa
