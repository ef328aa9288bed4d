#include "core/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace dpa {

namespace {

using json = nlohmann::json;
using clock_type = std::chrono::steady_clock;

double ms_since(clock_type::time_point t0) {
  return std::chrono::duration<double, std::milli>(clock_type::now() - t0)
      .count();
}

// Applying a perturbation must never move a pixel by more than sigma.
void assert_budget(const std::vector<Tensor>& clean,
                   const std::vector<Tensor>& attacked, double sigma) {
  for (size_t i = 0; i < clean.size(); ++i)
    for (int j = 0; j < clean[i].numel(); ++j) {
      const double v = attacked[i].data()[j];
      if (v < 0.0 || v > 1.0 ||
          std::fabs(v - clean[i].data()[j]) > sigma + 1e-9)
        throw UsageError("benchmark: attacked frame violates the budget");
    }
}

std::array<double, 3> quartiles(std::vector<double> v) {
  if (v.empty()) return {0.0, 0.0, 0.0};
  std::sort(v.begin(), v.end());
  auto q = [&](double f) {
    const double idx = f * (v.size() - 1);
    const size_t lo = static_cast<size_t>(idx);
    const size_t hi = std::min(v.size() - 1, lo + 1);
    const double frac = idx - lo;
    return v[lo] * (1.0 - frac) + v[hi] * frac;
  };
  return {q(0.25), q(0.5), q(0.75)};
}

}  // namespace

double RolloutReport::success_rate() const {
  if (episodes.empty()) return 0.0;
  int s = 0;
  for (const auto& e : episodes) s += e.success ? 1 : 0;
  return static_cast<double>(s) / episodes.size();
}

double RolloutReport::mean_score() const {
  if (episodes.empty()) return 0.0;
  double t = 0.0;
  for (const auto& e : episodes) t += e.score;
  return t / episodes.size();
}

double RolloutReport::total_attack_ms() const {
  double t = 0.0;
  for (const auto& e : episodes) t += e.total_attack_ms;
  return t;
}

double RolloutReport::mean_attack_ms() const {
  long n = 0;
  for (const auto& e : episodes) n += e.inferences;
  return n == 0 ? 0.0 : total_attack_ms() / n;
}

std::vector<RolloutReport> run_benchmark(const DiffusionPolicy& policy,
                                         const EnvConfig& env_cfg,
                                         const std::vector<ConditionSpec>& conds,
                                         const BenchmarkSettings& settings) {
  if (settings.n_episodes <= 0 || settings.episode_len <= 0)
    throw UsageError("benchmark: n_episodes and episode_len must be > 0");
  for (const auto& c : conds) {
    if (c.kind == ConditionSpec::Kind::OfflineGlobal && c.artifact.deltas.empty())
      throw UsageError("benchmark: offline condition needs a trained artifact");
    if (c.kind == ConditionSpec::Kind::Patch && !c.patch_image.defined())
      throw UsageError("benchmark: patch condition needs a trained patch");
  }

  PushEnv env(env_cfg);
  std::vector<RolloutReport> reports;

  for (const auto& cond : conds) {
    RolloutReport report;
    report.condition = cond.label;

    for (int i = 0; i < settings.n_episodes; ++i) {
      const uint64_t ep_seed =
          derive_seed(settings.master_seed, "episode", i);
      EnvState start = env.reset(ep_seed);
      Rng rollout_rng(derive_seed(settings.master_seed, "rollout", i));

      AttackHook hook;
      const AttackHook* hook_ptr = nullptr;
      ScenePatch patch;
      const ScenePatch* patch_ptr = nullptr;

      switch (cond.kind) {
        case ConditionSpec::Kind::Clean:
          break;
        case ConditionSpec::Kind::RandomNoise: {
          GlobalPerturbation pert = random_noise_baseline(
              {3, env_cfg.image_size, env_cfg.image_size},
              DiffusionPolicy::kObsHorizon, cond.attack.sigma,
              derive_seed(settings.master_seed, "random_noise", i));
          hook = [pert](const std::vector<Tensor>& frames, int) {
            const auto t0 = clock_type::now();
            auto attacked = apply_global(frames, pert);
            assert_budget(frames, attacked, pert.sigma);
            return AttackHookResult{std::move(attacked), ms_since(t0)};
          };
          hook_ptr = &hook;
          break;
        }
        case ConditionSpec::Kind::OnlineGlobal: {
          AttackConfig cfg = cond.attack;
          const uint64_t base =
              derive_seed(settings.master_seed, "online_attack", i);
          const DiffusionPolicy* pp = &policy;
          hook = [cfg, base, pp](const std::vector<Tensor>& frames,
                                 int step) mutable {
            const auto t0 = clock_type::now();
            cfg.seed = derive_seed(base, "step", step);
            GlobalPerturbation pert = attack_online_global(*pp, frames, cfg);
            auto attacked = apply_global(frames, pert);
            assert_budget(frames, attacked, pert.sigma);
            return AttackHookResult{std::move(attacked), ms_since(t0)};
          };
          hook_ptr = &hook;
          break;
        }
        case ConditionSpec::Kind::OfflineGlobal: {
          const GlobalPerturbation* pert = &cond.artifact;
          hook = [pert](const std::vector<Tensor>& frames, int) {
            const auto t0 = clock_type::now();
            auto attacked = apply_global(frames, *pert);
            assert_budget(frames, attacked, pert->sigma);
            return AttackHookResult{std::move(attacked), ms_since(t0)};
          };
          hook_ptr = &hook;
          break;
        }
        case ConditionSpec::Kind::Patch: {
          patch.image = cond.patch_image.detach();
          // match the on-screen footprint to the patch's native pixel size,
          // so the optimized texture is rendered at ~1:1 scale
          patch.size = static_cast<double>(patch.image.shape()[2]) /
                       env_cfg.image_size;
          Rng pose_rng(derive_seed(settings.master_seed, "patch_pose", i));
          env.randomize_patch_pose(patch, pose_rng);
          patch_ptr = &patch;
          break;
        }
        case ConditionSpec::Kind::End2End: {
          AttackConfig cfg = cond.attack;
          const uint64_t base =
              derive_seed(settings.master_seed, "e2e_attack", i);
          const DiffusionPolicy* pp = &policy;
          hook = [cfg, base, pp](const std::vector<Tensor>& frames,
                                 int step) mutable {
            const auto t0 = clock_type::now();
            cfg.seed = derive_seed(base, "step", step);
            GlobalPerturbation pert = end2end_attack(*pp, frames, cfg);
            auto attacked = apply_global(frames, pert);
            assert_budget(frames, attacked, pert.sigma);
            return AttackHookResult{std::move(attacked), ms_since(t0)};
          };
          hook_ptr = &hook;
          break;
        }
      }

      RolloutTrace trace =
          receding_horizon_execute(policy, env, start, settings.episode_len,
                                   rollout_rng, settings.sampler, hook_ptr,
                                   patch_ptr);
      EpisodeResult er;
      er.seed = ep_seed;
      er.score = trace.score;
      er.success = trace.success;
      er.steps = trace.steps;
      er.inferences = static_cast<int>(trace.attack_ms.size());
      for (double ms : trace.attack_ms) er.total_attack_ms += ms;
      report.episodes.push_back(er);
    }
    reports.push_back(std::move(report));
  }
  return reports;
}

std::vector<SweepEntry> ablation_sweep(const DiffusionPolicy& policy,
                                       const EnvConfig& env_cfg, SweepAxis axis,
                                       const BenchmarkSettings& settings) {
  std::vector<SweepEntry> out;
  const std::vector<double> sigmas{0.01, 0.03, 0.05};
  const std::vector<int> steps{10, 20, 50};

  auto run_one = [&](double sigma, int n, double alpha, double value) {
    ConditionSpec cond;
    cond.kind = ConditionSpec::Kind::OnlineGlobal;
    cond.attack.mode = AttackMode::Untargeted;
    cond.attack.sigma = sigma;
    cond.attack.steps = n;
    cond.attack.alpha = alpha;
    cond.label = (axis == SweepAxis::Sigma ? "sigma_" : "steps_") +
                 std::to_string(value);
    SweepEntry e;
    e.value = value;
    e.report = run_benchmark(policy, env_cfg, {cond}, settings)[0];
    out.push_back(std::move(e));
  };

  // Both axes use the untargeted objective: the targeted attack saturates
  // (success ~0) at every budget/iteration count in the grid, which hides the
  // trend the sweep is supposed to expose.
  if (axis == SweepAxis::Sigma) {
    // Step size fixed so total PGD movement (50 * 4e-4 = 0.02) sits inside
    // the grid: sigma = 0.01 is budget-limited, larger sigmas are
    // optimizer-limited, so success degrades and then saturates with budget.
    for (double s : sigmas) run_one(s, 50, 4e-4, s);
  } else {
    // Default step size; with alpha fixed, the iteration count governs the
    // optimizer's reach, so success degrades monotonically with N.
    for (int n : steps) run_one(0.03, n, 0.001875, n);
  }
  return out;
}

std::vector<TimingRow> timing_comparison(const DiffusionPolicy& policy,
                                         const std::vector<Tensor>& frames,
                                         AttackConfig base, int reps) {
  if (reps <= 0) throw UsageError("timing: reps must be > 0");
  std::vector<TimingRow> rows;

  struct Method {
    std::string name;
    bool end2end;
    SamplerKind kind;
    int ddim_steps;
  };
  const std::vector<Method> methods{
      {"noise-prediction", false, SamplerKind::Ddim, 8},
      {"end2end-ddpm", true, SamplerKind::Ddpm, 0},
      {"end2end-ddim8", true, SamplerKind::Ddim, 8},
  };

  for (const auto& m : methods)
    for (AttackMode mode : {AttackMode::Targeted, AttackMode::Untargeted}) {
      AttackConfig cfg = base;
      cfg.mode = mode;
      cfg.scheduler.kind = m.kind;
      cfg.scheduler.ddim_steps = m.ddim_steps;
      std::vector<double> times;
      for (int r = 0; r < reps; ++r) {
        cfg.seed = derive_seed(base.seed, "timing", r);
        const auto t0 = clock_type::now();
        if (m.end2end)
          end2end_attack(policy, frames, cfg);
        else
          attack_online_global(policy, frames, cfg);
        times.push_back(ms_since(t0));
      }
      std::sort(times.begin(), times.end());
      TimingRow row;
      row.method = m.name;
      row.mode = mode == AttackMode::Targeted ? "targeted" : "untargeted";
      row.median_ms = times[times.size() / 2];
      row.reps = reps;
      rows.push_back(std::move(row));
    }
  return rows;
}

double EncoderAnalysisReport::mean_random() const {
  double t = 0.0;
  for (double d : random_dist) t += d;
  return random_dist.empty() ? 0.0 : t / random_dist.size();
}

double EncoderAnalysisReport::mean_adv() const {
  double t = 0.0;
  for (double d : adv_dist) t += d;
  return adv_dist.empty() ? 0.0 : t / adv_dist.size();
}

std::array<double, 3> EncoderAnalysisReport::quartiles_random() const {
  return quartiles(random_dist);
}

std::array<double, 3> EncoderAnalysisReport::quartiles_adv() const {
  return quartiles(adv_dist);
}

EncoderAnalysisReport encoder_analysis(const DiffusionPolicy& policy,
                                       const DemoDataset& dataset,
                                       const GlobalPerturbation& adv,
                                       int n_images, double sigma,
                                       uint64_t seed) {
  if (n_images <= 0) throw UsageError("encoder analysis: n_images must be > 0");
  if (dataset.episodes.empty())
    throw UsageError("encoder analysis: empty dataset");
  NoGradGuard no_grad;
  EncoderAnalysisReport report;

  auto feature = [&](const Tensor& frame) {
    Observation obs;
    obs.frames = {frame, frame};
    obs.agent_state = Tensor::zeros({4});
    return policy.encode_observation(obs);
  };
  auto sqdist = [](const Tensor& a, const Tensor& b) {
    double t = 0.0;
    for (int i = 0; i < a.numel(); ++i) {
      const double d = a.data()[i] - b.data()[i];
      t += d * d;
    }
    return t;
  };

  int idx = 0;
  for (int i = 0; i < n_images; ++i) {
    const int ep = idx % static_cast<int>(dataset.episodes.size());
    const int t = (idx / static_cast<int>(dataset.episodes.size())) %
                  dataset.episodes[ep].steps;
    ++idx;
    Tensor x = dataset.frame(ep, t);
    Tensor f = feature(x);

    GlobalPerturbation rnd = random_noise_baseline(
        x.shape(), 1, sigma, derive_seed(seed, "enc_random", i));
    Tensor x_rnd = apply_global({x}, rnd)[0];
    report.random_dist.push_back(sqdist(f, feature(x_rnd)));

    Tensor x_adv = apply_global({x}, adv)[0];
    report.adv_dist.push_back(sqdist(f, feature(x_adv)));
  }
  return report;
}

double sign_test_p(int wins, int losses) {
  if (wins < 0 || losses < 0) throw UsageError("sign test: negative counts");
  const int n = wins + losses;
  if (n == 0) return 1.0;
  // P(X >= wins), X ~ Binomial(n, 1/2); exact summation in log space
  double p = 0.0;
  for (int k = wins; k <= n; ++k) {
    double log_c = 0.0;
    for (int j = 0; j < k; ++j)
      log_c += std::log(static_cast<double>(n - j)) -
               std::log(static_cast<double>(j + 1));
    p += std::exp(log_c - n * std::log(2.0));
  }
  return std::min(1.0, p);
}

namespace {

json report_to_json(const RolloutReport& r, bool include_timing) {
  json jr;
  jr["condition"] = r.condition;
  jr["episodes"] = json::array();
  for (const auto& e : r.episodes) {
    json je;
    je["seed"] = e.seed;
    je["score"] = e.score;
    je["success"] = e.success;
    je["steps"] = e.steps;
    if (include_timing) {
      je["total_attack_ms"] = e.total_attack_ms;
      je["inferences"] = e.inferences;
    }
    jr["episodes"].push_back(std::move(je));
  }
  json agg;
  agg["n"] = r.n();
  agg["success_rate"] = r.success_rate();
  agg["mean_score"] = r.mean_score();
  if (include_timing) agg["mean_attack_ms"] = r.mean_attack_ms();
  jr["aggregates"] = std::move(agg);
  return jr;
}

}  // namespace

void write_reports_json(const std::string& path,
                        const std::vector<RolloutReport>& reports,
                        bool include_timing, const std::string& meta_json) {
  json doc;
  try {
    doc["meta"] = json::parse(meta_json);
  } catch (const json::parse_error&) {
    throw UsageError("reports: meta is not valid JSON");
  }
  doc["reports"] = json::array();
  for (const auto& r : reports)
    doc["reports"].push_back(report_to_json(r, include_timing));

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("reports: cannot open " + path);
  f << doc.dump(2) << "\n";
  if (!f) throw IoError("reports: write failed for " + path);
}

std::vector<RolloutReport> read_reports_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("reports: cannot open " + path);
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("reports: parse error: ") + e.what());
  }
  std::vector<RolloutReport> out;
  for (const auto& jr : doc.at("reports")) {
    RolloutReport r;
    r.condition = jr.at("condition").get<std::string>();
    for (const auto& je : jr.at("episodes")) {
      EpisodeResult e;
      e.seed = je.at("seed").get<uint64_t>();
      e.score = je.at("score").get<double>();
      e.success = je.at("success").get<bool>();
      e.steps = je.at("steps").get<int>();
      if (je.contains("total_attack_ms"))
        e.total_attack_ms = je.at("total_attack_ms").get<double>();
      if (je.contains("inferences"))
        e.inferences = je.at("inferences").get<int>();
      r.episodes.push_back(e);
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_reports_csv(const std::string& path,
                       const std::vector<RolloutReport>& reports) {
  auto field = [](const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("reports: cannot open " + path);
  f << "condition,n,success_rate,mean_score,mean_attack_ms\r\n";
  char buf[64];
  for (const auto& r : reports) {
    f << field(r.condition) << "," << r.n() << ",";
    std::snprintf(buf, sizeof buf, "%.6f", r.success_rate());
    f << buf << ",";
    std::snprintf(buf, sizeof buf, "%.6f", r.mean_score());
    f << buf << ",";
    std::snprintf(buf, sizeof buf, "%.3f", r.mean_attack_ms());
    f << buf << "\r\n";
  }
  if (!f) throw IoError("reports: write failed for " + path);
}

}  // namespace dpa
