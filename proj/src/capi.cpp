#include "dpattack.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>

#include "core/attacks.hpp"
#include "core/checkpoint.hpp"
#include "core/eval.hpp"
#include "core/policy.hpp"

using namespace dpa;

struct dpa_dataset {
  DemoDataset ds;
};

struct dpa_policy {
  DiffusionPolicy policy;
  Adam opt;
  int epochs_done = 0;
  bool has_opt = false;
};

struct dpa_artifact {
  // kind 0: global perturbation; kind 1: patch image
  int kind = 0;
  GlobalPerturbation pert;
  Tensor patch;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
dpa_status guarded(F&& f) {
  try {
    f();
    return DPA_OK;
  } catch (const DimensionError& e) {
    g_last_error = e.what();
    return DPA_ERR_DIMENSION;
  } catch (const IoError& e) {
    g_last_error = e.what();
    return DPA_ERR_IO;
  } catch (const UsageError& e) {
    g_last_error = e.what();
    return DPA_ERR_USAGE;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DPA_ERR_INTERNAL;
  }
}

void require(bool cond, const char* msg) {
  if (!cond) throw UsageError(msg);
}

AttackConfig to_config(const dpa_attack_params* p) {
  require(p != nullptr, "attack params must not be null");
  AttackConfig cfg;
  cfg.sigma = p->sigma;
  cfg.alpha = p->alpha;
  cfg.steps = p->steps;
  cfg.mode = p->targeted ? AttackMode::Targeted : AttackMode::Untargeted;
  cfg.scheduler.kind = p->e2e_ddpm ? SamplerKind::Ddpm : SamplerKind::Ddim;
  cfg.scheduler.ddim_steps = 8;
  cfg.seed = p->seed;
  cfg.validate();
  return cfg;
}

std::vector<Tensor> dataset_obs(const DemoDataset& ds, int episode, int t) {
  require(episode >= 0 && episode < static_cast<int>(ds.episodes.size()),
          "episode index out of range");
  require(t >= 0 && t < ds.episodes[episode].steps, "frame index out of range");
  return {ds.frame(episode, std::max(0, t - 1)), ds.frame(episode, t)};
}

void save_artifact(const dpa_artifact& a, const std::string& path) {
  Container c;
  c.add_u8("kind", {1}, {static_cast<uint8_t>(a.kind)});
  if (a.kind == 0) {
    c.add_f32("sigma", {1}, {static_cast<float>(a.pert.sigma)});
    for (size_t i = 0; i < a.pert.deltas.size(); ++i)
      c.add_tensor("delta." + std::to_string(i), a.pert.deltas[i]);
  } else {
    c.add_tensor("patch", a.patch);
  }
  c.save(path);
}

dpa_artifact load_artifact(const std::string& path) {
  Container c = Container::load(path);
  dpa_artifact a;
  a.kind = c.entry("kind").u8.at(0);
  if (a.kind == 0) {
    a.pert.sigma = c.tensor("sigma").item();
    for (int i = 0; c.has("delta." + std::to_string(i)); ++i)
      a.pert.deltas.push_back(c.tensor("delta." + std::to_string(i)));
    if (a.pert.deltas.empty()) throw IoError("artifact: no delta tensors");
    a.pert.check_budget();
  } else if (a.kind == 1) {
    a.patch = c.tensor("patch");
  } else {
    throw IoError("artifact: unknown kind");
  }
  return a;
}

TrainConfig to_train_config(int epochs, int batch, double lr, uint64_t seed,
                            dpa_train_log_cb log_cb, void* user) {
  require(epochs >= 0 && batch > 0 && lr > 0.0,
          "training requires epochs >= 0, batch > 0, lr > 0");
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch = batch;
  cfg.lr = lr;
  cfg.seed = seed;
  if (log_cb)
    cfg.log = [log_cb, user](int epoch, double loss) {
      log_cb(epoch, loss, user);
    };
  return cfg;
}

}  // namespace

extern "C" {

const char* dpa_version(void) { return "1.0.0"; }

const char* dpa_last_error(void) { return g_last_error.c_str(); }

dpa_status dpa_dataset_generate(int episodes, int max_steps, uint64_t seed,
                                dpa_dataset** out) {
  return guarded([&] {
    require(out != nullptr, "out must not be null");
    auto ds = std::make_unique<dpa_dataset>();
    ds->ds = generate_dataset(episodes, max_steps, seed);
    *out = ds.release();
  });
}

dpa_status dpa_dataset_save(const dpa_dataset* ds, const char* path) {
  return guarded([&] {
    require(ds && path, "dataset and path must not be null");
    save_dataset(ds->ds, path);
  });
}

dpa_status dpa_dataset_load(const char* path, dpa_dataset** out) {
  return guarded([&] {
    require(path && out, "path and out must not be null");
    auto ds = std::make_unique<dpa_dataset>();
    ds->ds = load_dataset(path);
    *out = ds.release();
  });
}

dpa_status dpa_dataset_info(const dpa_dataset* ds, int* episodes,
                            int* total_steps) {
  return guarded([&] {
    require(ds != nullptr, "dataset must not be null");
    if (episodes) *episodes = static_cast<int>(ds->ds.episodes.size());
    if (total_steps) *total_steps = ds->ds.total_steps();
  });
}

void dpa_dataset_free(dpa_dataset* ds) { delete ds; }

dpa_status dpa_policy_train(const dpa_dataset* ds, int epochs, int batch,
                            double lr, uint64_t seed, dpa_train_log_cb log_cb,
                            void* user, dpa_policy** out) {
  return guarded([&] {
    require(ds && out, "dataset and out must not be null");
    TrainConfig cfg = to_train_config(epochs, batch, lr, seed, log_cb, user);
    auto handle = std::make_unique<dpa_policy>();
    handle->policy.init(derive_seed(seed, "policy_init"));
    handle->policy.normalizer = ActionNormalizer::fit(ds->ds);
    handle->opt.lr = lr;
    train_policy_continue(handle->policy, handle->opt, ds->ds, cfg, 0);
    handle->epochs_done = epochs;
    handle->has_opt = true;
    *out = handle.release();
  });
}

dpa_status dpa_policy_train_continue(dpa_policy* policy, const dpa_dataset* ds,
                                     int epochs, int batch, double lr,
                                     uint64_t seed, dpa_train_log_cb log_cb,
                                     void* user) {
  return guarded([&] {
    require(policy && ds, "policy and dataset must not be null");
    require(policy->has_opt,
            "checkpoint has no optimizer state; cannot resume training");
    TrainConfig cfg = to_train_config(epochs, batch, lr, seed, log_cb, user);
    policy->opt.lr = lr;
    train_policy_continue(policy->policy, policy->opt, ds->ds, cfg,
                          policy->epochs_done);
    policy->epochs_done += epochs;
  });
}

dpa_status dpa_policy_save(const dpa_policy* policy, const char* path) {
  return guarded([&] {
    require(policy && path, "policy and path must not be null");
    save_policy(policy->policy, path, policy->has_opt ? &policy->opt : nullptr,
                policy->epochs_done);
  });
}

dpa_status dpa_policy_load(const char* path, dpa_policy** out) {
  return guarded([&] {
    require(path && out, "path and out must not be null");
    LoadedPolicy lp = load_policy(path);
    auto handle = std::make_unique<dpa_policy>();
    handle->policy = std::move(lp.policy);
    handle->opt = std::move(lp.opt);
    handle->epochs_done = lp.epochs_done;
    // a fresh (0-epoch) checkpoint has no optimizer state yet but can still
    // start training from scratch
    handle->has_opt = lp.has_opt || lp.epochs_done == 0;
    *out = handle.release();
  });
}

dpa_status dpa_policy_epochs_done(const dpa_policy* policy, int* epochs) {
  return guarded([&] {
    require(policy && epochs, "policy and epochs must not be null");
    *epochs = policy->epochs_done;
  });
}

void dpa_policy_free(dpa_policy* policy) { delete policy; }

void dpa_attack_params_init(dpa_attack_params* p) {
  if (!p) return;
  std::memset(p, 0, sizeof *p);
  p->sigma = 0.03;
  p->alpha = 0.001875;
  p->steps = 50;
  p->targeted = 1;
  p->e2e_ddpm = 0;
  p->epochs = 10;
  p->batch = 64;
  p->seed = 0;
}

dpa_status dpa_attack_online(const dpa_policy* policy, const dpa_dataset* ds,
                             int episode, int t, const dpa_attack_params* p,
                             dpa_artifact** out) {
  return guarded([&] {
    require(policy && ds && out, "policy, dataset and out must not be null");
    AttackConfig cfg = to_config(p);
    auto a = std::make_unique<dpa_artifact>();
    a->pert = attack_online_global(policy->policy,
                                   dataset_obs(ds->ds, episode, t), cfg);
    *out = a.release();
  });
}

dpa_status dpa_attack_e2e(const dpa_policy* policy, const dpa_dataset* ds,
                          int episode, int t, const dpa_attack_params* p,
                          dpa_artifact** out) {
  return guarded([&] {
    require(policy && ds && out, "policy, dataset and out must not be null");
    AttackConfig cfg = to_config(p);
    auto a = std::make_unique<dpa_artifact>();
    a->pert =
        end2end_attack(policy->policy, dataset_obs(ds->ds, episode, t), cfg);
    *out = a.release();
  });
}

dpa_status dpa_attack_offline(const dpa_policy* policy, const dpa_dataset* ds,
                              const dpa_attack_params* p, dpa_artifact** out) {
  return guarded([&] {
    require(policy && ds && out, "policy, dataset and out must not be null");
    AttackConfig cfg = to_config(p);
    auto a = std::make_unique<dpa_artifact>();
    a->pert =
        attack_offline_global(policy->policy, ds->ds, cfg, p->epochs, p->batch);
    *out = a.release();
  });
}

dpa_status dpa_attack_patch(const dpa_policy* policy, const dpa_dataset* ds,
                            const dpa_attack_params* p, int patch_px,
                            dpa_artifact** out) {
  return guarded([&] {
    require(policy && ds && out, "policy, dataset and out must not be null");
    AttackConfig cfg = to_config(p);
    auto a = std::make_unique<dpa_artifact>();
    a->kind = 1;
    a->patch = attack_patch(policy->policy, ds->ds, AffineTransformFamily{},
                            cfg, p->epochs, p->batch, patch_px);
    *out = a.release();
  });
}

dpa_status dpa_attack_random(double sigma, uint64_t seed, dpa_artifact** out) {
  return guarded([&] {
    require(out != nullptr, "out must not be null");
    auto a = std::make_unique<dpa_artifact>();
    a->pert = random_noise_baseline({3, 64, 64}, DiffusionPolicy::kObsHorizon,
                                    sigma, seed);
    *out = a.release();
  });
}

dpa_status dpa_artifact_save(const dpa_artifact* a, const char* path) {
  return guarded([&] {
    require(a && path, "artifact and path must not be null");
    save_artifact(*a, path);
  });
}

dpa_status dpa_artifact_load(const char* path, dpa_artifact** out) {
  return guarded([&] {
    require(path && out, "path and out must not be null");
    auto a = std::make_unique<dpa_artifact>(load_artifact(path));
    *out = a.release();
  });
}

dpa_status dpa_artifact_export_ppm(const dpa_artifact* a, const char* path) {
  return guarded([&] {
    require(a && path, "artifact and path must not be null");
    if (a->kind == 1) {
      write_ppm(path, a->patch);
    } else {
      // mid-gray plus delta, so signed noise is visible
      Tensor img = a->pert.delta_for_slot(0).detach();
      for (auto& v : img.vec())
        v = 0.5 + v / (2.0 * std::max(1e-9, a->pert.sigma));
      write_ppm(path, img);
    }
  });
}

dpa_status dpa_artifact_kind(const dpa_artifact* a, int* kind) {
  return guarded([&] {
    require(a && kind, "artifact and kind must not be null");
    *kind = a->kind;
  });
}

void dpa_artifact_free(dpa_artifact* a) { delete a; }

void dpa_bench_params_init(dpa_bench_params* p) {
  if (!p) return;
  std::memset(p, 0, sizeof *p);
  p->n_episodes = 50;
  p->episode_len = 200;
  p->master_seed = 0;
}

dpa_status dpa_bench_run(const dpa_policy* policy, const char* conditions,
                         const dpa_artifact* offline_artifact,
                         const dpa_artifact* patch_artifact,
                         const dpa_attack_params* attack,
                         const dpa_bench_params* bench, const char* json_path,
                         const char* payload_json_path, const char* csv_path,
                         const char* meta_json) {
  return guarded([&] {
    require(policy && conditions && bench,
            "policy, conditions and bench must not be null");
    AttackConfig base = to_config(attack);

    std::vector<ConditionSpec> specs;
    std::string list(conditions), token;
    std::vector<std::string> names;
    for (char c : list + ",") {
      if (c == ',') {
        if (!token.empty()) names.push_back(token);
        token.clear();
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        token += c;
      }
    }
    require(!names.empty(), "conditions list is empty");

    for (const auto& name : names) {
      ConditionSpec spec;
      spec.label = name;
      spec.attack = base;
      if (name == "clean") {
        spec.kind = ConditionSpec::Kind::Clean;
      } else if (name == "random") {
        spec.kind = ConditionSpec::Kind::RandomNoise;
      } else if (name == "online-targeted" || name == "online-untargeted") {
        spec.kind = ConditionSpec::Kind::OnlineGlobal;
        spec.attack.mode = name == "online-targeted" ? AttackMode::Targeted
                                                     : AttackMode::Untargeted;
      } else if (name == "offline") {
        spec.kind = ConditionSpec::Kind::OfflineGlobal;
        require(offline_artifact && offline_artifact->kind == 0,
                "offline condition needs a global-perturbation artifact");
        spec.artifact = offline_artifact->pert;
      } else if (name == "patch") {
        spec.kind = ConditionSpec::Kind::Patch;
        require(patch_artifact && patch_artifact->kind == 1,
                "patch condition needs a patch artifact");
        spec.patch_image = patch_artifact->patch;
      } else if (name == "e2e") {
        spec.kind = ConditionSpec::Kind::End2End;
      } else {
        throw UsageError("unknown condition: " + name);
      }
      specs.push_back(std::move(spec));
    }

    BenchmarkSettings settings;
    settings.n_episodes = bench->n_episodes;
    settings.episode_len = bench->episode_len;
    settings.master_seed = bench->master_seed;
    auto reports =
        run_benchmark(policy->policy, EnvConfig{}, specs, settings);

    const std::string meta = meta_json ? meta_json : "{}";
    if (json_path) write_reports_json(json_path, reports, true, meta);
    if (payload_json_path)
      write_reports_json(payload_json_path, reports, false, meta);
    if (csv_path) write_reports_csv(csv_path, reports);
  });
}

dpa_status dpa_bench_ablate(const dpa_policy* policy, const char* axis,
                            const dpa_bench_params* bench,
                            const char* json_path,
                            const char* payload_json_path,
                            const char* csv_path, const char* meta_json) {
  return guarded([&] {
    require(policy && axis && bench, "policy, axis and bench must not be null");
    SweepAxis sweep_axis;
    if (std::string(axis) == "sigma")
      sweep_axis = SweepAxis::Sigma;
    else if (std::string(axis) == "steps")
      sweep_axis = SweepAxis::Steps;
    else
      throw UsageError("axis must be 'sigma' or 'steps'");

    BenchmarkSettings settings;
    settings.n_episodes = bench->n_episodes;
    settings.episode_len = bench->episode_len;
    settings.master_seed = bench->master_seed;
    auto entries =
        ablation_sweep(policy->policy, EnvConfig{}, sweep_axis, settings);

    std::vector<RolloutReport> reports;
    for (auto& e : entries) reports.push_back(std::move(e.report));
    const std::string meta = meta_json ? meta_json : "{}";
    if (json_path) write_reports_json(json_path, reports, true, meta);
    if (payload_json_path)
      write_reports_json(payload_json_path, reports, false, meta);
    if (csv_path) write_reports_csv(csv_path, reports);
  });
}

dpa_status dpa_bench_timing(const dpa_policy* policy, const dpa_dataset* ds,
                            int steps, int reps, uint64_t seed,
                            const char* csv_path) {
  return guarded([&] {
    require(policy && ds && csv_path,
            "policy, dataset and csv_path must not be null");
    AttackConfig base;
    base.steps = steps;
    base.seed = seed;
    base.validate();
    auto rows =
        timing_comparison(policy->policy, dataset_obs(ds->ds, 0, 1), base,
                          reps);
    std::ofstream f(csv_path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(std::string("timing: cannot open ") + csv_path);
    f << "method,mode,median_ms,reps\r\n";
    char buf[64];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%.3f", r.median_ms);
      f << r.method << "," << r.mode << "," << buf << "," << r.reps << "\r\n";
    }
    if (!f) throw IoError("timing: write failed");
  });
}

dpa_status dpa_bench_encoder(const dpa_policy* policy, const dpa_dataset* ds,
                             const dpa_artifact* adv_artifact, int n_images,
                             double sigma, uint64_t seed,
                             const char* csv_path) {
  return guarded([&] {
    require(policy && ds && adv_artifact && csv_path,
            "policy, dataset, artifact and csv_path must not be null");
    require(adv_artifact->kind == 0,
            "encoder analysis needs a global-perturbation artifact");
    auto report = encoder_analysis(policy->policy, ds->ds, adv_artifact->pert,
                                   n_images, sigma, seed);
    std::ofstream f(csv_path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(std::string("encoder: cannot open ") + csv_path);
    f << "image_index,random_dist,adv_dist\r\n";
    char buf[96];
    for (int i = 0; i < report.n(); ++i) {
      std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g", i, report.random_dist[i],
                    report.adv_dist[i]);
      f << buf << "\r\n";
    }
    if (!f) throw IoError("encoder: write failed");
  });
}

}  // extern "C"
