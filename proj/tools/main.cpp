// dpattack command-line workbench: dataset generation -> policy training ->
// attack crafting -> benchmark reports, all through the shared-library C API.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpattack.h"

using json = nlohmann::json;

namespace {

// FNV-1a; used for named seed streams and config hashing at the CLI boundary.
uint64_t fnv1a(uint64_t seed, const std::string& name) {
  uint64_t h = 14695981039346656037ull;
  for (int i = 0; i < 8; ++i) {
    h ^= (seed >> (8 * i)) & 0xFF;
    h *= 1099511628211ull;
  }
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

[[noreturn]] void fail(const std::string& msg) {
  std::fprintf(stderr, "error: %s\n", msg.c_str());
  std::exit(1);
}

void check(dpa_status st, const std::string& what) {
  if (st != DPA_OK) fail(what + ": " + dpa_last_error());
}

// Applies config-file values to options the user did not pass on the command
// line, and rejects unknown keys.
void apply_config(CLI::App* cmd, const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    fail(std::string("config parse error: ") + e.what());
  }
  if (!doc.is_object()) fail("config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (!opt) fail("unknown config key: " + key);
    if (opt->count() > 0) continue;  // command line wins
    const std::string text =
        value.is_string() ? value.get<std::string>() : value.dump();
    try {
      opt->add_result(text);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      fail("config key " + key + ": " + e.what());
    }
  }
}

json resolved_config(const CLI::App* cmd) {
  json cfg = json::object();
  for (const CLI::Option* opt : cmd->get_options()) {
    const std::string name = opt->get_name();
    if (name.rfind("--", 0) != 0 || name == "--help" || name == "--config")
      continue;
    if (opt->count() == 0 && opt->get_default_str().empty() &&
        opt->get_expected_min() == 0)
      cfg[name.substr(2)] = opt->count() > 0;
    else if (opt->count() > 0)
      cfg[name.substr(2)] = opt->results().size() == 1
                                ? json(opt->results()[0])
                                : json(opt->results());
    else
      cfg[name.substr(2)] = opt->get_default_str();
  }
  return cfg;
}

// Every command writes a sidecar describing the resolved configuration and
// its hash next to its primary output.
void write_run_sidecar(const std::string& out_path, const CLI::App* cmd,
                       uint64_t seed) {
  json cfg = resolved_config(cmd);
  const std::string dump = cfg.dump();
  json doc;
  doc["command"] = cmd->get_name();
  doc["config"] = cfg;
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016" PRIx64, fnv1a(0, dump));
  doc["config_hash"] = hash;
  doc["seed"] = seed;
  std::ofstream f(out_path + ".run.json", std::ios::trunc);
  if (!f) fail("cannot write " + out_path + ".run.json");
  f << doc.dump(2) << "\n";
}

std::string meta_for(const CLI::App* cmd, uint64_t seed) {
  json cfg = resolved_config(cmd);
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016" PRIx64, fnv1a(0, cfg.dump()));
  json meta;
  meta["command"] = cmd->get_name();
  meta["config_hash"] = hash;
  meta["seed"] = seed;
  meta["config"] = cfg;
  return meta.dump();
}

struct Handles {
  dpa_dataset* ds = nullptr;
  dpa_policy* policy = nullptr;
  dpa_artifact* offline = nullptr;
  dpa_artifact* patch = nullptr;
  ~Handles() {
    dpa_dataset_free(ds);
    dpa_policy_free(policy);
    dpa_artifact_free(offline);
    dpa_artifact_free(patch);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffusion-policy attack workbench"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads,
                 "worker cap (the pipeline is sequential; must be >= 1)");

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate expert demonstrations");
  std::string gen_config, gen_out = "dataset.dpab";
  int gen_episodes = 150, gen_max_steps = 200;
  uint64_t gen_seed = 0;
  gen->add_option("--config", gen_config, "JSON config file");
  gen->add_option("--episodes", gen_episodes, "episodes to attempt")
      ->default_str("150");
  gen->add_option("--max-steps", gen_max_steps, "per-episode step cap")
      ->default_str("200");
  gen->add_option("--seed", gen_seed, "master seed")->default_str("0");
  gen->add_option("--out", gen_out, "output dataset file")
      ->default_str("dataset.dpab");

  // ---- train ----
  auto* train = app.add_subcommand("train", "train the diffusion policy");
  std::string train_config, train_data, train_out = "policy.dpab",
                            train_resume;
  int train_epochs = 40, train_batch = 64;
  double train_lr = 1e-3;
  uint64_t train_seed = 0;
  train->add_option("--config", train_config, "JSON config file");
  train->add_option("--data", train_data, "dataset file")->required();
  train->add_option("--epochs", train_epochs, "training epochs")
      ->default_str("40");
  train->add_option("--batch", train_batch, "minibatch size")
      ->default_str("64");
  train->add_option("--lr", train_lr, "Adam learning rate")
      ->default_str("0.001");
  train->add_option("--seed", train_seed, "master seed")->default_str("0");
  train->add_option("--resume", train_resume,
                    "checkpoint to continue training from");
  train->add_option("--out", train_out, "output checkpoint")
      ->default_str("policy.dpab");

  // ---- attack ----
  auto* attack = app.add_subcommand("attack", "craft an attack artifact");
  attack->require_subcommand(1);
  std::string atk_config, atk_ckpt, atk_data, atk_out = "artifact.dpab",
                          atk_ppm;
  double atk_sigma = 0.03, atk_alpha = -1.0;
  int atk_steps = 50, atk_epochs = 10, atk_batch = 64, atk_patch_px = 13;
  int atk_episode = 0, atk_frame = 1;
  bool atk_untargeted = false, atk_ddpm = false;
  uint64_t atk_seed = 0;
  std::vector<CLI::App*> atk_subs;
  for (const char* name : {"online", "offline", "patch", "e2e", "random"})
    atk_subs.push_back(attack->add_subcommand(name));
  for (auto* sub : atk_subs) {
    sub->add_option("--config", atk_config, "JSON config file");
    sub->add_option("--ckpt", atk_ckpt, "policy checkpoint");
    sub->add_option("--obs-source", atk_data,
                    "dataset supplying observations / training frames");
    sub->add_option("--sigma", atk_sigma, "L-inf budget")->default_str("0.03");
    sub->add_option("--alpha", atk_alpha,
                    "PGD step size (default 0.001875 online, 0.0001 "
                    "offline/patch)");
    sub->add_option("--steps", atk_steps, "PGD iterations")->default_str("50");
    sub->add_option("--epochs", atk_epochs, "offline/patch epochs")
        ->default_str("10");
    sub->add_option("--batch", atk_batch, "offline/patch batch")
        ->default_str("64");
    sub->add_option("--patch-px", atk_patch_px, "patch side length")
        ->default_str("13");
    sub->add_option("--episode", atk_episode, "observation episode index")
        ->default_str("0");
    sub->add_option("--frame", atk_frame, "observation frame index")
        ->default_str("1");
    sub->add_flag("--untargeted", atk_untargeted,
                  "untargeted mode (default targeted, all-ones target)");
    sub->add_flag("--ddpm", atk_ddpm, "end-to-end: full DDPM chain");
    sub->add_option("--seed", atk_seed, "master seed")->default_str("0");
    sub->add_option("--out", atk_out, "artifact file")
        ->default_str("artifact.dpab");
    sub->add_option("--export-ppm", atk_ppm, "also export the artifact as PPM");
  }

  // ---- bench ----
  auto* bench = app.add_subcommand("bench", "run the evaluation benchmark");
  std::string b_config, b_ckpt, b_conditions = "clean", b_offline, b_patch,
                        b_report_dir = ".", b_ablate, b_data;
  int b_episodes = 50, b_episode_len = 200, b_timing_reps = 0,
      b_timing_steps = 5, b_n_images = 1000;
  double b_sigma = 0.03, b_alpha = 0.001875;
  int b_steps = 50;
  bool b_encoder = false;
  uint64_t b_seed = 0;
  bench->add_option("--config", b_config, "JSON config file");
  bench->add_option("--ckpt", b_ckpt, "policy checkpoint")->required();
  bench->add_option("--conditions", b_conditions,
                    "comma list: clean,random,online-targeted,"
                    "online-untargeted,offline,patch,e2e")
      ->default_str("clean");
  bench->add_option("--offline-artifact", b_offline, "offline delta artifact");
  bench->add_option("--patch-artifact", b_patch, "patch artifact");
  bench->add_option("--episodes", b_episodes, "episodes per condition")
      ->default_str("50");
  bench->add_option("--episode-len", b_episode_len, "max env steps")
      ->default_str("200");
  bench->add_option("--sigma", b_sigma, "online/e2e attack budget")
      ->default_str("0.03");
  bench->add_option("--alpha", b_alpha, "online/e2e attack step size")
      ->default_str("0.001875");
  bench->add_option("--steps", b_steps, "online/e2e PGD iterations")
      ->default_str("50");
  bench->add_option("--seed", b_seed, "master seed")->default_str("0");
  bench->add_option("--report-dir", b_report_dir, "output directory")
      ->default_str(".");
  bench->add_option("--ablate", b_ablate, "parameter sweep: sigma | steps");
  bench->add_option("--timing-reps", b_timing_reps,
                    "attack-timing repetitions (0 = skip)")
      ->default_str("0");
  bench->add_option("--timing-steps", b_timing_steps,
                    "PGD iterations per timed attack")
      ->default_str("5");
  bench->add_flag("--analyze-encoder", b_encoder,
                  "emit encoder feature-distance CSV");
  bench->add_option("--n-images", b_n_images, "encoder-analysis image count")
      ->default_str("1000");
  bench->add_option("--data", b_data,
                    "dataset (required for --timing-reps/--analyze-encoder)");

  CLI11_PARSE(app, argc, argv);
  if (threads < 1) fail("--threads must be >= 1");

  Handles h;

  if (gen->parsed()) {
    if (!gen_config.empty()) apply_config(gen, gen_config);
    const uint64_t env_seed = fnv1a(gen_seed, "env");
    check(dpa_dataset_generate(gen_episodes, gen_max_steps, env_seed, &h.ds),
          "gen-data");
    check(dpa_dataset_save(h.ds, gen_out.c_str()), "gen-data save");
    int eps = 0, steps = 0;
    dpa_dataset_info(h.ds, &eps, &steps);
    write_run_sidecar(gen_out, gen, gen_seed);
    std::printf("wrote %s: %d episodes, %d frames\n", gen_out.c_str(), eps,
                steps);
    return 0;
  }

  if (train->parsed()) {
    if (!train_config.empty()) apply_config(train, train_config);
    check(dpa_dataset_load(train_data.c_str(), &h.ds), "train data");
    const uint64_t seed = fnv1a(train_seed, "train");
    auto log_cb = [](int epoch, double loss, void*) {
      std::printf("epoch %d mean_loss %.6f\n", epoch, loss);
      std::fflush(stdout);
    };
    if (!train_resume.empty()) {
      check(dpa_policy_load(train_resume.c_str(), &h.policy), "train resume");
      check(dpa_policy_train_continue(h.policy, h.ds, train_epochs,
                                      train_batch, train_lr, seed, log_cb,
                                      nullptr),
            "train");
    } else {
      check(dpa_policy_train(h.ds, train_epochs, train_batch, train_lr, seed,
                             log_cb, nullptr, &h.policy),
            "train");
    }
    check(dpa_policy_save(h.policy, train_out.c_str()), "train save");
    int done = 0;
    dpa_policy_epochs_done(h.policy, &done);
    write_run_sidecar(train_out, train, train_seed);
    std::printf("wrote %s (%d epochs total)\n", train_out.c_str(), done);
    return 0;
  }

  if (attack->parsed()) {
    CLI::App* sub = attack->get_subcommands().front();
    const std::string kind = sub->get_name();
    if (!atk_config.empty()) apply_config(sub, atk_config);
    const uint64_t seed = fnv1a(atk_seed, "attack");

    dpa_attack_params p;
    dpa_attack_params_init(&p);
    p.sigma = atk_sigma;
    p.alpha = atk_alpha > 0.0
                  ? atk_alpha
                  : (kind == "online" || kind == "e2e" ? 0.001875 : 0.0001);
    p.steps = atk_steps;
    p.targeted = atk_untargeted ? 0 : 1;
    p.e2e_ddpm = atk_ddpm ? 1 : 0;
    p.epochs = atk_epochs;
    p.batch = atk_batch;
    p.seed = seed;

    dpa_artifact* artifact = nullptr;
    if (kind == "random") {
      check(dpa_attack_random(atk_sigma, seed, &artifact), "attack random");
    } else {
      if (atk_ckpt.empty()) fail(kind + " attack requires --ckpt");
      if (atk_data.empty()) {
        if (kind == "online" || kind == "e2e")
          fail(kind +
               " attack without --obs-source: per-inference attacks run "
               "inside `bench --conditions online-targeted|online-untargeted|"
               "e2e`; pass --obs-source <dataset> to attack a stored "
               "observation instead");
        fail(kind + " attack requires --obs-source (training dataset)");
      }
      check(dpa_policy_load(atk_ckpt.c_str(), &h.policy), "attack ckpt");
      check(dpa_dataset_load(atk_data.c_str(), &h.ds), "attack data");
      if (kind == "online")
        check(dpa_attack_online(h.policy, h.ds, atk_episode, atk_frame, &p,
                                &artifact),
              "attack online");
      else if (kind == "e2e")
        check(dpa_attack_e2e(h.policy, h.ds, atk_episode, atk_frame, &p,
                             &artifact),
              "attack e2e");
      else if (kind == "offline")
        check(dpa_attack_offline(h.policy, h.ds, &p, &artifact),
              "attack offline");
      else
        check(dpa_attack_patch(h.policy, h.ds, &p, atk_patch_px, &artifact),
              "attack patch");
    }
    check(dpa_artifact_save(artifact, atk_out.c_str()), "attack save");
    if (!atk_ppm.empty())
      check(dpa_artifact_export_ppm(artifact, atk_ppm.c_str()), "attack ppm");
    dpa_artifact_free(artifact);
    write_run_sidecar(atk_out, sub, atk_seed);
    std::printf("wrote %s\n", atk_out.c_str());
    return 0;
  }

  // bench
  if (!b_config.empty()) apply_config(bench, b_config);
  if (!b_ablate.empty() && bench->count("--conditions") > 0)
    fail("--ablate and --conditions are mutually exclusive");
  const bool has_inference_attack =
      b_conditions.find("online") != std::string::npos ||
      b_conditions.find("e2e") != std::string::npos;
  // --sigma also scales the random-noise and encoder-analysis baselines
  const bool sigma_used = has_inference_attack || b_encoder ||
                          b_conditions.find("random") != std::string::npos;
  if (b_ablate.empty()) {
    if (!sigma_used && bench->count("--sigma") > 0)
      fail("--sigma has no effect on the requested conditions");
    if (!has_inference_attack)
      for (const char* f : {"--alpha", "--steps"})
        if (bench->count(f) > 0)
          fail(std::string(f) +
               " has no effect without an online/e2e condition or --ablate");
  }
  if ((b_timing_reps > 0 || b_encoder) && b_data.empty())
    fail("--timing-reps and --analyze-encoder require --data");

  check(dpa_policy_load(b_ckpt.c_str(), &h.policy), "bench ckpt");
  if (!b_offline.empty())
    check(dpa_artifact_load(b_offline.c_str(), &h.offline),
          "bench offline artifact");
  if (!b_patch.empty())
    check(dpa_artifact_load(b_patch.c_str(), &h.patch),
          "bench patch artifact");
  if (!b_data.empty()) check(dpa_dataset_load(b_data.c_str(), &h.ds),
                             "bench data");

  dpa_attack_params ap;
  dpa_attack_params_init(&ap);
  ap.sigma = b_sigma;
  ap.alpha = b_alpha;
  ap.steps = b_steps;
  dpa_bench_params bp;
  dpa_bench_params_init(&bp);
  bp.n_episodes = b_episodes;
  bp.episode_len = b_episode_len;
  bp.master_seed = fnv1a(b_seed, "eval");

  const std::string meta = meta_for(bench, b_seed);
  const std::string dir = b_report_dir + "/";

  if (!b_ablate.empty()) {
    check(dpa_bench_ablate(h.policy, b_ablate.c_str(), &bp,
                           (dir + "ablate_" + b_ablate + ".json").c_str(),
                           (dir + "ablate_" + b_ablate + "_payload.json").c_str(),
                           (dir + "ablate_" + b_ablate + ".csv").c_str(),
                           meta.c_str()),
          "bench ablate");
    std::printf("wrote %sablate_%s.{json,csv}\n", dir.c_str(),
                b_ablate.c_str());
  } else {
    check(dpa_bench_run(h.policy, b_conditions.c_str(), h.offline, h.patch,
                        &ap, &bp, (dir + "report.json").c_str(),
                        (dir + "report_payload.json").c_str(),
                        (dir + "report.csv").c_str(), meta.c_str()),
          "bench");
    std::printf("wrote %sreport.{json,csv}\n", dir.c_str());
  }

  if (b_timing_reps > 0) {
    check(dpa_bench_timing(h.policy, h.ds, b_timing_steps, b_timing_reps,
                           bp.master_seed, (dir + "timing.csv").c_str()),
          "bench timing");
    std::printf("wrote %stiming.csv\n", dir.c_str());
  }
  if (b_encoder) {
    const dpa_artifact* adv = h.offline;
    if (!adv) fail("--analyze-encoder requires --offline-artifact");
    check(dpa_bench_encoder(h.policy, h.ds, adv, b_n_images, b_sigma,
                            bp.master_seed, (dir + "encoder.csv").c_str()),
          "bench encoder");
    std::printf("wrote %sencoder.csv\n", dir.c_str());
  }
  return 0;
}
