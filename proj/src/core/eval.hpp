#pragma once

#include "core/attacks.hpp"

namespace dpa {

struct EpisodeResult {
  uint64_t seed = 0;
  double score = 0.0;
  bool success = false;
  int steps = 0;
  double total_attack_ms = 0.0;
  int inferences = 0;
};

struct RolloutReport {
  std::string condition;
  std::vector<EpisodeResult> episodes;

  int n() const { return static_cast<int>(episodes.size()); }
  double success_rate() const;
  double mean_score() const;
  double mean_attack_ms() const;  // per policy inference
  double total_attack_ms() const;
};

struct ConditionSpec {
  enum class Kind {
    Clean,
    RandomNoise,
    OnlineGlobal,
    OfflineGlobal,
    Patch,
    End2End
  };

  std::string label;
  Kind kind = Kind::Clean;
  AttackConfig attack;          // online / end2end / random-noise sigma
  GlobalPerturbation artifact;  // pre-trained delta, required for OfflineGlobal
  Tensor patch_image;           // required for Patch
};

struct BenchmarkSettings {
  int n_episodes = 50;
  int episode_len = 200;
  uint64_t master_seed = 0;
  SamplerConfig sampler;
};

// Paired evaluation: per-episode seeds derive from the master seed only, so
// every condition sees identical initial states and policy-sampling noise.
std::vector<RolloutReport> run_benchmark(const DiffusionPolicy& policy,
                                         const EnvConfig& env_cfg,
                                         const std::vector<ConditionSpec>& conds,
                                         const BenchmarkSettings& settings);

// Untargeted online-attack parameter sweeps with a fixed step size per axis
// (sigma axis: alpha = 4e-4, N = 50; iteration axis: alpha = 0.001875,
// sigma = 0.03), so the swept knob is the binding constraint.
enum class SweepAxis { Sigma, Steps };
struct SweepEntry {
  double value = 0.0;
  RolloutReport report;
};
std::vector<SweepEntry> ablation_sweep(const DiffusionPolicy& policy,
                                       const EnvConfig& env_cfg, SweepAxis axis,
                                       const BenchmarkSettings& settings);

// Median wall time of a full attack run per method and mode.
struct TimingRow {
  std::string method;  // noise-prediction | end2end-ddpm | end2end-ddim8
  std::string mode;    // targeted | untargeted
  double median_ms = 0.0;
  int reps = 0;
};
std::vector<TimingRow> timing_comparison(const DiffusionPolicy& policy,
                                         const std::vector<Tensor>& frames,
                                         AttackConfig base, int reps = 20);

// Squared feature distances ||E(x) - E(clip(x + delta, 0, 1))||^2 for a random
// delta and the adversarial delta, on the same images.
struct EncoderAnalysisReport {
  std::vector<double> random_dist, adv_dist;

  int n() const { return static_cast<int>(random_dist.size()); }
  double mean_random() const;
  double mean_adv() const;
  std::array<double, 3> quartiles_random() const;
  std::array<double, 3> quartiles_adv() const;
};
EncoderAnalysisReport encoder_analysis(const DiffusionPolicy& policy,
                                       const DemoDataset& dataset,
                                       const GlobalPerturbation& adv,
                                       int n_images = 1000, double sigma = 0.03,
                                       uint64_t seed = 0);

// One-sided paired sign test: P(X >= wins) for X ~ Binomial(wins+losses, 1/2).
double sign_test_p(int wins, int losses);

// JSON report files; with include_timing=false all wall-time fields are
// omitted, making the file a pure function of the seeds.
void write_reports_json(const std::string& path,
                        const std::vector<RolloutReport>& reports,
                        bool include_timing,
                        const std::string& meta_json = "{}");
std::vector<RolloutReport> read_reports_json(const std::string& path);

// RFC-4180 CSV: condition,n,success_rate,mean_score,mean_attack_ms
void write_reports_csv(const std::string& path,
                       const std::vector<RolloutReport>& reports);

}  // namespace dpa
