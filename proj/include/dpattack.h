/* dpattack: C API for the diffusion-policy attack workbench.
 *
 * All functions return dpa_status; on failure dpa_last_error() holds a
 * thread-local description of the most recent error. Out-parameters are only
 * written on DPA_OK. Handles are opaque and must be released with the
 * matching *_free function (free functions accept NULL).
 */
#ifndef DPATTACK_H
#define DPATTACK_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  DPA_OK = 0,
  DPA_ERR_USAGE = 1,     /* precondition or argument violation */
  DPA_ERR_DIMENSION = 2, /* tensor shape mismatch */
  DPA_ERR_IO = 3,        /* file missing, unwritable, or corrupt */
  DPA_ERR_INTERNAL = 4   /* unexpected failure */
} dpa_status;

typedef struct dpa_dataset dpa_dataset;
typedef struct dpa_policy dpa_policy;
typedef struct dpa_artifact dpa_artifact;

const char* dpa_version(void);
const char* dpa_last_error(void);

/* ---- dataset ---- */
dpa_status dpa_dataset_generate(int episodes, int max_steps, uint64_t seed,
                                dpa_dataset** out);
dpa_status dpa_dataset_save(const dpa_dataset* ds, const char* path);
dpa_status dpa_dataset_load(const char* path, dpa_dataset** out);
dpa_status dpa_dataset_info(const dpa_dataset* ds, int* episodes,
                            int* total_steps);
void dpa_dataset_free(dpa_dataset* ds);

/* ---- policy ---- */
/* log_cb may be NULL; it receives (epoch index, mean denoising loss). */
typedef void (*dpa_train_log_cb)(int epoch, double mean_loss, void* user);

dpa_status dpa_policy_train(const dpa_dataset* ds, int epochs, int batch,
                            double lr, uint64_t seed, dpa_train_log_cb log_cb,
                            void* user, dpa_policy** out);
/* Continues training a loaded checkpoint (optimizer state required). */
dpa_status dpa_policy_train_continue(dpa_policy* policy, const dpa_dataset* ds,
                                     int epochs, int batch, double lr,
                                     uint64_t seed, dpa_train_log_cb log_cb,
                                     void* user);
dpa_status dpa_policy_save(const dpa_policy* policy, const char* path);
dpa_status dpa_policy_load(const char* path, dpa_policy** out);
dpa_status dpa_policy_epochs_done(const dpa_policy* policy, int* epochs);
void dpa_policy_free(dpa_policy* policy);

/* ---- attacks ---- */
typedef struct {
  double sigma;    /* L-inf pixel budget (default 0.03) */
  double alpha;    /* PGD step size (default 0.001875 online, 0.0001 offline) */
  int steps;       /* PGD iterations for online/e2e (default 50) */
  int targeted;    /* 1 targeted (all-ones target), 0 untargeted */
  int e2e_ddpm;    /* end-to-end scheduler: 1 DDPM, 0 DDIM-8 */
  int epochs;      /* offline/patch training epochs (default 10) */
  int batch;       /* offline/patch minibatch size (default 64) */
  uint64_t seed;
} dpa_attack_params;

/* Fills defaults (targeted online attack). */
void dpa_attack_params_init(dpa_attack_params* p);

/* Single-observation attacks; the observation is dataset frame pair
 * (episode, t-1 .. t). */
dpa_status dpa_attack_online(const dpa_policy* policy, const dpa_dataset* ds,
                             int episode, int t, const dpa_attack_params* p,
                             dpa_artifact** out);
dpa_status dpa_attack_e2e(const dpa_policy* policy, const dpa_dataset* ds,
                          int episode, int t, const dpa_attack_params* p,
                          dpa_artifact** out);
/* Dataset-wide attacks. */
dpa_status dpa_attack_offline(const dpa_policy* policy, const dpa_dataset* ds,
                              const dpa_attack_params* p, dpa_artifact** out);
dpa_status dpa_attack_patch(const dpa_policy* policy, const dpa_dataset* ds,
                            const dpa_attack_params* p, int patch_px,
                            dpa_artifact** out);
dpa_status dpa_attack_random(double sigma, uint64_t seed, dpa_artifact** out);

dpa_status dpa_artifact_save(const dpa_artifact* a, const char* path);
dpa_status dpa_artifact_load(const char* path, dpa_artifact** out);
/* Patch artifacts export as binary PPM; global deltas export shifted to
 * mid-gray for inspection. */
dpa_status dpa_artifact_export_ppm(const dpa_artifact* a, const char* path);
/* kind: 0 = global perturbation, 1 = patch. */
dpa_status dpa_artifact_kind(const dpa_artifact* a, int* kind);
void dpa_artifact_free(dpa_artifact* a);

/* ---- evaluation ---- */
typedef struct {
  int n_episodes;   /* default 50 */
  int episode_len;  /* default 200 */
  uint64_t master_seed;
} dpa_bench_params;

void dpa_bench_params_init(dpa_bench_params* p);

/* conditions: comma-separated subset of
 * clean,random,online-targeted,online-untargeted,offline,patch,e2e.
 * offline/patch/e2e conditions require the matching artifact (else usage
 * error). Writes a full JSON report (with timing), a payload-only JSON
 * (timing omitted; byte-stable across reruns), and an aggregate CSV. Paths
 * may be NULL to skip that output. meta_json (nullable) is embedded in the
 * JSON reports. */
dpa_status dpa_bench_run(const dpa_policy* policy, const char* conditions,
                         const dpa_artifact* offline_artifact,
                         const dpa_artifact* patch_artifact,
                         const dpa_attack_params* attack,
                         const dpa_bench_params* bench, const char* json_path,
                         const char* payload_json_path, const char* csv_path,
                         const char* meta_json);

/* axis: "sigma" or "steps". Emits the same three report files. */
dpa_status dpa_bench_ablate(const dpa_policy* policy, const char* axis,
                            const dpa_bench_params* bench,
                            const char* json_path,
                            const char* payload_json_path,
                            const char* csv_path, const char* meta_json);

/* Median full-attack wall time for noise-prediction vs end-to-end, written
 * as CSV (method,mode,median_ms,reps). The observation comes from dataset
 * frame pair (episode 0, t=1). */
dpa_status dpa_bench_timing(const dpa_policy* policy, const dpa_dataset* ds,
                            int steps, int reps, uint64_t seed,
                            const char* csv_path);

/* Squared encoder feature distances under random vs adversarial deltas,
 * written as CSV (image_index,random_dist,adv_dist). */
dpa_status dpa_bench_encoder(const dpa_policy* policy, const dpa_dataset* ds,
                             const dpa_artifact* adv_artifact, int n_images,
                             double sigma, uint64_t seed, const char* csv_path);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* DPATTACK_H */
