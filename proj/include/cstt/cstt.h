/* C interface to the clustered spatial-temporal transformer library.
 *
 * Objects are opaque handles created by *_new / *_load / *_generate calls and
 * released with the matching *_free. Every fallible call returns a
 * cstt_status; on failure cstt_last_error() describes the problem (per
 * thread, valid until the next failing call on that thread).
 *
 * Strings returned through `char**` are owned by the caller and released
 * with cstt_string_free. */
#ifndef CSTT_H
#define CSTT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CSTT_API __declspec(dllexport)
#else
#define CSTT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cstt_status {
  CSTT_OK = 0,
  CSTT_ERR_ARGUMENT = 1, /* null handle or bad argument */
  CSTT_ERR_CONFIG = 2,
  CSTT_ERR_IO = 3,
  CSTT_ERR_SHAPE = 4,
  CSTT_ERR_CONTRACT = 5,
  CSTT_ERR_NUMERIC = 6,
  CSTT_ERR_INCOMPATIBLE = 7, /* checkpoint and config disagree */
  CSTT_ERR_INTERNAL = 8
} cstt_status;

typedef enum cstt_split { CSTT_SPLIT_TRAIN = 0, CSTT_SPLIT_VAL = 1, CSTT_SPLIT_ALL = 2 } cstt_split;

typedef struct cstt_config cstt_config;
typedef struct cstt_dataset cstt_dataset;
typedef struct cstt_trainer cstt_trainer;

typedef struct cstt_metrics {
  double group_accuracy;
  double individual_accuracy;
  double loss;
  size_t clips;
} cstt_metrics;

/* Called once per finished epoch with a JSON line (no trailing newline). */
typedef void (*cstt_epoch_fn)(const char* json_line, void* user);
/* Called once per finished ablation arm. */
typedef void (*cstt_arm_fn)(const char* arm, double group_acc, double ind_acc, uint64_t seed,
                            void* user);

CSTT_API const char* cstt_version(void);
CSTT_API const char* cstt_last_error(void);
CSTT_API const char* cstt_status_name(cstt_status s);
CSTT_API void cstt_string_free(char* s);

/* ---- configuration ---- */
CSTT_API cstt_status cstt_config_new(cstt_config** out);
CSTT_API cstt_status cstt_config_clone(const cstt_config* cfg, cstt_config** out);
CSTT_API void cstt_config_free(cstt_config* cfg);
/* Applies a key = value file on top of the current values. */
CSTT_API cstt_status cstt_config_load(cstt_config* cfg, const char* path);
CSTT_API cstt_status cstt_config_parse(cstt_config* cfg, const char* text);
CSTT_API cstt_status cstt_config_set(cstt_config* cfg, const char* key, const char* value);
CSTT_API cstt_status cstt_config_get(const cstt_config* cfg, const char* key, char** out);
CSTT_API cstt_status cstt_config_validate(const cstt_config* cfg);
CSTT_API cstt_status cstt_config_to_json(const cstt_config* cfg, char** out);
CSTT_API cstt_status cstt_config_to_text(const cstt_config* cfg, char** out);
/* Newline separated list of every key. */
CSTT_API cstt_status cstt_config_keys(char** out);

/* ---- data ---- */
CSTT_API cstt_status cstt_dataset_generate(const cstt_config* cfg, cstt_dataset** out);
CSTT_API cstt_status cstt_dataset_read(const char* path, cstt_dataset** out);
/* Writes `path` and the JSON sidecar `path`.json. */
CSTT_API cstt_status cstt_dataset_write(const cstt_dataset* data, const char* path);
CSTT_API size_t cstt_dataset_size(const cstt_dataset* data);
/* Fails unless the dataset geometry matches the config. */
CSTT_API cstt_status cstt_dataset_check(const cstt_dataset* data, const cstt_config* cfg);
CSTT_API void cstt_dataset_free(cstt_dataset* data);

/* ---- training ---- */
CSTT_API cstt_status cstt_trainer_new(const cstt_config* cfg, cstt_trainer** out);
CSTT_API cstt_status cstt_trainer_load(const char* path, cstt_trainer** out);
/* Loads a checkpoint whose architecture must match `want`; run settings
 * (workers, batch size, epochs, ...) are taken from `want`. */
CSTT_API cstt_status cstt_trainer_load_for(const char* path, const cstt_config* want,
                                           cstt_trainer** out);
CSTT_API void cstt_trainer_free(cstt_trainer* t);
CSTT_API cstt_status cstt_trainer_save(const cstt_trainer* t, const char* path);
/* Writes the best validation checkpoint seen by cstt_trainer_fit. */
CSTT_API cstt_status cstt_trainer_save_best(const cstt_trainer* t, const char* path);
CSTT_API cstt_status cstt_trainer_fit(cstt_trainer* t, const cstt_dataset* data,
                                      cstt_epoch_fn on_epoch, void* user);
CSTT_API cstt_status cstt_trainer_evaluate(const cstt_trainer* t, const cstt_dataset* data,
                                           cstt_split split, cstt_metrics* out);
CSTT_API cstt_status cstt_trainer_config(const cstt_trainer* t, cstt_config** out);
CSTT_API size_t cstt_trainer_epoch(const cstt_trainer* t);
/* JSON cluster labels for the first `max_clips` clips of the split. */
CSTT_API cstt_status cstt_trainer_export_clusters(const cstt_trainer* t, const cstt_dataset* data,
                                                  cstt_split split, size_t max_clips, char** out);

/* ---- checks and studies ---- */
/* Finite-difference check of the full model on a shrunken copy of `cfg`.
 * `report` (optional) receives one "name max_rel_error" line per tensor. */
CSTT_API cstt_status cstt_gradcheck(const cstt_config* cfg, double tol, double* max_rel_error,
                                    int* passed, char** report);
/* Plans: "variants", "clusters", "attention", "blocks" or a comma list of
 * arms such as "variant=ours,clusters=2". `csv` receives the result table. */
CSTT_API cstt_status cstt_ablate(const cstt_config* base, const cstt_dataset* data,
                                 const char* plan, cstt_arm_fn on_arm, void* user, char** csv);

#ifdef __cplusplus
}
#endif

#endif
