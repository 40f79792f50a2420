#ifndef ICUBENCH_H
#define ICUBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes. Config, data and stage failures share the command-line
// exit codes.
typedef enum IcbStatus {
  ICB_STATUS_OK = 0,
  ICB_STATUS_NULL_POINTER = 1,
  ICB_STATUS_CONFIG = 2,
  ICB_STATUS_DATA = 3,
  ICB_STATUS_STAGE = 4,
  ICB_STATUS_INVALID_ARGUMENT = 5,
  ICB_STATUS_PANIC = 6,
} IcbStatus;

// Validated run configuration together with its source text.
typedef struct IcbRunConfig IcbRunConfig;

// Outcome of a completed run.
typedef struct IcbRunResult IcbRunResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static nul-terminated string.
const char *icb_version(void);

// Copies the calling thread's last error message into `buf`. Returns the
// message length; call with a null `buf` to size the buffer.
//
// # Safety
// `buf` is null or valid for `len` bytes.
size_t icb_last_error(char *buf, size_t len);

// Area under the ROC curve of `scores` against 0/1 `labels`; ties count
// one half.
//
// # Safety
// `scores` and `labels` are valid for `n` elements, `out` for one.
enum IcbStatus icb_auroc(const double *scores, const uint8_t *labels, size_t n, double *out);

// Average precision of `scores` against 0/1 `labels`.
//
// # Safety
// `scores` and `labels` are valid for `n` elements, `out` for one.
enum IcbStatus icb_auprc(const double *scores, const uint8_t *labels, size_t n, double *out);

// Predicted hospital mortality for a SAPS-II total score.
double icb_saps2_mortality(uint32_t score);

// Writes synthetic raw tables and `ground_truth.csv` to `out_dir`.
// `config_toml` is null for the defaults.
//
// # Safety
// `config_toml` is null or a valid string; `out_dir` is a valid string.
enum IcbStatus icb_synth_generate(const char *config_toml, const char *out_dir);

// Parses and validates a run config. On success `*out` owns a handle to
// release with [`icb_config_free`].
//
// # Safety
// `toml_text` is a valid string; `out` is valid for one write.
enum IcbStatus icb_config_new(const char *toml_text, struct IcbRunConfig **out);

// Replaces the evaluation seeds with `seed` (and reseeds synthetic data).
//
// # Safety
// `cfg` is a live handle from [`icb_config_new`].
enum IcbStatus icb_config_set_seed(struct IcbRunConfig *cfg, uint64_t seed);

// # Safety
// `cfg` is null or a live handle; it is invalid afterwards.
void icb_config_free(struct IcbRunConfig *cfg);

// Runs the stage chain into `out_dir` up to `stage` (null for the full
// run including the report bundle). On success `*out` owns a result handle
// to release with [`icb_result_free`].
//
// # Safety
// `cfg` is a live handle, `out_dir` a valid string, `stage` null or a
// valid string, `out` valid for one write.
enum IcbStatus icb_run(const struct IcbRunConfig *cfg,
                       const char *out_dir,
                       const char *stage,
                       struct IcbRunResult **out);

// Number of (task, model, seed) reports in a result.
//
// # Safety
// `res` is null or a live handle.
size_t icb_result_len(const struct IcbRunResult *res);

// Model name of report `index`, borrowed from the handle.
//
// # Safety
// `res` is null or a live handle.
const char *icb_result_model(const struct IcbRunResult *res, size_t index);

// Task name of report `index`, borrowed from the handle.
//
// # Safety
// `res` is null or a live handle.
const char *icb_result_task(const struct IcbRunResult *res, size_t index);

// Mean and population std over folds of `metric` ("auroc", "auprc" or
// "mse") in report `index`. Undefined values are NaN.
//
// # Safety
// `res` is a live handle, `metric` a valid string, `mean` and `std`
// valid for one write each.
enum IcbStatus icb_result_metric(const struct IcbRunResult *res,
                                 size_t index,
                                 const char *metric,
                                 double *mean,
                                 double *std);

// # Safety
// `res` is null or a live handle; it is invalid afterwards.
void icb_result_free(struct IcbRunResult *res);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICUBENCH_H */
