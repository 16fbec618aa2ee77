#ifndef DGLC_H
#define DGLC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DglcStatus {
  DGLC_STATUS_OK = 0,
  DGLC_STATUS_NULL_POINTER = 1,
  DGLC_STATUS_INVALID_ARGUMENT = 2,
  DGLC_STATUS_IO = 3,
  DGLC_STATUS_PARSE = 4,
  DGLC_STATUS_TRAINING = 5,
  DGLC_STATUS_PANIC = 6,
} DglcStatus;

// A loaded graph dataset.
typedef struct DglcDataset DglcDataset;

// Outcome of a training or baseline run.
typedef struct DglcRunResult DglcRunResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into this library from the same thread.
const char *dglc_last_error(void);

// Loads the TUDataset files `<dir>/<name>/<name>_*.txt`.
//
// # Safety
// `dir` and `name` must be NUL-terminated strings; `out` must be writable.
enum DglcStatus dglc_dataset_load(const char *dir, const char *name, struct DglcDataset **out);

// # Safety
// `dataset` must come from [`dglc_dataset_load`] and not be used afterwards.
void dglc_dataset_free(struct DglcDataset *dataset);

// Number of graphs and of distinct graph classes.
//
// # Safety
// `dataset` must be a live handle; the out pointers must be writable.
enum DglcStatus dglc_dataset_info(const struct DglcDataset *dataset,
                                  size_t *graphs,
                                  size_t *classes);

// Trains a model. `config_json` may be null for defaults; otherwise it is a
// JSON object with any of the training options.
//
// # Safety
// `dataset` must be a live handle, `config_json` null or NUL-terminated and
// `out` writable.
enum DglcStatus dglc_train(const struct DglcDataset *dataset,
                           const char *config_json,
                           struct DglcRunResult **out);

// Runs a kernel baseline; `method` is one of `wl+sc`, `sp+sc`, `wl+km`,
// `sp+km`.
//
// # Safety
// `dataset` must be a live handle, `method` NUL-terminated and `out`
// writable.
enum DglcStatus dglc_baseline(const struct DglcDataset *dataset,
                              const char *method,
                              uint64_t seed,
                              struct DglcRunResult **out);

// # Safety
// `result` must be a live handle; the out pointers must be writable.
enum DglcStatus dglc_result_metrics(const struct DglcRunResult *result,
                                    double *acc,
                                    double *nmi,
                                    double *ari);

// Copies up to `capacity` cluster labels into `buf` and stores the total
// count in `len`. Pass a null `buf` to query the count only.
//
// # Safety
// `result` must be a live handle, `len` writable and `buf` null or valid for
// `capacity` elements.
enum DglcStatus dglc_result_labels(const struct DglcRunResult *result,
                                   size_t *buf,
                                   size_t capacity,
                                   size_t *len);

// Full result as JSON. The string is owned by `result`.
//
// # Safety
// `result` must be a live handle.
const char *dglc_result_json(const struct DglcRunResult *result);

// # Safety
// `result` must come from [`dglc_train`] or [`dglc_baseline`] and not be used
// afterwards.
void dglc_result_free(struct DglcRunResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DGLC_H */
