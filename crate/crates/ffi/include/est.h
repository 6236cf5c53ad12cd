#ifndef EST_H
#define EST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Values accepted by the `split` argument of [`est_session_evaluate`].
typedef enum EstSplit {
  EST_SPLIT_VALID = 1,
  EST_SPLIT_TEST = 2,
} EstSplit;

// Result code of every call.
typedef enum EstStatus {
  EST_STATUS_OK = 0,
  EST_STATUS_NULL_POINTER = 1,
  EST_STATUS_INVALID_UTF8 = 2,
  EST_STATUS_PARSE = 3,
  EST_STATUS_VALIDATION = 4,
  EST_STATUS_CONFIG = 5,
  EST_STATUS_NUMERIC = 6,
  EST_STATUS_IO = 7,
  EST_STATUS_LOOKUP = 8,
  EST_STATUS_DESERIALIZE = 9,
  EST_STATUS_CONTRACT = 10,
  EST_STATUS_BUFFER_SIZE = 11,
  EST_STATUS_PANIC = 12,
} EstStatus;

// A loaded temporal knowledge graph.
typedef struct EstDataset EstDataset;

// A model, its entity memory and the run configuration.
typedef struct EstSession EstSession;

typedef struct EstDatasetCounts {
  size_t entities;
  size_t relations;
  size_t train;
  size_t valid;
  size_t test;
  size_t snapshots;
} EstDatasetCounts;

typedef struct EstTrainSummary {
  size_t epochs;
  size_t total_steps;
  double final_loss;
  // NaN when validation was disabled.
  double final_valid_mrr;
} EstTrainSummary;

typedef struct EstMetrics {
  double mrr;
  double hits1;
  double hits3;
  double hits10;
  size_t query_count;
} EstMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next call into the library on this thread.
const char *est_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *est_version(void);

// Builds the dataset described by a TOML run configuration (a dataset
// directory, a single file or a synthetic generator).
//
// # Safety
// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
enum EstStatus est_dataset_from_config(const char *config_toml, struct EstDataset **out);

// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a valid pointer.
enum EstStatus est_dataset_load_dir(const char *dir,
                                    uint32_t time_step,
                                    bool inverse,
                                    struct EstDataset **out);

// # Safety
// `dataset` must come from this library; `out` must be valid.
enum EstStatus est_dataset_counts(const struct EstDataset *dataset, struct EstDatasetCounts *out);

// # Safety
// `dataset` must come from this library (or be null) and not be used after.
void est_dataset_free(struct EstDataset *dataset);

// Creates an untrained session sized for `dataset`.
//
// # Safety
// Pointers must be valid; `config_toml` NUL-terminated.
enum EstStatus est_session_new(const char *config_toml,
                               const struct EstDataset *dataset,
                               struct EstSession **out);

// Trains the session on the dataset's training split for the configured
// number of epochs. `summary` may be null.
//
// # Safety
// Pointers must come from this library; `summary` may be null.
enum EstStatus est_session_train(struct EstSession *session,
                                 const struct EstDataset *dataset,
                                 struct EstTrainSummary *summary);

// Ranks a split given as an [`EstSplit`] value. The session's memory is
// left untouched.
//
// # Safety
// Pointers must come from this library; `out` must be valid.
enum EstStatus est_session_evaluate(const struct EstSession *session,
                                    const struct EstDataset *dataset,
                                    int32_t split,
                                    struct EstMetrics *out);

// Writes one score per entity for `(subject, relation, ?, time)` into
// `scores`, which must hold exactly the dataset's entity count.
//
// # Safety
// `scores` must point to `len` writable doubles.
enum EstStatus est_session_score(const struct EstSession *session,
                                 const struct EstDataset *dataset,
                                 size_t subject,
                                 size_t relation,
                                 uint32_t time,
                                 double *scores,
                                 size_t len);

// Writes `model.bin` and `memory.bin` into `dir`, creating it if needed.
//
// # Safety
// `session` must come from this library; `dir` must be NUL-terminated.
enum EstStatus est_session_save(const struct EstSession *session, const char *dir);

// Restores a session saved by [`est_session_save`].
//
// # Safety
// Strings must be NUL-terminated; `out` must be valid.
enum EstStatus est_session_load(const char *config_toml, const char *dir, struct EstSession **out);

// # Safety
// `session` must come from this library (or be null) and not be used after.
void est_session_free(struct EstSession *session);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EST_H */
