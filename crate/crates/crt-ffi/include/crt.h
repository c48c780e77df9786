#ifndef CRT_H
#define CRT_H

/* Generated by cbindgen from crt-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible FFI call.
typedef enum CrtStatus {
  CRT_STATUS_OK = 0,
  // A required pointer argument was null.
  CRT_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  CRT_STATUS_UTF8 = 2,
  // Sizes or values incompatible with the model.
  CRT_STATUS_INVALID_ARGUMENT = 3,
  // The input data was malformed.
  CRT_STATUS_DATA = 4,
  // The checkpoint file was unreadable or inconsistent.
  CRT_STATUS_CHECKPOINT = 5,
  // Filesystem failure.
  CRT_STATUS_IO = 6,
  // A bug: an internal panic was caught.
  CRT_STATUS_INTERNAL = 7,
} CrtStatus;

// A loaded model plus the checkpoint bookkeeping it was restored with.
typedef struct CrtModelHandle CrtModelHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; never freed.
const char *crt_version(void);

// Message for the most recent failure on this thread. Valid until the next
// failing call on the same thread; never null.
const char *crt_last_error(void);

// Loads a checkpoint from `path` into a new handle written to `out`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid pointer.
enum CrtStatus crt_model_load(const char *path, struct CrtModelHandle **out);

// Frees a handle; a null argument is a no-op.
//
// # Safety
// `model` must have come from [`crt_model_load`] and not be freed twice.
void crt_model_free(struct CrtModelHandle *model);

// Full model configuration as a JSON string owned by the caller
// (free with [`crt_string_free`]); null if `model` is null.
//
// # Safety
// `model` must be a live handle or null.
char *crt_model_config_json(const struct CrtModelHandle *model);

// Frees a string returned by this library; a null argument is a no-op.
//
// # Safety
// `s` must have been returned by this library and not be freed twice.
void crt_string_free(char *s);

// Representation width; 0 if `model` is null.
//
// # Safety
// `model` must be a live handle or null.
size_t crt_model_dim(const struct CrtModelHandle *model);

// Number of classifier outputs; 0 if `model` is null.
//
// # Safety
// `model` must be a live handle or null.
size_t crt_model_num_classes(const struct CrtModelHandle *model);

// Channels each input series must have; 0 if `model` is null.
//
// # Safety
// `model` must be a live handle or null.
size_t crt_model_channels(const struct CrtModelHandle *model);

// Patch length the model was built with; series lengths must be divisible
// by it in both time and half-spectrum views. 0 if `model` is null.
//
// # Safety
// `model` must be a live handle or null.
size_t crt_model_patch_len(const struct CrtModelHandle *model);

// Classifies one series laid out row-major as (channels, length); writes
// softmax scores into `scores`, whose capacity `scores_len` must equal the
// model's class count.
//
// # Safety
// `values` must hold `channels * length` doubles; `scores` must hold
// `scores_len` doubles; `model` must be a live handle.
enum CrtStatus crt_classify(const struct CrtModelHandle *model,
                            const double *values,
                            size_t channels,
                            size_t length,
                            double *scores,
                            size_t scores_len);

// Writes the pooled cross-domain representation of one series into `out`,
// whose capacity `out_len` must equal the model's representation width.
//
// # Safety
// `values` must hold `channels * length` doubles; `out` must hold `out_len`
// doubles; `model` must be a live handle.
enum CrtStatus crt_embed(const struct CrtModelHandle *model,
                         const double *values,
                         size_t channels,
                         size_t length,
                         double *out,
                         size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRT_H */
