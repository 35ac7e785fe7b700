#ifndef PROXKIT_H
#define PROXKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum ProxStatus {
  PROX_STATUS_OK = 0,
  PROX_STATUS_NULL_POINTER = 1,
  PROX_STATUS_INVALID_UTF8 = 2,
  PROX_STATUS_INVALID_ARGUMENT = 3,
  PROX_STATUS_PARSE_ERROR = 4,
  PROX_STATUS_INVALID_DATA = 5,
  PROX_STATUS_COMPUTE_ERROR = 6,
  PROX_STATUS_PANIC = 99,
} ProxStatus;

// Parsed annotation file.
typedef struct ProxAnnotationSet ProxAnnotationSet;

// Per-track metrics of one coder/pass slice.
typedef struct ProxMetrics ProxMetrics;

// Metrics of one track, zone shares in [0, 1].
typedef struct ProxTrackMetrics {
  double intimate;
  double personal;
  double social;
  double offscreen;
  // Zone code: 'i', 'p' or 's'.
  char predominant;
  uint64_t zone_transitions;
  uint64_t raw_changes;
  uint64_t on_grid_frames;
  uint64_t total_frames;
  double observed_seconds;
} ProxTrackMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until
// the next proxkit call on the same thread.
const char *prox_last_error_message(void);

// Library version as a static string.
const char *prox_version(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void prox_string_free(char *s);

// Parses an annotation CSV (`csv`, `csv_len` bytes) with its sidecar
// text (NUL-terminated).
//
// # Safety
// Pointers must be valid for the given lengths; `out` must be writable.
enum ProxStatus prox_annotation_set_parse(const uint8_t *csv,
                                          size_t csv_len,
                                          const char *sidecar,
                                          struct ProxAnnotationSet **out);

// # Safety
// `set` must come from [`prox_annotation_set_parse`] and not be freed twice.
void prox_annotation_set_free(struct ProxAnnotationSet *set);

// # Safety
// `set` must be a live handle; `out` must be writable.
enum ProxStatus prox_annotation_set_record_count(const struct ProxAnnotationSet *set, size_t *out);

// Writes the number of validation errors to `out_errors`. Returns
// `PROX_STATUS_INVALID_DATA` with the first issue as message when there
// are any.
//
// # Safety
// `set` must be a live handle; `out_errors` must be writable.
enum ProxStatus prox_annotation_set_validate(const struct ProxAnnotationSet *set,
                                             size_t *out_errors);

// Canonical CSV text of the set. Free with [`prox_string_free`].
//
// # Safety
// `set` must be a live handle; `out` must be writable.
enum ProxStatus prox_annotation_set_write(const struct ProxAnnotationSet *set, char **out);

// Metrics for one `coder`/`pass` slice with the default pipeline
// settings (leading off-screen trimmed, window-3 smoothing).
//
// # Safety
// `set` must be a live handle, `coder` NUL-terminated, `out` writable.
enum ProxStatus prox_metrics_compute(const struct ProxAnnotationSet *set,
                                     const char *coder,
                                     uint32_t pass,
                                     struct ProxMetrics **out);

// # Safety
// `metrics` must come from [`prox_metrics_compute`] and not be freed twice.
void prox_metrics_free(struct ProxMetrics *metrics);

// Number of tracks with metrics; 0 for NULL.
//
// # Safety
// `metrics` must be a live handle or NULL.
size_t prox_metrics_len(const struct ProxMetrics *metrics);

// Track id of row `index`, owned by the handle; NULL when out of range.
//
// # Safety
// `metrics` must be a live handle or NULL.
const char *prox_metrics_track_id(const struct ProxMetrics *metrics, size_t index);

// # Safety
// `metrics` must be a live handle; `out` must be writable.
enum ProxStatus prox_metrics_get(const struct ProxMetrics *metrics,
                                 size_t index,
                                 struct ProxTrackMetrics *out);

// Metrics as CSV text. Free with [`prox_string_free`].
//
// # Safety
// `metrics` must be a live handle; `out` must be writable.
enum ProxStatus prox_metrics_write_csv(const struct ProxMetrics *metrics, char **out);

// Cohen's kappa and percent agreement of two aligned label sequences
// given as zone-code bytes (`i`, `p`, `s`, `x`).
//
// # Safety
// `a` and `b` must hold `len` bytes; out-pointers must be writable.
enum ProxStatus prox_kappa(const uint8_t *a,
                           const uint8_t *b,
                           size_t len,
                           double *out_kappa,
                           double *out_agreement);

// Pearson and Spearman correlation of two columns of `len` values.
//
// # Safety
// `x` and `y` must hold `len` values; out-pointers must be writable.
enum ProxStatus prox_correlate(const double *x,
                               const double *y,
                               size_t len,
                               double *out_pearson,
                               double *out_spearman);

// Z-scores of `len` values (sample standard deviation) into `out`,
// which must hold `len` values.
//
// # Safety
// `x` and `out` must hold `len` values.
enum ProxStatus prox_z_standardize(const double *x, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROXKIT_H */
