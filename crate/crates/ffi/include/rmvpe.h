#ifndef RMVPE_H
#define RMVPE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum RmvpeStatus {
  RMVPE_STATUS_OK = 0,
  RMVPE_STATUS_NULL_POINTER = 1,
  RMVPE_STATUS_INVALID_ARGUMENT = 2,
  RMVPE_STATUS_IO = 3,
  RMVPE_STATUS_FORMAT = 4,
  RMVPE_STATUS_CHECKPOINT = 5,
  RMVPE_STATUS_DOMAIN = 6,
  RMVPE_STATUS_SHAPE = 7,
  RMVPE_STATUS_NON_FINITE = 8,
  /**
   * A Rust panic was caught at the boundary.
   */
  RMVPE_STATUS_INTERNAL = 9,
} RmvpeStatus;

/**
 * A loaded model with its feature front end.
 */
typedef struct RmvpeModel RmvpeModel;

/**
 * An estimated pitch track: Hz per frame, `0` where unvoiced.
 */
typedef struct RmvpePitchTrack RmvpePitchTrack;

/**
 * Scores of an estimate against a reference.
 */
typedef struct RmvpeEvalResult {
  double rpa;
  double rca;
  double oa;
  size_t ref_voiced;
  size_t ref_unvoiced;
} RmvpeEvalResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *rmvpe_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rmvpe_version(void);

/**
 * Loads a checkpoint from a UTF-8 path into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum RmvpeStatus rmvpe_model_load(const char *path, struct RmvpeModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`rmvpe_model_load`] and not be used afterwards.
 */
void rmvpe_model_free(struct RmvpeModel *model);

/**
 * Frame hop of the model's output in seconds.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
double rmvpe_model_hop_seconds(const struct RmvpeModel *model);

/**
 * Estimates pitch for mono `samples` at `sample_rate` Hz. Audio at other
 * rates is resampled. Frames whose confidence is below `threshold` are
 * reported as unvoiced.
 *
 * # Safety
 * `model` must be a live handle, `samples` must point to `len` floats and
 * `out` must be writable.
 */
enum RmvpeStatus rmvpe_predict(const struct RmvpeModel *model,
                               const float *samples,
                               size_t len,
                               uint32_t sample_rate,
                               double threshold,
                               struct RmvpePitchTrack **out);

/**
 * Number of frames; 0 for null.
 *
 * # Safety
 * `track` must be null or a live track handle.
 */
size_t rmvpe_pitch_track_len(const struct RmvpePitchTrack *track);

/**
 * Seconds between frames; 0 for null.
 *
 * # Safety
 * `track` must be null or a live track handle.
 */
double rmvpe_pitch_track_hop_seconds(const struct RmvpePitchTrack *track);

/**
 * Borrowed pointer to `len` frequencies in Hz; valid until the track is
 * freed. Null for a null or empty track.
 *
 * # Safety
 * `track` must be null or a live track handle.
 */
const double *rmvpe_pitch_track_frequencies(const struct RmvpePitchTrack *track);

/**
 * Borrowed pointer to `len` peak salience values (pre-threshold voicing
 * confidence); valid until the track is freed.
 *
 * # Safety
 * `track` must be null or a live track handle.
 */
const double *rmvpe_pitch_track_confidence(const struct RmvpePitchTrack *track);

/**
 * Releases a track; null is ignored.
 *
 * # Safety
 * `track` must come from [`rmvpe_predict`] and not be used afterwards.
 */
void rmvpe_pitch_track_free(struct RmvpePitchTrack *track);

/**
 * `1200 log2(hz / 10)`; fails for non-positive or non-finite input.
 *
 * # Safety
 * `out` must be writable.
 */
enum RmvpeStatus rmvpe_hz_to_cents(double hz, double *out);

/**
 * `10 * 2^(cents / 1200)`.
 */
double rmvpe_cents_to_hz(double cents);

/**
 * Scores an estimated track against a reference sampled on the same hop.
 * Frequencies are in Hz with `0` for unvoiced frames; unequal lengths are
 * truncated to the shorter.
 *
 * # Safety
 * `reference_hz` and `estimate_hz` must point to the given number of
 * doubles and `out` must be writable.
 */
enum RmvpeStatus rmvpe_evaluate(const double *reference_hz,
                                size_t reference_len,
                                const double *estimate_hz,
                                size_t estimate_len,
                                double hop_seconds,
                                struct RmvpeEvalResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RMVPE_H */
