/* C interface of the gadoa direction-of-arrival estimation toolkit. */

#ifndef GADOA_H
#define GADOA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every C-ABI call.
 */
typedef enum GadoaStatus {
  GadoaStatus_Ok = 0,
  /**
   * A required pointer argument was null.
   */
  GadoaStatus_NullArgument = 1,
  /**
   * An argument value is out of range or inconsistent.
   */
  GadoaStatus_InvalidArgument = 2,
  /**
   * The microphone geometry is degenerate or malformed.
   */
  GadoaStatus_InvalidGeometry = 3,
  /**
   * File could not be read or written.
   */
  GadoaStatus_IoError = 4,
  /**
   * The model file is corrupt, truncated, or of an unsupported version.
   */
  GadoaStatus_BadModel = 5,
  /**
   * A numeric failure (non-finite values, no convergence).
   */
  GadoaStatus_NumericError = 6,
  /**
   * The signal carried no usable information (for example all-silent).
   */
  GadoaStatus_EstimationFailed = 7,
} GadoaStatus;

/**
 * Opaque microphone array geometry.
 */
typedef struct GadoaGeometry GadoaGeometry;

/**
 * Opaque trained classifier.
 */
typedef struct GadoaModel GadoaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gadoa_version(void);

/**
 * Static human-readable description of a status code.
 */
const char *gadoa_status_message(enum GadoaStatus status);

/**
 * Create a geometry from `mic_count` interleaved (x, y) coordinate pairs in
 * meters.
 *
 * # Safety
 * `xy_pairs` must point to `2 * mic_count` readable doubles; `out` must be a
 * valid pointer to a handle slot.
 */
enum GadoaStatus gadoa_geometry_new(const double *xy_pairs,
                                    uintptr_t mic_count,
                                    struct GadoaGeometry **out);

/**
 * The fixed five-microphone arc array the geometry-unaware classifiers are
 * trained on.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum GadoaStatus gadoa_geometry_arc(struct GadoaGeometry **out);

/**
 * # Safety
 * `geometry` must be a handle from this library, not yet freed; null is a
 * no-op.
 */
void gadoa_geometry_free(struct GadoaGeometry *geometry);

/**
 * # Safety
 * `geometry` and `out` must be valid pointers.
 */
enum GadoaStatus gadoa_geometry_mic_count(const struct GadoaGeometry *geometry, uintptr_t *out);

/**
 * Load a trained classifier from a model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid handle slot.
 */
enum GadoaStatus gadoa_model_load(const char *path, struct GadoaModel **out);

/**
 * # Safety
 * `model` must be a handle from this library, not yet freed; null is a
 * no-op.
 */
void gadoa_model_free(struct GadoaModel *model);

/**
 * Width of the feature vector the model consumes.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum GadoaStatus gadoa_model_input_size(const struct GadoaModel *model, uintptr_t *out);

/**
 * Estimate the source azimuth with SRP-PHAT over the 72-class grid.
 *
 * # Safety
 * `samples` must point to `channels * len` doubles in channel-major order;
 * `geometry` must be a live handle; `out_theta_deg` must be writable.
 */
enum GadoaStatus gadoa_estimate_srp_phat(const struct GadoaGeometry *geometry,
                                         const double *samples,
                                         uintptr_t channels,
                                         uintptr_t len,
                                         double fs,
                                         double *out_theta_deg);

/**
 * Estimate the source azimuth with single-source MUSIC.
 *
 * # Safety
 * As for [`gadoa_estimate_srp_phat`].
 */
enum GadoaStatus gadoa_estimate_music(const struct GadoaGeometry *geometry,
                                      const double *samples,
                                      uintptr_t channels,
                                      uintptr_t len,
                                      double fs,
                                      double *out_theta_deg);

/**
 * Estimate the source azimuth with a trained classifier. The feature
 * pipeline recorded in the model file decides how the signal is featurized;
 * geometry-aware models receive the supplied coordinates.
 *
 * # Safety
 * As for [`gadoa_estimate_srp_phat`], plus `model` must be a live handle.
 */
enum GadoaStatus gadoa_estimate_model(const struct GadoaModel *model,
                                      const struct GadoaGeometry *geometry,
                                      const double *samples,
                                      uintptr_t channels,
                                      uintptr_t len,
                                      double fs,
                                      double *out_theta_deg);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GADOA_H */
