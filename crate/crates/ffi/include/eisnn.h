#ifndef EISNN_H
#define EISNN_H

/* Generated by cbindgen from eisnn-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum EisnnStatus {
  EISNN_STATUS_OK = 0,
  EISNN_STATUS_PARAMETER_ERROR = 1,
  EISNN_STATUS_SHAPE_ERROR = 2,
  EISNN_STATUS_NUMERIC_ERROR = 3,
  EISNN_STATUS_DATA_ERROR = 4,
  EISNN_STATUS_FORMAT_ERROR = 5,
  EISNN_STATUS_STATE_ERROR = 6,
  EISNN_STATUS_CONFIG_ERROR = 7,
  EISNN_STATUS_IO_ERROR = 8,
  EISNN_STATUS_NULL_POINTER = 100,
  EISNN_STATUS_INVALID_UTF8 = 101,
  EISNN_STATUS_PANIC = 102,
} EisnnStatus;

/**
 * A network: spec plus its current weight matrices.
 */
typedef struct EisnnNetwork EisnnNetwork;

/**
 * One encoded input case.
 */
typedef struct EisnnRaster EisnnRaster;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Crate version as a static NUL-terminated string.
 */
const char *eisnn_version(void);

/**
 * Copy the thread-local last error message into `buf` (truncated to
 * `len` bytes including the terminator). Returns the full length.
 *
 * # Safety
 * `buf` must point to at least `len` writable bytes, or be null.
 */
uintptr_t eisnn_last_error(char *buf, uintptr_t len);

/**
 * Create a network with default LIF parameters and seeded, sign-masked
 * weights (first `n_excitatory` hidden units excitatory).
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum EisnnStatus eisnn_network_new(uintptr_t n_input,
                                   uintptr_t n_hidden,
                                   uintptr_t n_output,
                                   uintptr_t n_excitatory,
                                   uintptr_t horizon_steps,
                                   double sigma_init,
                                   double sigma_out,
                                   uint64_t seed,
                                   struct EisnnNetwork **out);

/**
 * Release a network handle. Null is a no-op.
 *
 * # Safety
 * `net` must be a handle returned by this library, not yet freed.
 */
void eisnn_network_free(struct EisnnNetwork *net);

/**
 * Save both weight matrices as checkpoint files.
 *
 * # Safety
 * `net` must be a live handle; paths must be NUL-terminated strings.
 */
enum EisnnStatus eisnn_network_save(const struct EisnnNetwork *net,
                                    const char *w_in_path,
                                    const char *w_out_path);

/**
 * Replace a network's weights from checkpoint files.
 *
 * # Safety
 * `net` must be a live handle; paths must be NUL-terminated strings.
 */
enum EisnnStatus eisnn_network_load(struct EisnnNetwork *net,
                                    const char *w_in_path,
                                    const char *w_out_path);

/**
 * Latency-encode normalized pixel intensities into a spike raster.
 *
 * # Safety
 * `pixels` must point to `n_pixels` doubles; `out` must be valid.
 */
enum EisnnStatus eisnn_raster_latency_encode(const double *pixels,
                                             uintptr_t n_pixels,
                                             uintptr_t horizon_steps,
                                             double dt_ms,
                                             struct EisnnRaster **out);

/**
 * Bin (unit, time-in-seconds) events onto the simulation grid.
 *
 * # Safety
 * `units` and `times_s` must point to `n_events` elements each; `out`
 * must be valid.
 */
enum EisnnStatus eisnn_raster_from_events(const uint32_t *units,
                                          const double *times_s,
                                          uintptr_t n_events,
                                          uint32_t n_units,
                                          double duration_s,
                                          uintptr_t horizon_steps,
                                          double dt_ms,
                                          struct EisnnRaster **out);

/**
 * Release a raster handle. Null is a no-op.
 *
 * # Safety
 * `raster` must be a handle returned by this library, not yet freed.
 */
void eisnn_raster_free(struct EisnnRaster *raster);

/**
 * Total spikes in a raster.
 *
 * # Safety
 * `raster` and `out` must be valid pointers.
 */
enum EisnnStatus eisnn_raster_total_spikes(const struct EisnnRaster *raster, uintptr_t *out);

/**
 * Simulate one case and return the network's class decision.
 *
 * # Safety
 * All pointers must be valid; the raster must fit the network's input
 * size and horizon.
 */
enum EisnnStatus eisnn_classify(const struct EisnnNetwork *net,
                                const struct EisnnRaster *raster,
                                uintptr_t *out_class);

/**
 * Simulate one case and return the hidden layer's total spike count.
 *
 * # Safety
 * All pointers must be valid.
 */
enum EisnnStatus eisnn_hidden_spikes(const struct EisnnNetwork *net,
                                     const struct EisnnRaster *raster,
                                     uintptr_t *out_spikes);

/**
 * Van Rossum distance between two sorted spike-time arrays (ms).
 *
 * # Safety
 * `a` and `b` must point to `a_len`/`b_len` doubles; `out` must be valid.
 */
enum EisnnStatus eisnn_van_rossum(const double *a,
                                  uintptr_t a_len,
                                  const double *b,
                                  uintptr_t b_len,
                                  double tau_ms,
                                  double *out);

/**
 * Run one fully seeded trial from an experiment-config JSON document and
 * return the run manifest as a newly allocated JSON string (release with
 * `eisnn_string_free`). Dataset files are resolved exactly as the CLI
 * does (config `data_dir` or SNN_DATA_DIR).
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out_manifest_json`
 * must be valid.
 */
enum EisnnStatus eisnn_train_json(const char *config_json, char **out_manifest_json);

/**
 * Release a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must have been returned by `eisnn_train_json`, not yet freed.
 */
void eisnn_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EISNN_H */
