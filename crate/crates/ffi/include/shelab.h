#ifndef SHELAB_H
#define SHELAB_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum ShelabStatus {
  SHELAB_STATUS_OK = 0,
  SHELAB_STATUS_NULL_POINTER = 1,
  SHELAB_STATUS_INVALID_UTF8 = 2,
  SHELAB_STATUS_PARSE = 3,
  SHELAB_STATUS_DOMAIN = 4,
  SHELAB_STATUS_PRECONDITION = 5,
  SHELAB_STATUS_UNSUPPORTED = 6,
  SHELAB_STATUS_GATE = 7,
  SHELAB_STATUS_BLOW_UP = 8,
  SHELAB_STATUS_CONFIG = 9,
  SHELAB_STATUS_INSUFFICIENT = 10,
  SHELAB_STATUS_IO = 11,
  SHELAB_STATUS_OUT_OF_RANGE = 12,
  SHELAB_STATUS_PANIC = 13,
} ShelabStatus;

/**
 * Outcome of the atom test.
 */
typedef enum ShelabAtom {
  SHELAB_ATOM_ZERO = 0,
  SHELAB_ATOM_POSITIVE = 1,
  SHELAB_ATOM_INCONCLUSIVE = 2,
} ShelabAtom;

/**
 * A parsed experiment configuration.
 */
typedef struct ShelabConfig ShelabConfig;

/**
 * Final-time fields of every replica of a simulation.
 */
typedef struct ShelabEnsemble ShelabEnsemble;

/**
 * A validated kernel description.
 */
typedef struct ShelabKernel ShelabKernel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *shelab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *shelab_version(void);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void shelab_string_free(char *s);

/**
 * Parses a kernel from JSON, e.g. `{"d": 1, "family": "exp_decay_f", "rate": 1.0}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ShelabStatus shelab_kernel_from_json(const char *json, struct ShelabKernel **out);

/**
 * # Safety
 * `k` must come from [`shelab_kernel_from_json`] or be null.
 */
void shelab_kernel_free(struct ShelabKernel *k);

/**
 * Dalang integral at `lambda`. Forms that are not available are set to NaN.
 *
 * # Safety
 * Pointers must be valid.
 */
enum ShelabStatus shelab_dalang_integral(const struct ShelabKernel *k,
                                         double lambda,
                                         bool *finite,
                                         double *spectral,
                                         double *potential);

/**
 * Atom of the spectral measure at the origin over the default scales.
 *
 * # Safety
 * Pointers must be valid.
 */
enum ShelabStatus shelab_atom_at_zero(const struct ShelabKernel *k,
                                      enum ShelabAtom *decision,
                                      double *atom);

/**
 * Full kernel report as JSON. Release the string with [`shelab_string_free`].
 *
 * # Safety
 * Pointers must be valid.
 */
enum ShelabStatus shelab_kernel_report_json(const struct ShelabKernel *k,
                                            bool sigma_constant,
                                            char **out);

/**
 * `ω_d(r)`.
 *
 * # Safety
 * `out` must be valid.
 */
enum ShelabStatus shelab_omega_d(size_t d, double r, double *out);

/**
 * Heat kernel `p_t(x)` at a point with `d` coordinates.
 *
 * # Safety
 * `x` must point to `d` doubles and `out` must be valid.
 */
enum ShelabStatus shelab_heat_kernel(double t, const double *x, size_t d, double *out);

/**
 * `d(α)` for the island dimension formula.
 *
 * # Safety
 * `out` must be valid.
 */
enum ShelabStatus shelab_d_alpha(double alpha, double t, double *out);

/**
 * Parses an experiment configuration from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ShelabStatus shelab_config_from_toml(const char *toml, struct ShelabConfig **out);

/**
 * # Safety
 * `c` must come from [`shelab_config_from_toml`] or be null.
 */
void shelab_config_free(struct ShelabConfig *c);

/**
 * Hex SHA-256 of the configuration. Release with [`shelab_string_free`].
 *
 * # Safety
 * Pointers must be valid.
 */
enum ShelabStatus shelab_config_hash(const struct ShelabConfig *c, char **out);

/**
 * Runs the ensemble and keeps every replica's field at the final time.
 * `threads = 0` means one worker.
 *
 * # Safety
 * Pointers must be valid.
 */
enum ShelabStatus shelab_simulate(const struct ShelabConfig *c,
                                  size_t threads,
                                  bool unsafe_skip_gate,
                                  struct ShelabEnsemble **out);

/**
 * # Safety
 * `e` must come from [`shelab_simulate`] or be null.
 */
void shelab_ensemble_free(struct ShelabEnsemble *e);

/**
 * Number of replicas and cells per field.
 *
 * # Safety
 * Pointers must be valid.
 */
enum ShelabStatus shelab_ensemble_shape(const struct ShelabEnsemble *e,
                                        size_t *replicas,
                                        size_t *cells);

/**
 * Copies one replica's field into `buf`, which holds `len` doubles.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum ShelabStatus shelab_ensemble_field(const struct ShelabEnsemble *e,
                                        size_t replica,
                                        double *buf,
                                        size_t len);

/**
 * Mean and cell-averaged pointwise variance at the final time.
 *
 * # Safety
 * Pointers must be valid.
 */
enum ShelabStatus shelab_ensemble_moments(const struct ShelabEnsemble *e,
                                          double *mean,
                                          double *variance);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHELAB_H */
