#ifndef ADALFL_H
#define ADALFL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum AdalflStatus {
  ADALFL_STATUS_OK = 0,
  ADALFL_STATUS_NULL_POINTER = 1,
  ADALFL_STATUS_INVALID_ARGUMENT = 2,
  ADALFL_STATUS_SHAPE = 3,
  ADALFL_STATUS_NON_FINITE = 4,
  ADALFL_STATUS_CONFIG = 5,
  ADALFL_STATUS_DIVERGENCE = 6,
  ADALFL_STATUS_IO = 7,
  ADALFL_STATUS_PARSE = 8,
  ADALFL_STATUS_PANIC = 9,
} AdalflStatus;

/**
 * Hidden and output activations of a loss network.
 */
typedef enum AdalflLossMode {
  /**
   * Smooth leaky ReLU hidden units, unbounded output.
   */
  ADALFL_LOSS_MODE_ADALFL = 0,
  /**
   * ReLU hidden units, softplus output.
   */
  ADALFL_LOSS_MODE_ML3_ABLATION = 1,
} AdalflLossMode;

/**
 * Opaque loss network handle.
 */
typedef struct AdalflLossNet AdalflLossNet;

/**
 * Outcome of one meta-gradient check against finite differences.
 */
typedef struct AdalflGradCheck {
  double cosine;
  double max_rel_err;
  double max_abs_err;
  size_t n_phi;
  size_t n_theta;
} AdalflGradCheck;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *adalfl_version(void);

/**
 * Message of the most recent failure on this thread, or NULL if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *adalfl_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void adalfl_string_free(char *s);

/**
 * Smooth leaky ReLU `(softplus_beta(x) * (1 - gamma) + gamma * x)`.
 * Returns NaN for `gamma` outside `[0, 1)` or non-positive `beta`.
 */
double adalfl_smooth_leaky_relu(double x, double gamma, double beta);

/**
 * Derivative of [`adalfl_smooth_leaky_relu`] in `x`; NaN for invalid parameters.
 */
double adalfl_smooth_leaky_relu_deriv(double x, double gamma, double beta);

/**
 * `ln(1 + e^{beta x}) / beta`; NaN for non-positive `beta`.
 */
double adalfl_softplus(double x, double beta);

/**
 * Creates a freshly initialized loss network.
 *
 * # Safety
 * `out` must be a valid pointer to writable handle storage.
 */
enum AdalflStatus adalfl_loss_net_new(uint64_t seed,
                                      size_t width,
                                      enum AdalflLossMode mode,
                                      struct AdalflLossNet **out);

/**
 * Parses a loss network from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum AdalflStatus adalfl_loss_net_from_json(const char *json, struct AdalflLossNet **out);

/**
 * Reads a loss network JSON file, such as a run's `loss_net.json`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AdalflStatus adalfl_loss_net_load(const char *path, struct AdalflLossNet **out);

/**
 * Serializes a loss network to JSON. Free the result with [`adalfl_string_free`].
 *
 * # Safety
 * `net` must be a live handle; `out` must be writable.
 */
enum AdalflStatus adalfl_loss_net_to_json(const struct AdalflLossNet *net, char **out);

/**
 * Releases a loss network handle. NULL is ignored.
 *
 * # Safety
 * `net` must come from this library and not have been freed.
 */
void adalfl_loss_net_free(struct AdalflLossNet *net);

/**
 * Number of scalar parameters in the network.
 *
 * # Safety
 * `net` must be a live handle; `out` must be writable.
 */
enum AdalflStatus adalfl_loss_net_param_count(const struct AdalflLossNet *net, size_t *out);

/**
 * Loss of row-major `(batch, channels)` targets and predictions, and
 * optionally its gradient with respect to the predictions.
 *
 * # Safety
 * `y` and `pred` must each hold `batch * channels` values; `out_loss` must be
 * writable; `out_grad` is either NULL or has room for `batch * channels` values.
 */
enum AdalflStatus adalfl_loss_net_eval(const struct AdalflLossNet *net,
                                       const double *y,
                                       const double *pred,
                                       size_t batch,
                                       size_t channels,
                                       double *out_loss,
                                       double *out_grad);

/**
 * Per-pair losses `l(y_fixed, f_i)` for each of the `n` prediction values.
 *
 * # Safety
 * `f` must hold `n` values and `out_loss` must have room for `n` values.
 */
enum AdalflStatus adalfl_loss_net_surface(const struct AdalflLossNet *net,
                                          double y_fixed,
                                          const double *f,
                                          size_t n,
                                          double *out_loss);

/**
 * Compares the unrolled meta-gradient with central finite differences on a
 * small seeded instance.
 *
 * # Safety
 * `out` must be writable.
 */
enum AdalflStatus adalfl_gradcheck(uint64_t seed, size_t s_inner, struct AdalflGradCheck *out);

/**
 * Runs every (mode, seed) cell of a TOML experiment config and writes the
 * outputs. `out_dir` overrides the config's output directory when not NULL;
 * `out_runs` receives the number of completed runs when not NULL.
 *
 * # Safety
 * `config_path` and a non-NULL `out_dir` must be NUL-terminated strings;
 * a non-NULL `out_runs` must be writable.
 */
enum AdalflStatus adalfl_run_experiment(const char *config_path,
                                        const char *out_dir,
                                        size_t *out_runs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADALFL_H */
