#ifndef CURVECAST_H
#define CURVECAST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CcStatus {
  CC_STATUS_OK = 0,
  CC_STATUS_CONFIG_ERROR = 1,
  CC_STATUS_DATA_ERROR = 2,
  CC_STATUS_NUMERICAL_ERROR = 3,
  CC_STATUS_NULL_ARGUMENT = 4,
  CC_STATUS_PANIC = 5,
} CcStatus;

typedef enum CcStrategy {
  CC_STRATEGY_BASE = 0,
  CC_STRATEGY_RLSD_VOL = 1,
  CC_STRATEGY_ALEA = 2,
  CC_STRATEGY_AL_EP = 3,
} CcStrategy;

/**
 * A trained model loaded from a checkpoint file.
 */
typedef struct CcModel CcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *cc_last_error(void);

/**
 * Microprice of one Level-1 quote.
 *
 * # Safety
 * `out` must be valid for a write of one `double`.
 */
enum CcStatus cc_microprice(double bid_price,
                            double ask_price,
                            uint64_t bid_volume,
                            uint64_t ask_volume,
                            double *out);

/**
 * Target position for predicted change `mu` and uncertainty `sigma`, both
 * in bps. `(ref_mu, ref_sigma)` is the pair mapped to a unit position;
 * `clip <= 0` disables clipping.
 *
 * # Safety
 * `out` must be valid for a write of one `double`.
 */
enum CcStatus cc_size_position(double mu,
                               double sigma,
                               enum CcStrategy strategy,
                               double threshold,
                               double ref_mu,
                               double ref_sigma,
                               double clip,
                               double *out);

/**
 * Mean over sample standard deviation of `n` daily returns.
 *
 * # Safety
 * `returns` must point to `n` readable doubles and `out` must be valid for
 * one write.
 */
enum CcStatus cc_sharpe(const double *returns, size_t n, double *out);

/**
 * Loads a checkpoint written by the `train` stage.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for one write.
 * Release the handle with [`cc_model_free`].
 */
enum CcStatus cc_model_load(const char *path, struct CcModel **out);

/**
 * # Safety
 * `model` must come from [`cc_model_load`] and not be used afterwards.
 */
void cc_model_free(struct CcModel *model);

/**
 * Number of contracts `C` the model predicts.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t cc_model_contracts(const struct CcModel *model);

/**
 * Length of the flattened, normalized input window.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t cc_model_input_dim(const struct CcModel *model);

/**
 * Predictive mean and covariances for one normalized window, in
 * normalized units. Networks use `n_samples` dropout passes seeded by
 * `seed`; the Bayesian baseline ignores both. `mean` receives `C` values,
 * `cov_aleatoric` and `cov_total` receive `C*C` values in row-major order.
 *
 * # Safety
 * `window` must point to `window_len` doubles; each output must hold the
 * stated number of doubles.
 */
enum CcStatus cc_model_predict(const struct CcModel *model,
                               const double *window,
                               size_t window_len,
                               size_t n_samples,
                               uint64_t seed,
                               double *mean,
                               double *cov_aleatoric,
                               double *cov_total);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CURVECAST_H */
