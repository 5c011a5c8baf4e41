#ifndef CRASHMLE_H
#define CRASHMLE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum CmStatus {
  CM_STATUS_OK = 0,
  CM_STATUS_NULL_POINTER = 1,
  CM_STATUS_INVALID_UTF8 = 2,
  CM_STATUS_IO = 3,
  CM_STATUS_DATA = 4,
  CM_STATUS_SPEC = 5,
  CM_STATUS_DOMAIN = 6,
  CM_STATUS_NOT_CONVERGED = 7,
  CM_STATUS_CONFIG = 8,
  CM_STATUS_BUFFER_TOO_SMALL = 9,
  CM_STATUS_PANIC = 10,
  CM_STATUS_OTHER = 11,
} CmStatus;

// Outcome type of a table: severity labels or accident counts.
typedef enum CmMode {
  CM_MODE_SEVERITY = 0,
  CM_MODE_FREQUENCY = 1,
} CmMode;

// Mixing distribution for [`cm_sign_share`].
typedef enum CmMixing {
  CM_MIXING_NORMAL = 0,
  CM_MIXING_UNIFORM = 1,
} CmMixing;

typedef struct CmFit CmFit;

typedef struct CmSpec CmSpec;

typedef struct CmTable CmTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call on the same thread.
const char *cm_last_error(void);

// Load a CSV table. `outcome_column` names the severity label or count column.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum CmStatus cm_table_load(const char *path,
                            enum CmMode mode,
                            const char *outcome_column,
                            struct CmTable **out);

// Number of rows kept after dropping rows with missing values; 0 for null.
//
// # Safety
// `table` must be null or a live handle.
size_t cm_table_n_rows(const struct CmTable *table);

// # Safety
// `table` must be null or a handle not yet freed.
void cm_table_free(struct CmTable *table);

// Parse a model spec from INI text.
//
// # Safety
// `text` must be null or NUL-terminated; `out` must be writable.
enum CmStatus cm_spec_parse(const char *text, struct CmSpec **out);

// Load a model spec from an INI file.
//
// # Safety
// `path` must be null or NUL-terminated; `out` must be writable.
enum CmStatus cm_spec_load(const char *path, struct CmSpec **out);

// Number of estimable parameters; 0 for null.
//
// # Safety
// `spec` must be null or a live handle.
size_t cm_spec_n_params(const struct CmSpec *spec);

// # Safety
// `spec` must be null or a handle not yet freed.
void cm_spec_free(struct CmSpec *spec);

// Fit `spec` to `table`. `draws` is the number of simulation draws for mixed
// families (0 keeps the default). A fit that runs but does not converge is
// still returned through `out`, with status `NotConverged`.
//
// # Safety
// `table` and `spec` must be live handles; `out` must be writable.
enum CmStatus cm_fit(const struct CmTable *table,
                     const struct CmSpec *spec,
                     size_t draws,
                     uint64_t seed,
                     struct CmFit **out);

// Number of estimated parameters; 0 for null.
//
// # Safety
// `fit` must be null or a live handle.
size_t cm_fit_n_params(const struct CmFit *fit);

// 1 if the optimizer converged, 0 otherwise (and for null).
//
// # Safety
// `fit` must be null or a live handle.
int32_t cm_fit_converged(const struct CmFit *fit);

// Copy the estimates (reporting units) into `out[0..len]`.
//
// # Safety
// `fit` must be a live handle and `out` must hold `len` doubles.
enum CmStatus cm_fit_estimates(const struct CmFit *fit, double *out, size_t len);

// Copy the standard errors into `out[0..len]`; NaN where unavailable.
//
// # Safety
// `fit` must be a live handle and `out` must hold `len` doubles.
enum CmStatus cm_fit_standard_errors(const struct CmFit *fit, double *out, size_t len);

// Log-likelihood at convergence, restricted log-likelihood and McFadden ρ².
//
// # Safety
// `fit` must be a live handle; each output pointer must be writable.
enum CmStatus cm_fit_loglik(const struct CmFit *fit,
                            double *ll,
                            double *ll_restricted,
                            double *rho2);

// Serialize the fit as JSON. Release the string with [`cm_string_free`].
//
// # Safety
// `fit` must be a live handle; `out` must be writable.
enum CmStatus cm_fit_to_json(const struct CmFit *fit, char **out);

// # Safety
// `fit` must be null or a handle not yet freed.
void cm_fit_free(struct CmFit *fit);

// # Safety
// `s` must be null or a string returned by this library and not yet freed.
void cm_string_free(char *s);

// Upper tail probability of χ² with `dof` degrees of freedom.
//
// # Safety
// `out` must be writable.
enum CmStatus cm_chi2_sf(double x, double dof, double *out);

// Quantile of χ² with `dof` degrees of freedom at probability `p`.
//
// # Safety
// `out` must be writable.
enum CmStatus cm_chi2_quantile(double p, double dof, double *out);

// Likelihood-ratio statistic of a pooled model against two sub-models.
//
// # Safety
// `x2` and `dof` must be writable.
enum CmStatus cm_lr_statistic(double ll_all,
                              double ll_a,
                              double ll_b,
                              size_t params_all,
                              size_t params_a,
                              size_t params_b,
                              double *x2,
                              size_t *dof);

// Share of the population with a negative coefficient. `scale` is the
// standard deviation (normal) or half-width (uniform).
//
// # Safety
// `out` must be writable.
enum CmStatus cm_sign_share(enum CmMixing kind, double location, double scale, double *out);

// `count` Halton points in base `prime` after discarding the first `skip`.
//
// # Safety
// `out` must hold `count` doubles.
enum CmStatus cm_halton(uint64_t prime, size_t count, size_t skip, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRASHMLE_H */
