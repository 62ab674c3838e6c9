#ifndef MAXSTAB_H
#define MAXSTAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_INVALID_ARGUMENT = 2,
  MS_STATUS_DATA = 3,
  MS_STATUS_NUMERICAL = 4,
  // The fit handle is valid but the optimizer stopped early.
  MS_STATUS_NOT_CONVERGED = 5,
  MS_STATUS_BUFFER_TOO_SMALL = 6,
  MS_STATUS_PANIC = 7,
} MsStatus;

// Block-maxima panel.
typedef struct MsDataset MsDataset;

// Fitted model.
typedef struct MsFit MsFit;

// Parsed model description.
typedef struct MsModel MsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message (NUL-terminated, truncated to fit) into
// `buf` and returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t ms_last_error(char *buf, size_t len);

// Builds a panel from arrays. `ids` may be null, giving ids `S1`, `S2`, ...;
// `maxima` is `n_years × n_sites` row-major with NaN for missing values.
//
// # Safety
// Array arguments must hold the stated number of elements.
enum MsStatus ms_dataset_new(size_t n_sites,
                             const char *const *ids,
                             const double *lon,
                             const double *lat,
                             const double *alt,
                             size_t n_years,
                             const int64_t *years,
                             const double *maxima,
                             struct MsDataset **out);

// Loads a panel from station and maxima CSV files.
//
// # Safety
// Paths must be NUL-terminated strings; `out` must be writable.
enum MsStatus ms_dataset_load(const char *stations, const char *maxima, struct MsDataset **out);

// # Safety
// `d` must be null or a handle from this library, not yet freed.
void ms_dataset_free(struct MsDataset *d);

// # Safety
// `d` must be a live handle.
size_t ms_dataset_n_sites(const struct MsDataset *d);

// # Safety
// `d` must be a live handle.
size_t ms_dataset_n_years(const struct MsDataset *d);

// Parses a model description in the model-file syntax.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum MsStatus ms_model_parse(const char *text, struct MsModel **out);

// # Safety
// `m` must be null or a live handle.
void ms_model_free(struct MsModel *m);

// Fits `model` to `data` with default options. On `MS_STATUS_NOT_CONVERGED`
// the handle is still written and must be freed.
//
// # Safety
// `data` and `model` must be live handles; `out` must be writable.
enum MsStatus ms_fit(const struct MsDataset *data, const struct MsModel *model, struct MsFit **out);

// # Safety
// `f` must be null or a live handle.
void ms_fit_free(struct MsFit *f);

// Number of parameters.
//
// # Safety
// `f` must be a live handle.
size_t ms_fit_dim(const struct MsFit *f);

// Name of parameter `k`, copied like [`ms_last_error`]; returns the full
// length, or 0 when `k` is out of range.
//
// # Safety
// `f` must be a live handle; `buf` null or `len` writable bytes.
size_t ms_fit_param_name(const struct MsFit *f, size_t k, char *buf, size_t len);

// Estimates on the reported scale and Godambe standard errors (NaN where
// unavailable or fixed). Either output may be null.
//
// # Safety
// Non-null outputs must hold `len` doubles.
enum MsStatus ms_fit_estimates(const struct MsFit *f, double *estimates, double *se, size_t len);

// Negative pairwise log-likelihood and CLIC (NaN when undefined).
//
// # Safety
// `f` must be a live handle; outputs may be null.
enum MsStatus ms_fit_summary(const struct MsFit *f, double *nll, double *clic);

// `θ(h) = 2Φ(a(h)/2)`.
//
// # Safety
// `out` must be writable.
enum MsStatus ms_extremal_coefficient(double dx,
                                      double dy,
                                      double s11,
                                      double s12,
                                      double s22,
                                      double *out);

// Bivariate unit-Fréchet CDF at dependence distance `a`.
//
// # Safety
// `out` must be writable.
enum MsStatus ms_bivariate_cdf(double z_i, double z_j, double a, double *out);

// Log of the bivariate density.
//
// # Safety
// `out` must be writable.
enum MsStatus ms_bivariate_log_density(double z_i, double z_j, double a, double *out);

// GEV `T`-year return level.
//
// # Safety
// `out` must be writable.
enum MsStatus ms_gev_return_level(double loc,
                                  double scale,
                                  double shape,
                                  double period,
                                  double *out);

// One unit-Fréchet field at `n` sites given as interleaved `(x, y)` pairs.
//
// # Safety
// `coords` must hold `2n` doubles and `out` `n` doubles.
enum MsStatus ms_simulate_field(double s11,
                                double s12,
                                double s22,
                                const double *coords,
                                size_t n,
                                uint64_t seed,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAXSTAB_H */
