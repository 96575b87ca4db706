#ifndef AFC_MEMSIM_H
#define AFC_MEMSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AfcFitModel {
  AFC_FIT_MODEL_EXP = 0,
  AFC_FIT_MODEL_DOUBLE_EXP = 1,
  AFC_FIT_MODEL_GAUSSIAN_MISMATCH = 2,
  AFC_FIT_MODEL_GAUSSIAN_MISMATCH_CENTERED = 3,
} AfcFitModel;

typedef enum AfcStatus {
  AFC_STATUS_OK = 0,
  AFC_STATUS_NULL_POINTER = 1,
  AFC_STATUS_INVALID_ARGUMENT = 2,
  AFC_STATUS_RESOLUTION = 3,
  AFC_STATUS_INTEGRATION = 4,
  AFC_STATUS_FIT_NOT_CONVERGED = 5,
  AFC_STATUS_NON_IDENTIFIABLE = 6,
  AFC_STATUS_SCHEDULE = 7,
  AFC_STATUS_CONFIG = 8,
  AFC_STATUS_IO = 9,
  AFC_STATUS_UTF8 = 10,
  AFC_STATUS_PANIC = 11,
} AfcStatus;

typedef enum AfcToothShape {
  AFC_TOOTH_SHAPE_SQUARE = 0,
  AFC_TOOTH_SHAPE_GAUSSIAN = 1,
  AFC_TOOTH_SHAPE_LORENTZIAN = 2,
} AfcToothShape;

typedef struct AfcComb AfcComb;

typedef struct AfcFit AfcFit;

typedef struct AfcPulse AfcPulse;

typedef struct AfcBudget {
  double eta_afc;
  double eta_t;
  double eta_mw;
  double spin_decay;
  double gaussian_mismatch;
  double eta_m;
} AfcBudget;

/**
 * Plain comb parameters. `tooth_fwhm_hz <= 0` means Δ/F.
 */
typedef struct AfcCombParams {
  double delta_hz;
  double d_peak;
  double finesse;
  double d0;
  double bandwidth_hz;
  enum AfcToothShape tooth_shape;
  double tooth_fwhm_hz;
  size_t samples_per_period;
} AfcCombParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next call into this library from the same thread.
 */
const char *afc_last_error(void);

const char *afc_version(void);

enum AfcStatus afc_optimal_finesse(double d, double *out_f);

enum AfcStatus afc_analytic_efficiency(double d, double finesse, double d0, double *out_eta);

/**
 * `out_outside_validity` may be NULL.
 */
enum AfcStatus afc_hsh_efficiency_analytic(double t_flat_s,
                                           double omega_hz,
                                           double gamma_bw_hz,
                                           double *out_eta,
                                           bool *out_outside_validity);

enum AfcStatus afc_fid_half_intensity_time(double gamma_mw_hz, double *out_t);

/**
 * Budget for the reference storage configuration with spin storage time `t_s`.
 */
enum AfcStatus afc_reference_budget(double t_s, struct AfcBudget *out_budget);

/**
 * Runs a scenario config file and writes its outputs into `out_dir`.
 */
enum AfcStatus afc_run_config(const char *config_path, const char *out_dir);

struct AfcCombParams afc_comb_params_default(void);

enum AfcStatus afc_comb_new(const struct AfcCombParams *params, struct AfcComb **out_comb);

void afc_comb_free(struct AfcComb *comb);

/**
 * Number of grid samples; 0 for NULL.
 */
size_t afc_comb_len(const struct AfcComb *comb);

/**
 * Copies up to `cap` samples into either buffer; both may be NULL.
 */
enum AfcStatus afc_comb_samples(const struct AfcComb *comb,
                                double *detuning_hz,
                                double *depth,
                                size_t cap);

enum AfcStatus afc_comb_efficiency(const struct AfcComb *comb, double *out_eta);

enum AfcStatus afc_pulse_square_new(double omega_hz,
                                    double duration_s,
                                    struct AfcPulse **out_pulse);

/**
 * HSH pulse with default edges; `chirp_bw_hz` is swept over the flat part.
 */
enum AfcStatus afc_pulse_hsh_new(double omega_hz,
                                 double t_flat_s,
                                 double chirp_bw_hz,
                                 struct AfcPulse **out_pulse);

void afc_pulse_free(struct AfcPulse *pulse);

/**
 * Transfer probability for each of `n` detunings, written to `out_prob`.
 */
enum AfcStatus afc_pulse_transfer(const struct AfcPulse *pulse,
                                  const double *detunings_hz,
                                  size_t n,
                                  double *out_prob);

/**
 * Mean transfer over a uniform band of width `gamma_bw_hz`.
 */
enum AfcStatus afc_pulse_average_transfer(const struct AfcPulse *pulse,
                                          double gamma_bw_hz,
                                          size_t n_points,
                                          double *out_eta);

/**
 * `sigma` may be NULL for an unweighted fit.
 */
enum AfcStatus afc_fit(enum AfcFitModel model,
                       const double *x,
                       const double *y,
                       const double *sigma,
                       size_t n,
                       struct AfcFit **out_fit);

void afc_fit_free(struct AfcFit *fit);

/**
 * `out_sigma` may be NULL. Unknown names give `InvalidArgument`.
 */
enum AfcStatus afc_fit_param(const struct AfcFit *fit,
                             const char *name,
                             double *out_value,
                             double *out_sigma);

bool afc_fit_converged(const struct AfcFit *fit);

/**
 * NaN for a NULL handle.
 */
double afc_fit_predict(const struct AfcFit *fit, double x);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AFC_MEMSIM_H */
