/* C interface to the dmlrc library: measurement-error-corrected double
 * machine learning for multi-pollutant studies.
 *
 * All functions return DMLRC_OK (0) on success or a nonzero status code; the
 * message for the most recent failure on the calling thread is available via
 * dmlrc_last_error(). Strings returned through char** outputs are owned by
 * the caller and released with dmlrc_free(). */
#ifndef DMLRC_H
#define DMLRC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define DMLRC_API __declspec(dllexport)
#else
#define DMLRC_API __attribute__((visibility("default")))
#endif

typedef int32_t dmlrc_status;

enum {
  DMLRC_OK = 0,
  DMLRC_ERROR_CONFIG = 2,  /* bad options, schema, or scenario setup */
  DMLRC_ERROR_DATA = 3,    /* malformed or insufficient input data */
  DMLRC_ERROR_NUMERIC = 4, /* singular design, degenerate variance, ... */
  DMLRC_ERROR_PARTIAL = 5  /* analysis finished but some constituents failed */
};

/* opaque fitted calibration model */
typedef struct dmlrc_model dmlrc_model;

DMLRC_API const char* dmlrc_version(void);

/* message for the most recent failure on this thread; empty string if none */
DMLRC_API const char* dmlrc_last_error(void);

DMLRC_API void dmlrc_free(char* ptr);

/* Runs the Monte-Carlo study described by `options_json` and returns the
 * metrics table as CSV text. Options keys: scenario (1-8), rho, replicates,
 * seed, threads, methods (array of "<dml|slr>-<true|uncorrected|corrected>"),
 * config (inline object) or config_path (file) carrying scenario overrides:
 * scenario, rho, N, n, R, mu, sigma, err_corr, sigma_xi2, seed, methods;
 * matrices inline as arrays or as a CSV file path. */
DMLRC_API dmlrc_status dmlrc_simulate(const char* options_json, char** csv_out);

/* Fits the regression-calibration model on a validation-study CSV following
 * the schema file. Options keys (all optional): pairwise_meat (bool).
 * The handle must be released with dmlrc_model_free(). */
DMLRC_API dmlrc_status dmlrc_calibrate(const char* validation_csv_path,
                                       const char* schema_path, const char* options_json,
                                       dmlrc_model** model_out);

DMLRC_API dmlrc_status dmlrc_model_to_json(const dmlrc_model* model, char** json_out);
DMLRC_API dmlrc_status dmlrc_model_from_json(const char* json, dmlrc_model** model_out);

/* Predicted exposures for one subject: z has p+1 surrogate values, w the
 * covariate row, xhat_out receives p+1 predictions. */
DMLRC_API dmlrc_status dmlrc_model_predict(const dmlrc_model* model, const double* z,
                                           size_t z_len, const double* w, size_t w_len,
                                           double* xhat_out, size_t xhat_len);

DMLRC_API void dmlrc_model_free(dmlrc_model* model);

/* Multi-pollutant analysis over a main-study/validation-study pair; returns
 * the report as JSON text. Options keys: methods (array of
 * "<slr|dml>-<uncorrected|corrected>" or "all"), interactions, single_pollutant,
 * folds, seed, fdr, pairwise_meat. Returns DMLRC_ERROR_PARTIAL when the run
 * finished but one or more constituents failed (report_json_out is still
 * produced). */
DMLRC_API dmlrc_status dmlrc_analyze(const char* main_csv_path,
                                     const char* validation_csv_path, const char* schema_path,
                                     const char* options_json, char** report_json_out);

#ifdef __cplusplus
}
#endif

#endif /* DMLRC_H */
