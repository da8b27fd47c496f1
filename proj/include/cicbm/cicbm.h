/* C interface to the class-incremental concept bottleneck library.
 *
 * All objects are opaque handles released with their *_free function.
 * Functions return a cicbm_status; on failure cicbm_last_error() describes
 * the problem (thread-local, valid until the next call on the same thread).
 * Strings returned through char** are JSON documents owned by the caller and
 * released with cicbm_string_free. */
#ifndef CICBM_H
#define CICBM_H

#include <stddef.h>
#include <stdint.h>

#if defined(CICBM_BUILDING_LIBRARY)
#define CICBM_API __attribute__((visibility("default")))
#else
#define CICBM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cicbm_status {
  CICBM_OK = 0,
  CICBM_ERR_VALIDATION = 2, /* bad input, dimension mismatch, disjointness, stale state */
  CICBM_ERR_DIVERGENCE = 3, /* non-finite loss or gradient */
  CICBM_ERR_IO = 4,         /* file system, format, corruption or version errors */
  CICBM_ERR_INTERNAL = 5
} cicbm_status;

typedef struct cicbm_config cicbm_config;
typedef struct cicbm_state cicbm_state;
typedef struct cicbm_matrix cicbm_matrix;

CICBM_API const char* cicbm_version(void);
CICBM_API const char* cicbm_last_error(void);
/* Finer error class of the last failure, e.g. "dimension" or "corruption". */
CICBM_API const char* cicbm_last_error_kind(void);
CICBM_API void cicbm_string_free(char* text);

/* Configuration. `path` may be NULL for defaults. */
CICBM_API cicbm_status cicbm_config_load(const char* path, cicbm_config** out);
CICBM_API cicbm_status cicbm_config_from_json(const char* json_text, cicbm_config** out);
/* Sets one key; `json_value` is a JSON literal such as "0.5", "true" or "\"35:55\"". */
CICBM_API cicbm_status cicbm_config_set(cicbm_config* config, const char* key, const char* json_value);
CICBM_API cicbm_status cicbm_config_to_json(const cicbm_config* config, char** out);
CICBM_API void cicbm_config_free(cicbm_config* config);

/* Dense float matrices in the binary tensor format. */
CICBM_API cicbm_status cicbm_matrix_create(size_t rows, size_t cols, const double* row_major, cicbm_matrix** out);
CICBM_API cicbm_status cicbm_matrix_read(const char* path, cicbm_matrix** out);
CICBM_API cicbm_status cicbm_matrix_write(const cicbm_matrix* matrix, const char* path);
CICBM_API size_t cicbm_matrix_rows(const cicbm_matrix* matrix);
CICBM_API size_t cicbm_matrix_cols(const cicbm_matrix* matrix);
/* Copies rows*cols values in row-major order into `out`. */
CICBM_API cicbm_status cicbm_matrix_copy(const cicbm_matrix* matrix, double* out, size_t capacity);
CICBM_API void cicbm_matrix_free(cicbm_matrix* matrix);

/* Persisted phase state. */
CICBM_API cicbm_status cicbm_state_load(const char* dir, cicbm_state** out);
CICBM_API int cicbm_state_phase(const cicbm_state* state);
CICBM_API size_t cicbm_state_concept_count(const cicbm_state* state);
CICBM_API size_t cicbm_state_class_count(const cicbm_state* state);
CICBM_API cicbm_status cicbm_state_report(const cicbm_state* state, char** out);
CICBM_API void cicbm_state_free(cicbm_state* state);

/* Whole protocol over a manifest directory. Writes out_dir/phase_<t>/ and
 * out_dir/report.json; `report` (may be NULL) receives the metrics report. */
CICBM_API cicbm_status cicbm_run_protocol(const char* manifest_dir, const char* out_dir, const cicbm_config* config,
                                          int resume, char** report);

/* One stage of phase `phase`: "concepts", "bottleneck", "fit" or "evaluate".
 * Reads the state in `state_in` (NULL before the concept stage of phase 1)
 * and saves the advanced state to `state_out`. `report` receives the phase
 * report. */
CICBM_API cicbm_status cicbm_run_stage(const char* stage, const char* manifest_dir, const char* state_in,
                                       const char* state_out, int phase, const cicbm_config* config, char** report);

/* Pseudo-features of every past class for phase `phase`, written to out_dir
 * as pseudo_class_<c>.bin plus a summary. Needs a state at the bottleneck or
 * fit stage of that phase. */
CICBM_API cicbm_status cicbm_gen_pseudo(const char* manifest_dir, const char* state_dir, int phase,
                                        const cicbm_config* config, const char* out_dir, char** summary);

/* Per-concept contributions for every row of `sample_file` to class `class_id`. */
CICBM_API cicbm_status cicbm_explain(const cicbm_state* state, const char* sample_file, int class_id, char** out);
CICBM_API cicbm_status cicbm_explain_global(const cicbm_state* state, int class_id, double threshold, char** out);

/* Synthetic scenarios: a JSON scenario file or "builtin:<name>". */
CICBM_API cicbm_status cicbm_gaussian_lab(const char* scenario, size_t probes, uint64_t seed, char** out);
CICBM_API cicbm_status cicbm_e2e(const char* scenario, const cicbm_config* config, const char* out_dir, char** out);

/* `source` is a manifest directory or a scenario spec. */
CICBM_API cicbm_status cicbm_prototype_eval(const char* source, const cicbm_config* config, char** out);
CICBM_API cicbm_status cicbm_audit(const char* out_dir, const char* source, char** out);

#ifdef __cplusplus
}
#endif

#endif /* CICBM_H */
