/* Exercises the C interface; built as C and linked only against libcicbm. */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <sys/stat.h>

#include "cicbm/cicbm.h"

static int failures = 0;

#define EXPECT(cond)                                                   \
  do {                                                                 \
    if (!(cond)) {                                                     \
      fprintf(stderr, "%s:%d: expected %s (last error: %s)\n", __FILE__, \
              __LINE__, #cond, cicbm_last_error());                    \
      ++failures;                                                      \
    }                                                                  \
  } while (0)

static void join(char* out, size_t cap, const char* a, const char* b) {
  if (snprintf(out, cap, "%s/%s", a, b) >= (int)cap) {
    fprintf(stderr, "path too long\n");
    exit(2);
  }
}

int main(int argc, char** argv) {
  if (argc != 3) {
    fprintf(stderr, "usage: capi_test FIXTURE_DIR SCRATCH_DIR\n");
    return 2;
  }
  const char* fixture = argv[1];
  const char* scratch = argv[2];
  mkdir(scratch, 0755);
  char manifests[4096], config_path[4096], out[4096], path[4096];
  join(manifests, sizeof manifests, fixture, "manifests");
  join(config_path, sizeof config_path, fixture, "config.json");
  join(out, sizeof out, scratch, "run");

  EXPECT(strlen(cicbm_version()) > 0);

  /* Configuration handles. */
  cicbm_config* cfg = NULL;
  EXPECT(cicbm_config_load(NULL, &cfg) == CICBM_OK);
  char* text = NULL;
  EXPECT(cicbm_config_to_json(cfg, &text) == CICBM_OK);
  EXPECT(text && strstr(text, "1993") != NULL);
  cicbm_string_free(text);
  EXPECT(cicbm_config_set(cfg, "beta", "-1") == CICBM_ERR_VALIDATION);
  EXPECT(strlen(cicbm_last_error()) > 0);
  EXPECT(cicbm_config_set(cfg, "no_such_key", "1") == CICBM_ERR_VALIDATION);
  cicbm_config_free(cfg);
  cfg = NULL;
  EXPECT(cicbm_config_from_json("{not json", &cfg) == CICBM_ERR_IO);
  EXPECT(cicbm_config_load(config_path, &cfg) == CICBM_OK);

  /* Matrices. */
  const double values[6] = {1, 2, 3, 4, 5, 6};
  cicbm_matrix* m = NULL;
  EXPECT(cicbm_matrix_create(2, 3, values, &m) == CICBM_OK);
  join(path, sizeof path, scratch, "m.bin");
  EXPECT(cicbm_matrix_write(m, path) == CICBM_OK);
  cicbm_matrix* back = NULL;
  EXPECT(cicbm_matrix_read(path, &back) == CICBM_OK);
  double copy[6] = {0};
  EXPECT(back && cicbm_matrix_rows(back) == 2 && cicbm_matrix_cols(back) == 3);
  EXPECT(cicbm_matrix_copy(back, copy, 6) == CICBM_OK);
  EXPECT(memcmp(copy, values, sizeof values) == 0);
  EXPECT(cicbm_matrix_copy(back, copy, 5) == CICBM_ERR_VALIDATION);
  cicbm_matrix_free(m);
  cicbm_matrix_free(back);
  EXPECT(cicbm_matrix_read("/nonexistent/x.bin", &back) == CICBM_ERR_IO);
  EXPECT(strcmp(cicbm_last_error_kind(), "io") == 0);

  /* Whole protocol and persisted state. */
  char* report = NULL;
  EXPECT(cicbm_run_protocol(manifests, out, cfg, 0, &report) == CICBM_OK);
  EXPECT(report && strstr(report, "avg_incremental_accuracy") != NULL);
  cicbm_string_free(report);

  cicbm_state* state = NULL;
  join(path, sizeof path, out, "phase_3");
  EXPECT(cicbm_state_load(path, &state) == CICBM_OK);
  EXPECT(state && cicbm_state_phase(state) == 3);
  EXPECT(state && cicbm_state_class_count(state) == 6);
  EXPECT(state && cicbm_state_concept_count(state) > 0);

  char* explained = NULL;
  join(path, sizeof path, manifests, "data_1/test.bin");
  EXPECT(cicbm_explain(state, path, 0, &explained) == CICBM_OK);
  EXPECT(explained && strstr(explained, "contributions") != NULL);
  cicbm_string_free(explained);
  EXPECT(cicbm_explain(state, path, 99, &explained) == CICBM_ERR_VALIDATION);
  EXPECT(cicbm_explain_global(state, 0, 0.2, &explained) == CICBM_OK);
  cicbm_string_free(explained);
  cicbm_state_free(state);

  char* audit = NULL;
  EXPECT(cicbm_audit(out, manifests, &audit) == CICBM_OK);
  EXPECT(audit && strstr(audit, "\"clean\": true") != NULL);
  cicbm_string_free(audit);

  /* Stage by stage for phase 1. */
  char s1[4096], s2[4096];
  join(s1, sizeof s1, scratch, "s1");
  join(s2, sizeof s2, scratch, "s2");
  EXPECT(cicbm_run_stage("concepts", manifests, NULL, s1, 1, cfg, NULL) == CICBM_OK);
  EXPECT(cicbm_run_stage("fit", manifests, s1, s2, 1, cfg, NULL) == CICBM_ERR_VALIDATION);
  EXPECT(cicbm_run_stage("bottleneck", manifests, s1, s2, 1, cfg, NULL) == CICBM_OK);
  EXPECT(cicbm_run_stage("nonsense", manifests, s1, s2, 1, cfg, NULL) == CICBM_ERR_VALIDATION);

  char* lab = NULL;
  EXPECT(cicbm_gaussian_lab("builtin:fig3", 2000, 1993, &lab) == CICBM_OK);
  EXPECT(lab && strstr(lab, "disagreement") != NULL);
  cicbm_string_free(lab);
  EXPECT(cicbm_gaussian_lab("builtin:unknown", 2000, 1993, &lab) == CICBM_ERR_VALIDATION);

  char* proto = NULL;
  EXPECT(cicbm_prototype_eval(manifests, cfg, &proto) == CICBM_OK);
  cicbm_string_free(proto);

  cicbm_config_free(cfg);
  if (failures == 0) printf("capi: all checks passed\n");
  return failures == 0 ? 0 : 1;
}
