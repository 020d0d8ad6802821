/*
 * causalsfda — C API for the source-free domain adaptation toolkit.
 *
 * The core is C++; this header is the stable boundary for tools and foreign
 * language bindings. All functions return a csf_status; on any failure a
 * thread-local message is available from csf_last_error(). Strings returned
 * through char** out-parameters are heap-allocated and must be released with
 * csf_string_free(). Opaque handles must be released with their _free
 * function.
 */
#ifndef CAUSALSFDA_H
#define CAUSALSFDA_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum csf_status {
  CSF_OK = 0,
  /* Invalid input: bad arguments, malformed files, violated preconditions. */
  CSF_ERROR_INVALID = 1,
  /* Runtime failure: I/O, divergence, internal errors. */
  CSF_ERROR_RUNTIME = 2,
  /* A verification suite ran to completion and found failing cases. */
  CSF_ERROR_VERIFY = 3
} csf_status;

/* Message describing the most recent failure on this thread. Never NULL. */
const char* csf_last_error(void);

const char* csf_version(void);

void csf_string_free(char* s);

/* ---- Discrete information oracle --------------------------------------- */

/* Shannon entropy in nats of a probability vector (must sum to 1). */
csf_status csf_entropy(const double* probs, size_t n, double* out_nats);

/* Mutual information in nats of a row-major joint probability table. */
csf_status csf_mutual_information(const double* joint_row_major, size_t rows,
                                  size_t cols, double* out_nats);

typedef struct csf_sweep_summary {
  int32_t trials;
  int32_t passed;
} csf_sweep_summary;

/* Randomized data-processing-inequality sweep (joint tables vs compressive
 * maps). Returns CSF_ERROR_VERIFY when any trial fails. The optional CSV
 * receives one "trial,lhs_nats,rhs_nats,holds" row per trial. */
csf_status csf_lemma1_sweep(uint64_t seed, int32_t trials,
                            const char* dump_csv_or_null,
                            csf_sweep_summary* out);

/* Randomized bottleneck-bound sweep: the surrogate upper bound must hold for
 * compressive label maps, with exact MI equality for bijective maps. */
csf_status csf_theorem1_sweep(uint64_t seed, int32_t trials,
                              const char* dump_csv_or_null,
                              csf_sweep_summary* out);

/* ---- Full verification --------------------------------------------------- */

typedef struct csf_verify_options {
  int32_t trials;       /* <= 0 selects the default (1000) */
  int32_t grad_samples; /* <= 0 selects the default (50) */
  uint64_t seed;        /* 0 selects the documented default sweep seed */
  /* Test hook: flip the analytic VMI gradient so the suite must fail. */
  int32_t inject_vmi_grad_sign_flip;
  const char* dump_csv; /* optional per-trial CSV */
} csf_verify_options;

/* Oracle sweeps plus the finite-difference gradient suite over every loss.
 * Always fills out_report (when non-NULL) with the rendered report; returns
 * CSF_ERROR_VERIFY when anything failed. */
csf_status csf_verify(const csf_verify_options* opts_or_null,
                      char** out_report, int32_t* out_all_passed);

/* ---- Synthetic scenarios -------------------------------------------------- */

typedef struct csf_synth_options {
  int32_t classes;           /* <= 0: default 5 */
  int32_t ambient_dim;       /* <= 0: default 16 */
  int32_t samples_per_class; /* <= 0: default 100 */
  double radius;             /* <= 0: default 1.0 */
  double cluster_std;        /* <= 0: default 0.15 */
  double rotation;           /* domain shift; default pi/2 when NAN */
  double scale;              /* anisotropic in-plane scale; 0: default 1.0 */
  double noise;              /* additive noise level; NAN: default 0 */
  int32_t outlier_classes;   /* open-set unknown classes outside the circle */
  const char* setting;       /* closed|open|partial|generalized|sf-oodg */
  const char* target_classes; /* comma-separated, partial-set subset */
  double source_train_ratio;  /* generalized split; <= 0: default 0.9 */
  uint64_t seed;
} csf_synth_options;

/* Writes source/target manifests plus a scenario descriptor into out_dir and
 * returns the descriptor path. */
csf_status csf_synth_scenario(const csf_synth_options* opts,
                              const char* out_dir,
                              char** out_descriptor_path);

/* ---- Adaptation runs ------------------------------------------------------- */

typedef struct csf_adapt_summary {
  double final_target_accuracy;
  double final_pseudo_label_accuracy;
  double wall_seconds;
} csf_adapt_summary;

/* Executes source pre-training (or checkpoint load) and the alternating
 * adaptation loop described by the config file; writes the run directory.
 * out_dir_or_null / seed_override_or_null override the config values. The
 * CAUSAL_SFDA_SEED environment variable also overrides the config seed. */
csf_status csf_run_adapt(const char* config_path, const char* out_dir_or_null,
                         const char* seed_override_or_null,
                         csf_adapt_summary* out_summary_or_null);

/* ---- Evaluation ------------------------------------------------------------ */

/* Evaluates a run directory's final checkpoint under its scenario protocol
 * and merges the scores into the results file at results_path (creating it
 * when missing). Records are written under method_name. */
csf_status csf_evaluate_run(const char* run_dir, const char* method_name,
                            double open_threshold, const char* results_path);

/* ---- Continual adaptation --------------------------------------------------- */

typedef struct csf_continual_options {
  /* Comma-separated in-plane rotations, one synthetic domain each (>= 2).
   * The first entry is the supervised source domain. */
  const char* rotations;
  int32_t classes;           /* <= 0: default 5 */
  int32_t ambient_dim;       /* <= 0: default 16 */
  int32_t samples_per_class; /* <= 0: default 100 */
  int32_t epochs;            /* <= 0: default 15 */
  double anchor_rotation;    /* encoder exposure; NAN = mid-sequence */
  uint64_t seed;
} csf_continual_options;

/* Runs the sequence protocol: train on the first domain, adapt along the
 * rest, evaluate every intermediate model on every domain's held-out test
 * split. Returns the accuracy grid with the average-drop row as text and
 * optionally writes a plot-ready CSV. */
csf_status csf_run_continual(const csf_continual_options* opts,
                             const char* csv_path_or_null, char** out_table);

/* ---- Results tables -------------------------------------------------------- */

typedef struct csf_results csf_results; /* opaque score table */

csf_status csf_results_load(const char* path, csf_results** out);
csf_status csf_results_merge_file(csf_results* results, const char* path);
/* Unification table rendered for terminals (tab-separated). */
csf_status csf_results_render_table(const csf_results* results,
                                    char** out_text);
/* Plot-ready CSV: method,metric,setting,value. */
csf_status csf_results_unification_csv(const csf_results* results,
                                       char** out_csv);
/* metric: "score:<setting>", "H_all", "H_wrg" or "H_loso:<setting>". */
csf_status csf_results_metric(const csf_results* results, const char* method,
                              const char* metric, double* out_value);
void csf_results_free(csf_results* results);

#ifdef __cplusplus
}
#endif

#endif /* CAUSALSFDA_H */
