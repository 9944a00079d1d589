/* C interface of the mvrisk disease-risk smoothing engine. */

#ifndef MVRISK_H
#define MVRISK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which per-cell posterior summary `mvrisk_result_risk_summary` fills.
typedef enum mvrisk_field {
  MVRISK_FIELD_MEAN = 0,
  MVRISK_FIELD_MEDIAN = 1,
  MVRISK_FIELD_SD = 2,
  MVRISK_FIELD_Q025 = 3,
  MVRISK_FIELD_Q975 = 4,
  // Posterior probability that the relative risk exceeds one.
  MVRISK_FIELD_EXCEED_ONE = 5,
  // Leave-one-out predictive density of the observed count.
  MVRISK_FIELD_CPO = 6,
} mvrisk_field;

// How per-area posteriors are combined across subdomains.
typedef enum mvrisk_merge {
  // Each area keeps the draws of its home subdomain.
  MVRISK_MERGE_OWNERSHIP = 0,
  // Per-cell mixture over all subdomains containing the area.
  MVRISK_MERGE_MIXTURE = 1,
} mvrisk_merge;

// Status code returned by every fallible call.
typedef enum mvrisk_status {
  // Success.
  MVRISK_OK = 0,
  // A pointer was null, a string was not UTF-8, or a buffer length or
  // index was wrong.
  MVRISK_INVALID_ARGUMENT = 1,
  // The input data or configuration was rejected.
  MVRISK_INVALID_INPUT = 2,
  // The fit failed numerically.
  MVRISK_NUMERIC_FAILURE = 3,
  // An internal invariant was violated; the library caught a panic.
  MVRISK_PANIC = 4,
} mvrisk_status;

// Opaque adjacency structure over areal units.
typedef struct mvrisk_graph mvrisk_graph;

// Opaque observed/expected count panel.
typedef struct mvrisk_panel mvrisk_panel;

// Opaque fitted result (posterior draws, summaries, criteria).
typedef struct mvrisk_result mvrisk_result;

// Tuning knobs for a fit. Get defaults from `mvrisk_fit_options_default`
// and change only what you need.
typedef struct mvrisk_fit_options {
  // Posterior draws to keep (at least 2).
  size_t draws;
  // Root seed; fixed seed and inputs give bit-identical results
  // regardless of `workers`.
  uint64_t seed;
  // Degrees of freedom of the covariance prior; 0 or negative means the
  // default (number of diseases + 2).
  double dof;
  double newton_tol;
  size_t newton_max_iter;
  double hyper_tol;
  size_t hyper_max_iter;
  // Worker threads for partitioned fits; 0 means use all cores.
  size_t workers;
  // Neighbourhood expansion order for partitioned fits.
  size_t order;
  enum mvrisk_merge merge;
} mvrisk_fit_options;

// Model-comparison measures of a fitted result.
typedef struct mvrisk_criteria {
  // Posterior mean of the negative log-likelihood.
  double mean_neg_log_lik;
  // Posterior mean deviance.
  double mean_deviance;
  // Deviance at the posterior mean risks.
  double deviance_at_mean;
  // Effective number of parameters (deviance based).
  double p_d;
  double dic;
  // Effective number of parameters (variance based).
  double p_waic;
  double waic;
} mvrisk_criteria;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the message of the last failure on this thread into `buf`
// (NUL-terminated, truncated to `cap`). Returns the length the full
// message needs, including the NUL.
size_t mvrisk_last_error(char *buf, size_t cap);

// Parse an edge-list text (`label<TAB>label` per line, single labels for
// isolated areas, `#` comments) into a graph handle.
enum mvrisk_status mvrisk_graph_parse(const char *edge_text, struct mvrisk_graph **out);

// Build a rook-adjacency lattice graph with labels `r<row>c<col>`.
enum mvrisk_status mvrisk_graph_lattice(size_t rows, size_t cols, struct mvrisk_graph **out);

// Number of areas, or 0 for a null handle.
size_t mvrisk_graph_n_areas(const struct mvrisk_graph *graph);

// Number of neighbour pairs, or 0 for a null handle.
size_t mvrisk_graph_n_edges(const struct mvrisk_graph *graph);

// Release a graph handle. Null is a no-op.
void mvrisk_graph_free(struct mvrisk_graph *graph);

// Parse a long-format counts CSV (area, disease, observed and either
// expected or age_group + population columns) against `graph`.
enum mvrisk_status mvrisk_panel_parse_csv(const struct mvrisk_graph *graph,
                                          const char *csv_text,
                                          struct mvrisk_panel **out);

// Build a panel from raw arrays. `observed` and `expected` are
// disease-major with `n_diseases * n_areas` entries: disease j, area i at
// index `j * n_areas + i`, areas in graph order.
enum mvrisk_status mvrisk_panel_new(const struct mvrisk_graph *graph,
                                    const char *const *disease_names,
                                    size_t n_diseases,
                                    const uint64_t *observed,
                                    const double *expected,
                                    struct mvrisk_panel **out);

// Number of areas in the panel, or 0 for a null handle.
size_t mvrisk_panel_n_areas(const struct mvrisk_panel *panel);

// Number of diseases in the panel, or 0 for a null handle.
size_t mvrisk_panel_n_diseases(const struct mvrisk_panel *panel);

// Release a panel handle. Null is a no-op.
void mvrisk_panel_free(struct mvrisk_panel *panel);

// Defaults shared with the command-line tool.
struct mvrisk_fit_options mvrisk_fit_options_default(void);

// Fit the whole map as a single domain. `options` may be null for
// defaults.
enum mvrisk_status mvrisk_fit(const struct mvrisk_graph *graph,
                              const struct mvrisk_panel *panel,
                              const struct mvrisk_fit_options *options,
                              struct mvrisk_result **out);

// Fit the subdomains of a partition in parallel and merge. The partition
// text holds one `label<TAB>subdomain` line per area; subdomains are
// expanded by `options.order` neighbourhood hops before fitting.
enum mvrisk_status mvrisk_fit_partitioned(const struct mvrisk_graph *graph,
                                          const struct mvrisk_panel *panel,
                                          const char *partition_text,
                                          const struct mvrisk_fit_options *options,
                                          struct mvrisk_result **out);

// Number of areas in the result, or 0 for a null handle.
size_t mvrisk_result_n_areas(const struct mvrisk_result *result);

// Number of diseases in the result, or 0 for a null handle.
size_t mvrisk_result_n_diseases(const struct mvrisk_result *result);

// Number of posterior draws kept, or 0 for a null handle.
size_t mvrisk_result_n_draws(const struct mvrisk_result *result);

// Number of named scalar parameters, or 0 for a null handle.
size_t mvrisk_result_n_params(const struct mvrisk_result *result);

// Copy the label of area `i` into `buf`; snprintf convention.
size_t mvrisk_result_area_id(const struct mvrisk_result *result, size_t i, char *buf, size_t cap);

// Copy the name of disease `j` into `buf`; snprintf convention.
size_t mvrisk_result_disease_name(const struct mvrisk_result *result,
                                  size_t j,
                                  char *buf,
                                  size_t cap);

// Copy the name of parameter `k` into `buf`; snprintf convention.
size_t mvrisk_result_param_name(const struct mvrisk_result *result,
                                size_t k,
                                char *buf,
                                size_t cap);

// Fill `buf` (length `n_areas * n_diseases`, disease-major: disease j,
// area i at `j * n_areas + i`) with one posterior summary.
enum mvrisk_status mvrisk_result_risk_summary(const struct mvrisk_result *result,
                                              enum mvrisk_field field,
                                              double *buf,
                                              size_t len);

// Fill `buf` (length `n_draws`) with the posterior draws of the relative
// risk in (area `i`, disease `j`).
enum mvrisk_status mvrisk_result_risk_draws(const struct mvrisk_result *result,
                                            size_t i,
                                            size_t j,
                                            double *buf,
                                            size_t len);

// Fill `buf` (length `n_draws`) with the posterior draws of parameter `k`
// (see `mvrisk_result_param_name` for the naming).
enum mvrisk_status mvrisk_result_param_draws(const struct mvrisk_result *result,
                                             size_t k,
                                             double *buf,
                                             size_t len);

// Copy the model-comparison measures into `out`.
enum mvrisk_status mvrisk_result_criteria(const struct mvrisk_result *result,
                                          struct mvrisk_criteria *out);

// Number of warnings attached to the result, or 0 for a null handle.
size_t mvrisk_result_n_warnings(const struct mvrisk_result *result);

// Copy warning `k` into `buf`; snprintf convention.
size_t mvrisk_result_warning(const struct mvrisk_result *result, size_t k, char *buf, size_t cap);

// Release a result handle. Null is a no-op.
void mvrisk_result_free(struct mvrisk_result *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MVRISK_H */
