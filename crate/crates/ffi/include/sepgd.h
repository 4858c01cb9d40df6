#ifndef SEPGD_H
#define SEPGD_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

// Result of every fallible call.
typedef enum SepgdStatus {
  SEPGD_STATUS_OK = 0,
  SEPGD_STATUS_INVALID_INPUT = 1,
  SEPGD_STATUS_DIMENSION_MISMATCH = 2,
  SEPGD_STATUS_INDEX_OUT_OF_RANGE = 3,
  SEPGD_STATUS_NUMERIC = 4,
  SEPGD_STATUS_NO_CONVERGENCE = 5,
  SEPGD_STATUS_RANGE = 6,
  SEPGD_STATUS_PRECONDITION = 7,
  SEPGD_STATUS_NOT_SEPARABLE = 8,
  SEPGD_STATUS_PARSE = 9,
  // A proven inequality failed on a concrete iterate.
  SEPGD_STATUS_FALSIFIED = 10,
  SEPGD_STATUS_DIVERGENCE = 11,
  SEPGD_STATUS_CONFIG = 12,
  SEPGD_STATUS_IO = 13,
  SEPGD_STATUS_NULL_POINTER = 14,
  // A string argument was not valid UTF-8.
  SEPGD_STATUS_UTF8 = 15,
  SEPGD_STATUS_PANIC = 16,
} SepgdStatus;

// Which term of the schedule's max set a step size.
typedef enum SepgdBranch {
  SEPGD_BRANCH_INITIAL = -1,
  SEPGD_BRANCH_EXPONENTIAL = 0,
  SEPGD_BRANCH_LOG_SQUARED = 1,
} SepgdBranch;

// Opaque block-SGD plan handle.
typedef struct SepgdBlockPlan SepgdBlockPlan;

// Opaque dataset handle.
typedef struct SepgdDataset SepgdDataset;

// Opaque trace handle returned by every optimizer.
typedef struct SepgdTrace SepgdTrace;

// Outcome of a stopping-time search; `time` is the cap when censored.
typedef struct SepgdHit {
  uint64_t time;
  bool censored;
} SepgdHit;

// One trace row. `s` is NaN and `has_s` false for runs without a schedule.
typedef struct SepgdRecord {
  uint64_t t;
  double loss;
  double eta;
  double s;
  bool has_s;
  double grad_norm;
  double w_norm;
} SepgdRecord;

// One block of a block-SGD plan.
typedef struct SepgdBlock {
  uint64_t k;
  double eps;
  uint64_t len;
  uint64_t start;
} SepgdBlock;

// Summary of a block-SGD run.
typedef struct SepgdBlockSummary {
  double min_loss;
  bool min_loss_exact;
  bool reached_target;
  struct SepgdHit post_activation_tau;
  uint64_t steps_after_activation;
  double max_step_ratio;
} SepgdBlockSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failing call on this thread, or NULL if none failed.
// The pointer stays valid until the next failing call on the same thread.
const char *sepgd_last_error_message(void);

// Synthetic separable dataset in `dim` dimensions with certified margin `margin`.
//
// # Safety
// `out` must be valid for writing one pointer.
enum SepgdStatus sepgd_dataset_generate(size_t dim,
                                        size_t count,
                                        double margin,
                                        uint64_t seed,
                                        struct SepgdDataset **out);

// Dataset from a row-major `count × dim` feature array and ±1 labels.
// Rows must lie in the unit ball.
//
// # Safety
// `features` must point to `count * dim` doubles, `labels` to `count`
// doubles, and `out` must be valid for writing one pointer.
enum SepgdStatus sepgd_dataset_from_arrays(const double *features,
                                           const double *labels,
                                           size_t count,
                                           size_t dim,
                                           struct SepgdDataset **out);

// Reads `label,feature_1,…,feature_d` rows and rescales them into the unit
// ball. When `certificate_path` is non-NULL, the certificate is attached
// with its margin multiplied by the load scale.
//
// # Safety
// `path` and a non-NULL `certificate_path` must be NUL-terminated strings;
// `out` must be valid for writing one pointer.
enum SepgdStatus sepgd_dataset_load_csv(const char *path,
                                        const char *certificate_path,
                                        bool skip_header,
                                        struct SepgdDataset **out);

// Releases a dataset. NULL is ignored.
//
// # Safety
// `data` must be NULL or a handle from this library not yet freed.
void sepgd_dataset_free(struct SepgdDataset *data);

// Number of samples, or 0 for NULL.
//
// # Safety
// `data` must be NULL or a live handle.
size_t sepgd_dataset_count(const struct SepgdDataset *data);

// Feature dimension, or 0 for NULL.
//
// # Safety
// `data` must be NULL or a live handle.
size_t sepgd_dataset_dim(const struct SepgdDataset *data);

// Factor the features were multiplied by when loaded; 1 otherwise.
//
// # Safety
// `data` must be NULL or a live handle.
double sepgd_dataset_scale(const struct SepgdDataset *data);

// Certified margin of the dataset; fails with `PRECONDITION` when uncertified.
//
// # Safety
// `data` must be a live handle and `margin` valid for one write.
enum SepgdStatus sepgd_dataset_margin(const struct SepgdDataset *data, double *margin);

// Writes the dataset to CSV in the loader's format, with ±1 labels and no header.
//
// # Safety
// `data` must be a live handle and `path` a NUL-terminated string.
enum SepgdStatus sepgd_dataset_write_csv(const struct SepgdDataset *data, const char *path);

// Mean logistic loss at `w` (length `dim`).
//
// # Safety
// `w` must point to `dim` doubles and `loss` be valid for one write.
enum SepgdStatus sepgd_full_loss(const struct SepgdDataset *data,
                                 const double *w,
                                 size_t dim,
                                 double *loss);

// Gradient of the mean logistic loss at `w`, written to `grad` (length `dim`).
//
// # Safety
// `w` and `grad` must each point to `dim` doubles.
enum SepgdStatus sepgd_full_gradient(const struct SepgdDataset *data,
                                     const double *w,
                                     size_t dim,
                                     double *grad);

// `η₀ = 1/(ln 2 + ‖w₀‖)`.
double sepgd_schedule_initial_eta(double w0_norm);

// Step size following running sum `s_prev`, with the branch that set it.
//
// # Safety
// `eta` and `branch` must each be valid for one write.
enum SepgdStatus sepgd_schedule_next_eta(double s_prev,
                                         double f0,
                                         double *eta,
                                         enum SepgdBranch *branch);

// GD with the increasing step-size schedule for `steps` updates.
//
// `gamma <= 0` uses the dataset's certified margin. `w0` may be NULL with
// `w0_len` 0 to start from the origin. A violated invariant returns
// `FALSIFIED` and no trace.
//
// # Safety
// `w0` must point to `w0_len` doubles and `out` be valid for one write.
enum SepgdStatus sepgd_run_gd_schedule(const struct SepgdDataset *data,
                                       double gamma,
                                       const double *w0,
                                       size_t w0_len,
                                       size_t steps,
                                       struct SepgdTrace **out);

// GD with constant step `eta` for `steps` updates.
//
// # Safety
// `w0` must point to `w0_len` doubles and `out` be valid for one write.
enum SepgdStatus sepgd_run_gd_constant(const struct SepgdDataset *data,
                                       double eta,
                                       const double *w0,
                                       size_t w0_len,
                                       size_t steps,
                                       struct SepgdTrace **out);

// Adaptive SGD from the origin until the full loss reaches `epsilon`.
//
// `cap = 0` uses ten times the expectation bound, which needs a margin:
// `gamma <= 0` takes the certified one.
//
// # Safety
// `out` and `tau` must each be valid for one write.
enum SepgdStatus sepgd_run_adaptive_sgd(const struct SepgdDataset *data,
                                        double epsilon,
                                        uint64_t seed,
                                        size_t cap,
                                        double gamma,
                                        struct SepgdTrace **out,
                                        struct SepgdHit *tau);

// Number of records in a trace, or 0 for NULL.
//
// # Safety
// `trace` must be NULL or a live handle.
size_t sepgd_trace_len(const struct SepgdTrace *trace);

// Copies record `index` into `record`.
//
// # Safety
// `trace` must be a live handle and `record` valid for one write.
enum SepgdStatus sepgd_trace_record(const struct SepgdTrace *trace,
                                    size_t index,
                                    struct SepgdRecord *record);

// Length of the final weight vector, or 0 for NULL.
//
// # Safety
// `trace` must be NULL or a live handle.
size_t sepgd_trace_dim(const struct SepgdTrace *trace);

// Copies the final iterate into `w` (length `dim`, which must match).
//
// # Safety
// `trace` must be a live handle and `w` point to `dim` doubles.
enum SepgdStatus sepgd_trace_final_weights(const struct SepgdTrace *trace, double *w, size_t dim);

// Writes `t,loss,eta,S,grad_norm,w_norm` rows.
//
// # Safety
// `trace` must be a live handle and `path` a NUL-terminated string.
enum SepgdStatus sepgd_trace_write_csv(const struct SepgdTrace *trace, const char *path);

// Releases a trace. NULL is ignored.
//
// # Safety
// `trace` must be NULL or a handle from this library not yet freed.
void sepgd_trace_free(struct SepgdTrace *trace);

// Block plan with `ε_k = eps0/2^k` down to `target_eps`, plus one further block.
//
// # Safety
// `out` must be valid for one write.
enum SepgdStatus sepgd_block_plan_new(size_t n,
                                      double gamma,
                                      double eps0,
                                      double delta,
                                      double target_eps,
                                      struct SepgdBlockPlan **out);

// Number of blocks, or 0 for NULL.
//
// # Safety
// `plan` must be NULL or a live handle.
size_t sepgd_block_plan_len(const struct SepgdBlockPlan *plan);

// Index of the block whose tolerance reaches the target.
//
// # Safety
// `plan` must be NULL or a live handle.
size_t sepgd_block_plan_k_eps(const struct SepgdBlockPlan *plan);

// Copies block `k` into `block`.
//
// # Safety
// `plan` must be a live handle and `block` valid for one write.
enum SepgdStatus sepgd_block_plan_block(const struct SepgdBlockPlan *plan,
                                        size_t k,
                                        struct SepgdBlock *block);

// Releases a plan. NULL is ignored.
//
// # Safety
// `plan` must be NULL or a handle from this library not yet freed.
void sepgd_block_plan_free(struct SepgdBlockPlan *plan);

// Block SGD over the whole plan. With `every_step` the full loss is
// evaluated at every iterate; otherwise only until the outcome is decided.
// The trace keeps every `record_stride`-th iterate (0 means 1).
//
// # Safety
// `out` and `summary` must each be valid for one write.
enum SepgdStatus sepgd_run_block_sgd(const struct SepgdDataset *data,
                                     const struct SepgdBlockPlan *plan,
                                     uint64_t seed,
                                     bool every_step,
                                     size_t record_stride,
                                     struct SepgdTrace **out,
                                     struct SepgdBlockSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEPGD_H */
