#ifndef MODAL_TRANSFER_H
#define MODAL_TRANSFER_H

/* Generated by cbindgen from the modal-transfer-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of an FFI call. Anything but `Ok` leaves a message for
// [`mt_last_error_message`].
typedef enum MtStatus {
  // Success.
  MT_STATUS_OK = 0,
  // A required pointer argument was null.
  MT_STATUS_NULL_ARGUMENT = 1,
  // An argument value is out of range or otherwise unusable.
  MT_STATUS_INVALID_ARGUMENT = 2,
  // Array dimensions disagree.
  MT_STATUS_SHAPE_MISMATCH = 3,
  // A quantity degenerated (zero-norm shape, zero variance, zero kernel
  // scale, overdamped mode).
  MT_STATUS_DEGENERATE = 4,
  // Required rows, classes, or samples are absent.
  MT_STATUS_MISSING_DATA = 5,
  // A numerical routine failed to converge or produced non-finite values.
  MT_STATUS_NUMERICAL = 6,
  // Text input (JSON, CSV, UTF-8) failed to parse.
  MT_STATUS_PARSE = 7,
  // File IO failed.
  MT_STATUS_IO = 8,
  // Unexpected internal failure; treat as a bug.
  MT_STATUS_INTERNAL = 9,
} MtStatus;

// A source/target transfer task built from two FRF dataset files, with the
// windowed feature grouping used by subset selection.
typedef struct MtTask MtTask;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version string of the underlying library. Static storage; do not free.
const char *mt_version(void);

// Message describing the calling thread's most recent failure, or null if
// the last call succeeded. Valid until the next `mt_` call on this thread;
// do not free.
const char *mt_last_error_message(void);

// Frees a string returned by an `mt_` function that transfers ownership
// (currently [`mt_population_summary_json`]). Null is ignored.
//
// # Safety
// `s` must be a pointer obtained from this library and not yet freed.
void mt_string_free(char *s);

// Modal assurance criterion between two mode shapes of length `len`,
// written to `out`.
//
// # Safety
// `a` and `b` must point to `len` doubles; `out` must be writable.
enum MtStatus mt_mac(const double *a, const double *b, size_t len, double *out);

// MAC matrix between two mode-shape sets sharing `sensors` rows. Shapes are
// `sensors x modes` row-major; `out` receives `source_modes x target_modes`
// row-major MAC values.
//
// # Safety
// Buffers must match the stated dimensions; `out` must hold
// `source_modes * target_modes` doubles.
enum MtStatus mt_mac_matrix(const double *source_shapes,
                            const double *target_shapes,
                            size_t sensors,
                            size_t source_modes,
                            size_t target_modes,
                            double *out);

// Maximum mean discrepancy between two row-major sample blocks with `d`
// features, using the pooled median-heuristic RBF kernel.
//
// # Safety
// `xs` must hold `ns * d` doubles and `xt` `nt * d`; `out` must be writable.
enum MtStatus mt_mmd(const double *xs,
                     size_t ns,
                     const double *xt,
                     size_t nt,
                     size_t d,
                     double *out);

// Joint MMD (marginal plus class-conditional terms) between two labeled
// sample blocks. Labels are `uint32_t` class ids; every class must appear
// in both domains.
//
// # Safety
// `xs`/`xt` must hold `ns * d` / `nt * d` doubles, `ys`/`yt` must hold
// `ns` / `nt` labels; `out` must be writable.
enum MtStatus mt_jmmd(const double *xs,
                      const uint32_t *ys,
                      size_t ns,
                      const double *xt,
                      const uint32_t *yt,
                      size_t nt,
                      size_t d,
                      double *out);

// Proxy A-distance between two sample blocks: `2 (1 - 2 err)` for a kernel
// ridge discriminator trained on a seeded random `split` fraction and
// scored on the rest, clamped to `[0, 2]`.
//
// # Safety
// `xs` must hold `ns * d` doubles and `xt` `nt * d`; `out` must be writable.
enum MtStatus mt_pad(const double *xs,
                     size_t ns,
                     const double *xt,
                     size_t nt,
                     size_t d,
                     double split,
                     uint64_t seed,
                     double *out);

// Normal-condition alignment: rescales target rows into source units so the
// target baseline matches the source baseline's per-feature moments.
// `normal_s` / `normal_t` flag baseline rows (nonzero = baseline). The
// mapped target block (`nt x d`, row-major) is written to `out`.
//
// # Safety
// `xs`/`xt` must hold `ns * d` / `nt * d` doubles, the masks `ns` / `nt`
// bytes, and `out` `nt * d` doubles.
enum MtStatus mt_nca_map_target(const double *xs,
                                const uint8_t *normal_s,
                                size_t ns,
                                const double *xt,
                                const uint8_t *normal_t,
                                size_t nt,
                                size_t d,
                                double *out);

// k-nearest-neighbour prediction with Euclidean distances. Distance ties go
// to the lowest training index, vote ties to the smallest label. Predicted
// labels for the `n_test` rows are written to `out`.
//
// # Safety
// `train_x` must hold `n_train * d` doubles, `train_y` `n_train` labels,
// `test_x` `n_test * d` doubles, and `out` `n_test` labels.
enum MtStatus mt_knn_predict(const double *train_x,
                             const uint32_t *train_y,
                             size_t n_train,
                             const double *test_x,
                             size_t n_test,
                             size_t d,
                             size_t k,
                             uint32_t *out);

// Fraction of `pred` entries equal to `truth`, written to `out`.
//
// # Safety
// Both label buffers must hold `n` entries; `out` must be writable.
enum MtStatus mt_accuracy(const uint32_t *pred, const uint32_t *truth, size_t n, double *out);

// Per-mode damage-sensitivity curves of a uniform fixed-fixed chain:
// min-max normalized |mode shape| against normalized frequency drop when
// each of the `dof - 1` inter-mass springs is weakened by `reduction`.
// Curves for 0-based `mode` are written to two `dof - 1` buffers.
//
// # Safety
// `out_displacement` and `out_frequency_shift` must each hold `dof - 1`
// doubles.
enum MtStatus mt_sensitivity_curve(size_t dof,
                                   double reduction,
                                   size_t mode,
                                   double *out_displacement,
                                   double *out_frequency_shift);

// Samples a structure population and returns a JSON summary string:
// `[{"index", "ground_dofs", "n_samples", "n_features",
// "natural_frequencies_rad_s"}]`. `config_json` is a population
// configuration document, or null for the default population. Free the
// result with [`mt_string_free`].
//
// # Safety
// `config_json`, when non-null, must be a NUL-terminated UTF-8 string;
// `out` must be writable.
enum MtStatus mt_population_summary_json(const char *config_json, char **out);

// Builds a transfer task from two FRF dataset files (`.json` or `.csv`, as
// written by the `modal-transfer ingest-frf` tool), reducing each FRF to
// `window` magnitude bins around every natural frequency. Returns null on
// failure (see [`mt_last_error_message`]); release with [`mt_task_free`].
//
// # Safety
// Both paths must be NUL-terminated UTF-8 strings.
struct MtTask *mt_task_load(const char *source_path, const char *target_path, size_t window);

// Releases a task handle. Null is ignored.
//
// # Safety
// `task` must come from [`mt_task_load`] and not be used afterwards.
void mt_task_free(struct MtTask *task);

// Basic dimensions of a task: feature count, source rows, target rows, and
// number of windowed modes. Null out-pointers are skipped.
//
// # Safety
// `task` must be a live handle from [`mt_task_load`].
enum MtStatus mt_task_info(const struct MtTask *task,
                           size_t *out_features,
                           size_t *out_source_rows,
                           size_t *out_target_rows,
                           size_t *out_modes);

// Mean MAC between the task's source and target modal models under
// best-match mode pairing, written to `out`.
//
// # Safety
// `task` must be a live handle; `out` must be writable.
enum MtStatus mt_task_modal_similarity(const struct MtTask *task, double *out);

// Exhaustive subset selection on a task: picks `subset_size` of the
// windowed mode groups trading cross-validated source 1-NN loss against
// modal similarity with weight `lambda`. Selected source and paired target
// group indices are written to the two `subset_size`-length buffers and the
// combined score to `out_score` (null skips it).
//
// # Safety
// `task` must be a live handle; index buffers must hold `subset_size`
// entries.
enum MtStatus mt_task_select_features(const struct MtTask *task,
                                      size_t subset_size,
                                      double lambda,
                                      size_t folds,
                                      size_t *out_source_groups,
                                      size_t *out_target_groups,
                                      double *out_score);

// Runs one named method on a task and writes `[source accuracy, target
// accuracy, joint MMD]` to the 3-element `out_metrics` buffer. Method names
// match the CLI: `noDA`, `NCA`, `PCA`, `TCA`, `BDA`, `TFC`, `TFC+TCA`,
// `TFC+BDA` (case-insensitive). `subset_size`/`lambda` parameterize the
// TFC family, `latent_dim`/`latent_mu` the kernel methods; nonzero `loo`
// evaluates leave-one-out instead of the stored train/test split.
//
// # Safety
// `task` must be a live handle, `method` a NUL-terminated string, and
// `out_metrics` a writable 3-element double buffer.
enum MtStatus mt_task_run_method(const struct MtTask *task,
                                 const char *method,
                                 size_t subset_size,
                                 double lambda,
                                 size_t latent_dim,
                                 double latent_mu,
                                 uint8_t loo,
                                 double *out_metrics);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODAL_TRANSFER_H */
