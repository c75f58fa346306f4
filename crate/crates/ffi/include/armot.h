#ifndef ARMOT_H
#define ARMOT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum ArmotStatus {
  ARMOT_STATUS_OK = 0,
  ARMOT_STATUS_NULL_POINTER = 1,
  ARMOT_STATUS_INVALID_INPUT = 2,
  ARMOT_STATUS_SHAPE = 3,
  ARMOT_STATUS_NON_FINITE = 4,
  ARMOT_STATUS_UNDEFINED = 5,
  ARMOT_STATUS_PARSE = 6,
  ARMOT_STATUS_IO = 7,
  ARMOT_STATUS_PANIC = 8,
} ArmotStatus;

// Accumulates expressions for tracking evaluation.
typedef struct ArmotEvaluator ArmotEvaluator;

// Aggregated tracking metrics. MOTA and IDF1 are only meaningful when the
// matching `*_defined` flag is set.
typedef struct ArmotMetrics {
  double hota;
  double det_a;
  double ass_a;
  double mota;
  double idf1;
  bool mota_defined;
  bool idf1_defined;
  size_t expressions;
} ArmotMetrics;

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *armot_last_error(void);

void armot_clear_error(void);

// Library version as a static NUL-terminated string.
const char *armot_version(void);

// Forward DFT of `n` complex samples (radix-2 FFT when `n` is a power of
// two). Outputs may alias the inputs.
//
// # Safety
// All four arrays must hold `n` values.
enum ArmotStatus armot_dft(const double *re,
                           const double *im,
                           size_t n,
                           double *out_re,
                           double *out_im);

// Inverse DFT keeping the real part. The largest discarded imaginary
// magnitude is written to `max_imag_residue` when it is non-null.
//
// # Safety
// `re`, `im` and `out` must hold `n` values.
enum ArmotStatus armot_idft(const double *re,
                            const double *im,
                            size_t n,
                            double *out,
                            double *max_imag_residue);

// Circular convolution of two length-`n` real signals.
//
// # Safety
// `x`, `h` and `out` must hold `n` values.
enum ArmotStatus armot_circular_convolve(const double *x, const double *h, size_t n, double *out);

// Minimum-cost assignment of a `rows × cols` cost matrix. `col_of_row[i]`
// receives the column matched to row `i`, or -1.
//
// # Safety
// `cost` must hold `rows * cols` values and `col_of_row` `rows` values.
enum ArmotStatus armot_hungarian(const double *cost,
                                 size_t rows,
                                 size_t cols,
                                 int64_t *col_of_row,
                                 double *total);

// Focal contrastive loss of a `rows × cols` similarity matrix with values
// in (0, 1); `labels` holds 1 for referred pairs and 0 otherwise.
//
// # Safety
// `chi` and `labels` must hold `rows * cols` values.
enum ArmotStatus armot_actl_loss(const double *chi,
                                 const uint8_t *labels,
                                 size_t rows,
                                 size_t cols,
                                 double gamma,
                                 double *loss);

// IoU and generalized IoU of two `(cx, cy, w, h)` boxes.
//
// # Safety
// `a` and `b` must point to 4 values.
enum ArmotStatus armot_iou_giou(const double *a, const double *b, double *iou, double *giou);

// Strict decision rule with the default thresholds: class score above
// 0.7 and referring score above 0.5.
bool armot_select_referred(double class_score, double referring_score);

// New empty evaluator; release it with [`armot_evaluator_free`].
struct ArmotEvaluator *armot_evaluator_new(void);

// # Safety
// `ev` must come from [`armot_evaluator_new`] and not be used afterwards.
// Null is ignored.
void armot_evaluator_free(struct ArmotEvaluator *ev);

// Adds one expression given the text of its ground-truth and prediction
// MOT files.
//
// # Safety
// `ev` must be a live evaluator; the strings must be NUL-terminated.
enum ArmotStatus armot_evaluator_add(struct ArmotEvaluator *ev,
                                     const char *name,
                                     const char *gt_mot,
                                     const char *pred_mot);

// Metrics averaged over every added expression.
//
// # Safety
// `ev` must be a live evaluator and `out` writable.
enum ArmotStatus armot_evaluator_compute(const struct ArmotEvaluator *ev, struct ArmotMetrics *out);

#endif  /* ARMOT_H */
