#ifndef PUCL_H
#define PUCL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PuclStatus {
  PUCL_STATUS_OK = 0,
  PUCL_STATUS_NULL_POINTER = 1,
  PUCL_STATUS_INVALID_ARGUMENT = 2,
  PUCL_STATUS_DIM_MISMATCH = 3,
  PUCL_STATUS_NON_FINITE = 4,
  PUCL_STATUS_EMPTY_INPUT = 5,
  PUCL_STATUS_BUFFER_TOO_SMALL = 6,
  PUCL_STATUS_PARSE = 7,
  PUCL_STATUS_PANIC = 8,
  PUCL_STATUS_INTERNAL = 9,
} PuclStatus;

typedef enum PuclLossKind {
  PUCL_LOSS_KIND_SSCL = 0,
  PUCL_LOSS_KIND_SCL_PU = 1,
  PUCL_LOSS_KIND_PUCL = 2,
  PUCL_LOSS_KIND_SCL = 3,
  PUCL_LOSS_KIND_MCL = 4,
  PUCL_LOSS_KIND_DCL = 5,
} PuclLossKind;

typedef enum PuclActivation {
  PUCL_ACTIVATION_RELU = 0,
  PUCL_ACTIVATION_TANH = 1,
  PUCL_ACTIVATION_IDENTITY = 2,
} PuclActivation;

// Opaque encoder handle.
typedef struct PuclEncoder PuclEncoder;

// Opaque linear head handle.
typedef struct PuclHead PuclHead;

// Terms of a PU risk estimate.
typedef struct PuclRisk {
  double r_p_plus;
  double r_p_minus;
  double r_u_minus;
  double negative_part;
  double risk;
  bool clipped;
} PuclRisk;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *pucl_version(void);

// Message of the last failed call on this thread. Returns the buffer size needed,
// including the terminator; the message is copied only when `cap` is large enough.
//
// # Safety
// `buf` must be valid for `cap` writes, or null with `cap == 0`.
uintptr_t pucl_last_error_message(char *buf, uintptr_t cap);

// Scale factor `pi (1 - pi) / (1 + gamma)` of the naive supervised loss bias.
double pucl_kappa_pu(double pi, double gamma);

// True when `gamma <= 2 pi - 1`.
bool pucl_breakdown_violated(double pi, double gamma);

// Flip rates of treating unlabeled rows as negatives.
//
// # Safety
// `xi_p` and `xi_n` must be valid for one write each.
enum PuclStatus pucl_noise_rates(double pi, double gamma, double *xi_p, double *xi_n);

// Contrastive loss of a two-view batch. Row `i` of `z1` and row `i` of `z2` are views of
// source `i`; `labeled[i]` marks labeled positives; `full_labels` may be null except for
// `SCL`. `grad_out` receives `2 * batch * dim` values: the gradient for `z1` rows, then `z2`.
//
// # Safety
// `z1` and `z2` must hold `batch * dim` values, `labeled` and `full_labels` (if non-null)
// `batch` bytes, `grad_out` room for `2 * batch * dim` values and `value` one write.
enum PuclStatus pucl_loss(enum PuclLossKind kind,
                          double lambda,
                          const double *z1,
                          const double *z2,
                          uintptr_t batch,
                          uintptr_t dim,
                          const uint8_t *labeled,
                          const uint8_t *full_labels,
                          double tau,
                          double *value,
                          double *grad_out);

// Creates a randomly initialized encoder with layer widths `widths[0..n_widths]`.
//
// # Safety
// `widths` must hold `n_widths` values; `out` must be valid for one write.
enum PuclStatus pucl_encoder_new(const uintptr_t *widths,
                                 uintptr_t n_widths,
                                 enum PuclActivation activation,
                                 bool normalize,
                                 uint64_t seed,
                                 struct PuclEncoder **out);

// Restores an encoder from its JSON checkpoint.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be valid for one write.
enum PuclStatus pucl_encoder_from_json(const char *json, struct PuclEncoder **out);

// Writes the JSON checkpoint into `buf` and the required size (with terminator) into
// `needed`. Returns `BUFFER_TOO_SMALL` without writing when `cap` is insufficient.
//
// # Safety
// `enc` must come from this library; `buf` valid for `cap` writes; `needed` for one write.
enum PuclStatus pucl_encoder_to_json(const struct PuclEncoder *enc,
                                     char *buf,
                                     uintptr_t cap,
                                     uintptr_t *needed);

// # Safety
// `enc` must come from this library or be null.
uintptr_t pucl_encoder_input_dim(const struct PuclEncoder *enc);

// # Safety
// `enc` must come from this library or be null.
uintptr_t pucl_encoder_output_dim(const struct PuclEncoder *enc);

// Embeds `rows` inputs of the encoder's input width into `out` (`rows * output_dim` values).
//
// # Safety
// `enc` must come from this library; `x` must hold `rows * input_dim` values; `out`
// room for `rows * output_dim` values.
enum PuclStatus pucl_encoder_encode(const struct PuclEncoder *enc,
                                    const double *x,
                                    uintptr_t rows,
                                    double *out);

// Trains the encoder in place on PU rows; `labeled[i] != 0` marks labeled positives.
// `final_loss` (may be null) receives the last epoch's mean loss.
//
// # Safety
// `enc` must come from this library; `x` must hold `rows * input_dim` values; `labeled`
// `rows` bytes.
enum PuclStatus pucl_encoder_train(struct PuclEncoder *enc,
                                   const double *x,
                                   uintptr_t rows,
                                   const uint8_t *labeled,
                                   enum PuclLossKind kind,
                                   double lambda,
                                   double lr,
                                   uintptr_t epochs,
                                   uintptr_t batch_size,
                                   double tau,
                                   double aug_sigma,
                                   uint64_t seed,
                                   double *final_loss);

// # Safety
// `enc` must come from this library and not be used afterwards, or be null.
void pucl_encoder_free(struct PuclEncoder *enc);

// PU pseudo-labeling of embeddings. Writes one 0/1 label per row, both centroids
// (`dim` values each, may be null) and the final potential (may be null).
//
// # Safety
// `z` must hold `rows * dim` values, `labeled` and `labels_out` `rows` bytes; centroid
// buffers room for `dim` values.
enum PuclStatus pucl_pupl(const double *z,
                          uintptr_t rows,
                          uintptr_t dim,
                          const uint8_t *labeled,
                          uint64_t seed,
                          uintptr_t max_iter,
                          double tol,
                          uint8_t *labels_out,
                          double *mu_p_out,
                          double *mu_n_out,
                          double *potential_out);

// Creates a head with weights `w[0..dim]` and bias `b`.
//
// # Safety
// `w` must hold `dim` values; `out` must be valid for one write.
enum PuclStatus pucl_head_new(const double *w, uintptr_t dim, double b, struct PuclHead **out);

// Trains a logistic head on 0/1 labels by full-batch gradient descent.
//
// # Safety
// `z` must hold `rows * dim` values, `labels` `rows` bytes; `out` valid for one write.
enum PuclStatus pucl_head_train_ce(const double *z,
                                   uintptr_t rows,
                                   uintptr_t dim,
                                   const uint8_t *labels,
                                   double lr,
                                   uintptr_t epochs,
                                   double l2,
                                   uint64_t seed,
                                   struct PuclHead **out);

// Copies the weights (`dim` values) and bias.
//
// # Safety
// `head` must come from this library; `w` room for `dim` values; `b` one write.
enum PuclStatus pucl_head_params(const struct PuclHead *head, double *w, uintptr_t dim, double *b);

// Writes one 0/1 prediction per row.
//
// # Safety
// `head` must come from this library; `z` must hold `rows * dim` values; `out` `rows` bytes.
enum PuclStatus pucl_head_predict(const struct PuclHead *head,
                                  const double *z,
                                  uintptr_t rows,
                                  uintptr_t dim,
                                  uint8_t *out);

// Unbiased (`non_negative == false`) or non-negative PU risk of `head` with logistic loss.
//
// # Safety
// `head` must come from this library; `z_p` must hold `n_p * dim` values, `z_u`
// `n_u * dim`; `out` valid for one write.
enum PuclStatus pucl_head_pu_risk(const struct PuclHead *head,
                                  const double *z_p,
                                  uintptr_t n_p,
                                  const double *z_u,
                                  uintptr_t n_u,
                                  uintptr_t dim,
                                  double pi,
                                  bool non_negative,
                                  struct PuclRisk *out);

// # Safety
// `head` must come from this library and not be used afterwards, or be null.
void pucl_head_free(struct PuclHead *head);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PUCL_H */
