#ifndef CMFLOW_H
#define CMFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every `cmf_*` function.
 */
typedef enum CmfStatus {
  CMF_STATUS_OK = 0,
  CMF_STATUS_NULL_POINTER = 1,
  CMF_STATUS_INVALID_ARGUMENT = 2,
  CMF_STATUS_CONFIG = 3,
  CMF_STATUS_NUMERIC = 4,
  CMF_STATUS_IO = 5,
  CMF_STATUS_DATA = 6,
  CMF_STATUS_PANIC = 7,
} CmfStatus;

/**
 * Opaque handle to a trained injective flow.
 */
typedef struct CmfFlow CmfFlow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cmf_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next `cmf_*` call on the same thread.
 */
const char *cmf_last_error_message(void);

/**
 * Loads a checkpoint (JSON or binary) from `path`.
 */
enum CmfStatus cmf_flow_load(const char *path, struct CmfFlow **out);

/**
 * Creates the identity embedding of `latent_dim` into `data_dim` dimensions.
 */
enum CmfStatus cmf_flow_new_identity(size_t latent_dim, size_t data_dim, struct CmfFlow **out);

/**
 * Releases a handle. NULL is ignored.
 */
void cmf_flow_free(struct CmfFlow *flow);

/**
 * Writes the latent and data dimensions.
 */
enum CmfStatus cmf_flow_dims(const struct CmfFlow *flow, size_t *latent_dim, size_t *data_dim);

/**
 * Maps a latent point (length d) to data space (length D).
 */
enum CmfStatus cmf_flow_embed(const struct CmfFlow *flow,
                              const double *z,
                              size_t z_len,
                              double *x_out,
                              size_t x_len);

/**
 * Maps a data point (length D) to its latent coordinates (length d).
 */
enum CmfStatus cmf_flow_project(const struct CmfFlow *flow,
                                const double *x,
                                size_t x_len,
                                double *z_out,
                                size_t z_len);

/**
 * Model log-density of a data point, evaluated at its projection.
 */
enum CmfStatus cmf_flow_log_prob(const struct CmfFlow *flow,
                                 const double *x,
                                 size_t x_len,
                                 double *out);

/**
 * Jacobian of the embedding at latent `z`, D×d row-major.
 */
enum CmfStatus cmf_flow_jacobian(const struct CmfFlow *flow,
                                 const double *z,
                                 size_t z_len,
                                 double *out,
                                 size_t out_len);

/**
 * Metric tensor JᵀJ at latent `z`, d×d row-major.
 */
enum CmfStatus cmf_flow_metric_tensor(const struct CmfFlow *flow,
                                      const double *z,
                                      size_t z_len,
                                      double *out,
                                      size_t out_len);

/**
 * Draws `n` samples into an n×D row-major buffer. Identical seeds give
 * identical samples.
 */
enum CmfStatus cmf_flow_sample(const struct CmfFlow *flow,
                               size_t n,
                               uint64_t seed,
                               double *out,
                               size_t out_len);

/**
 * Mean absolute cosine similarity between Jacobian columns, averaged over
 * the projections of `n` data points (n×D row-major).
 */
enum CmfStatus cmf_flow_macs(const struct CmfFlow *flow,
                             const double *x,
                             size_t n,
                             size_t x_len,
                             double *out);

/**
 * Fréchet distance between Gaussian fits of two sample sets, each row-major
 * with `dim` columns.
 */
enum CmfStatus cmf_fid_like(const double *a,
                            size_t n_a,
                            const double *b,
                            size_t n_b,
                            size_t dim,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CMFLOW_H */
