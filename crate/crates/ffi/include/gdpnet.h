#ifndef GDPNET_H
#define GDPNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum {
  GDP_STATUS_OK = 0,
  GDP_STATUS_NULL_POINTER = 1,
  GDP_STATUS_INVALID_ARGUMENT = 2,
  GDP_STATUS_IO = 3,
  GDP_STATUS_PARSE = 4,
  GDP_STATUS_RUNTIME = 5,
  GDP_STATUS_BUFFER_TOO_SMALL = 6,
  GDP_STATUS_PANIC = 7,
} GdpStatus;

/**
 * Opaque graph handle.
 */
typedef struct GdpGraph GdpGraph;

/**
 * Opaque handle to trained or initialized parameters plus their configuration.
 */
typedef struct GdpModel GdpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, or NULL. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *gdp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gdp_version(void);

/**
 * Planted-partition graph with a stratified 60/20/20 split.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
GdpStatus gdp_graph_planted_partition(size_t n,
                                      size_t classes,
                                      double p_in,
                                      double p_out,
                                      size_t dim,
                                      double signal_strength,
                                      uint64_t seed,
                                      GdpGraph **out);

/**
 * Loads a JSON graph; inputs without masks get a split drawn from `split_seed`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
GdpStatus gdp_graph_load_json(const char *path, uint64_t split_seed, GdpGraph **out);

/**
 * # Safety
 * `graph` must be a live handle and `path` a NUL-terminated string.
 */
GdpStatus gdp_graph_save_json(const GdpGraph *graph, const char *path);

/**
 * Copy of `graph` with `round(rate·|E|)` added cross-class edges.
 *
 * # Safety
 * `graph` must be a live handle and `out` writable.
 */
GdpStatus gdp_graph_inject_edge_noise(const GdpGraph *graph,
                                      double rate,
                                      uint64_t seed,
                                      GdpGraph **out);

/**
 * Number of nodes, or 0 for a null handle.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t gdp_graph_num_nodes(const GdpGraph *graph);

/**
 * Number of undirected edges, or 0 for a null handle.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t gdp_graph_num_edges(const GdpGraph *graph);

/**
 * # Safety
 * `graph` must be null or a handle not yet freed.
 */
void gdp_graph_free(GdpGraph *graph);

/**
 * Trains on `graph`. `config_json` may be NULL for defaults or a JSON object
 * of configuration overrides; `seed` always wins over any seed it contains.
 *
 * # Safety
 * `graph` must be a live handle, `config_json` null or NUL-terminated, `out` writable.
 */
GdpStatus gdp_model_train(const GdpGraph *graph,
                          const char *config_json,
                          uint64_t seed,
                          GdpModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
GdpStatus gdp_model_load(const char *path, GdpModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
GdpStatus gdp_model_save(const GdpModel *model, const char *path);

/**
 * Micro-F1 on `split` (0 train, 1 val, 2 test). With `select_all` the policy
 * is bypassed and every neighbor is kept.
 *
 * # Safety
 * Handles must be live and `out_f1` writable.
 */
GdpStatus gdp_model_evaluate(const GdpModel *model,
                             const GdpGraph *graph,
                             uint32_t split,
                             bool select_all,
                             double *out_f1);

/**
 * Neighbors of `node` kept by the policy. Writes up to `capacity` ids into
 * `ids` and the full count into `out_len`; returns `BufferTooSmall` (with
 * `out_len` set) when `capacity` is insufficient.
 *
 * # Safety
 * Handles must be live, `ids` valid for `capacity` writes (may be null when
 * `capacity` is 0) and `out_len` writable.
 */
GdpStatus gdp_model_select(const GdpModel *model,
                           const GdpGraph *graph,
                           size_t node,
                           size_t *ids,
                           size_t capacity,
                           size_t *out_len);

/**
 * Graph keeping edge {v, u} iff either endpoint's policy keeps the other.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
GdpStatus gdp_model_denoise(const GdpModel *model, const GdpGraph *graph, GdpGraph **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void gdp_model_free(GdpModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GDPNET_H */
