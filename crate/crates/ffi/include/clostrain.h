#ifndef CLOSTRAIN_H
#define CLOSTRAIN_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Written for commodities whose route crosses no spine.
 */
#define CLOSTRAIN_NO_SPINE -1

typedef enum ClostrainStatus {
  CLOSTRAIN_STATUS_OK = 0,
  CLOSTRAIN_STATUS_NULL_POINTER = 1,
  CLOSTRAIN_STATUS_INVALID_ARGUMENT = 2,
  CLOSTRAIN_STATUS_UNROUTABLE = 3,
  CLOSTRAIN_STATUS_TOO_LARGE = 4,
  CLOSTRAIN_STATUS_CONFIG = 5,
  CLOSTRAIN_STATUS_RUNTIME = 6,
  CLOSTRAIN_STATUS_INVARIANT = 7,
  CLOSTRAIN_STATUS_PANIC = 8,
} ClostrainStatus;

typedef enum ClostrainScheme {
  CLOSTRAIN_SCHEME_GREEDY = 0,
  CLOSTRAIN_SCHEME_ECMP = 1,
  CLOSTRAIN_SCHEME_EDGE_COLORING = 2,
  CLOSTRAIN_SCHEME_ANNEALING = 3,
  CLOSTRAIN_SCHEME_EXACT = 4,
} ClostrainScheme;

typedef struct ClostrainCommodities ClostrainCommodities;

typedef struct ClostrainTopology ClostrainTopology;

/**
 * A GPU: ToR, host within the ToR, GPU within the host.
 */
typedef struct ClostrainEndpoint {
  size_t tor;
  size_t host;
  size_t gpu;
} ClostrainEndpoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Valid until the next call on the same thread.
 */
const char *clostrain_last_error(void);

/**
 * Static description of a status code.
 */
const char *clostrain_status_str(enum ClostrainStatus status);

/**
 * Creates a fabric; writes the topology handle to `out`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum ClostrainStatus clostrain_topology_new(size_t spines,
                                            size_t tors,
                                            size_t hosts_per_tor,
                                            size_t nics_per_host,
                                            double link_capacity,
                                            struct ClostrainTopology **out);

/**
 * Fails `k` more live spines, chosen by `seed`.
 *
 * # Safety
 * `topo` must be a live handle from [`clostrain_topology_new`].
 */
enum ClostrainStatus clostrain_topology_fail_spines(struct ClostrainTopology *topo,
                                                    size_t k,
                                                    uint64_t seed);

/**
 * Number of live spines, 0 for a null handle.
 *
 * # Safety
 * `topo` must be null or a live handle.
 */
size_t clostrain_topology_live_spines(const struct ClostrainTopology *topo);

/**
 * # Safety
 * `topo` must be null or a live handle; it is invalid afterwards.
 */
void clostrain_topology_free(struct ClostrainTopology *topo);

/**
 * An empty commodity list.
 */
struct ClostrainCommodities *clostrain_commodities_new(void);

/**
 * Appends a commodity; its id is its position in the list.
 *
 * # Safety
 * `list` must be a live handle from [`clostrain_commodities_new`].
 */
enum ClostrainStatus clostrain_commodities_push(struct ClostrainCommodities *list,
                                                struct ClostrainEndpoint src,
                                                struct ClostrainEndpoint dst,
                                                uint64_t volume);

/**
 * # Safety
 * `list` must be null or a live handle.
 */
size_t clostrain_commodities_len(const struct ClostrainCommodities *list);

/**
 * # Safety
 * `list` must be null or a live handle; it is invalid afterwards.
 */
void clostrain_commodities_free(struct ClostrainCommodities *list);

/**
 * Routes every commodity with `scheme`.
 *
 * Writes one spine per commodity to `spines_out` ([`CLOSTRAIN_NO_SPINE`] for
 * intra-rack and intra-host commodities) and, if `max_load_out` is not null,
 * the highest ToR↔spine link load.
 *
 * # Safety
 * Handles must be live; `spines_out` must hold `clostrain_commodities_len(list)` entries.
 */
enum ClostrainStatus clostrain_assign(const struct ClostrainTopology *topo,
                                      const struct ClostrainCommodities *list,
                                      enum ClostrainScheme scheme,
                                      uint64_t seed,
                                      int64_t *spines_out,
                                      uint32_t *max_load_out);

/**
 * Max-min fair rates for the commodities on the given spines.
 *
 * `spines[i]` is ignored for commodities that stay inside a rack.
 * Intra-host commodities get `INFINITY`.
 *
 * # Safety
 * Handles must be live; `spines` and `rates_out` must hold `clostrain_commodities_len(list)` entries.
 */
enum ClostrainStatus clostrain_waterfill(const struct ClostrainTopology *topo,
                                         const struct ClostrainCommodities *list,
                                         const int64_t *spines,
                                         double *rates_out);

/**
 * Runs a scenario given as TOML text and writes the result CSV to `out_path`,
 * with the summary JSON (and per-flow trace if `trace` is nonzero) beside it.
 *
 * # Safety
 * Both strings must be valid NUL-terminated UTF-8.
 */
enum ClostrainStatus clostrain_run_config(const char *config_toml, const char *out_path, int trace);

/**
 * Library version, NUL-terminated.
 */
const char *clostrain_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLOSTRAIN_H */
