#ifndef HME_H
#define HME_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HmeStatus {
  HME_STATUS_OK = 0,
  HME_STATUS_NULL_POINTER = 1,
  HME_STATUS_INVALID_UTF8 = 2,
  HME_STATUS_CONFIG = 3,
  HME_STATUS_NUMERICAL = 4,
  HME_STATUS_IO = 5,
  HME_STATUS_BUFFER_TOO_SMALL = 6,
  HME_STATUS_PANIC = 7,
} HmeStatus;

// Parsed run configuration.
typedef struct HmeConfig HmeConfig;

// Joint density over lattice points `(d, c)`.
typedef struct HmeGrid HmeGrid;

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *hme_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *hme_version(void);

// Parses a TOML configuration document.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a writable pointer.
enum HmeStatus hme_config_parse(const char *text, struct HmeConfig **out);

// Reads and parses a configuration file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum HmeStatus hme_config_load(const char *path, struct HmeConfig **out);

// Overrides the final time and revalidates.
//
// # Safety
// `cfg` must be a live handle.
enum HmeStatus hme_config_set_tau(struct HmeConfig *cfg, double tau);

// Overrides the SSA seed and trajectory count.
//
// # Safety
// `cfg` must be a live handle.
enum HmeStatus hme_config_set_ssa(struct HmeConfig *cfg, uint64_t seed, uint64_t n_traj);

// # Safety
// `cfg` must be null or a handle not yet freed.
void hme_config_free(struct HmeConfig *cfg);

// Integrates the moment system and returns the reconstructed joint density.
//
// # Safety
// `cfg` must be a live handle and `out` a writable pointer.
enum HmeStatus hme_solve_hme(const struct HmeConfig *cfg, struct HmeGrid **out);

// Integrates the master equation on the full lattice.
//
// # Safety
// `cfg` must be a live handle and `out` a writable pointer.
enum HmeStatus hme_solve_cme(const struct HmeConfig *cfg, struct HmeGrid **out);

// Empirical law of simulated trajectories.
//
// # Safety
// `cfg` must be a live handle and `out` a writable pointer.
enum HmeStatus hme_simulate_ssa(const struct HmeConfig *cfg, struct HmeGrid **out);

// Reads a grid file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum HmeStatus hme_grid_read(const char *path, struct HmeGrid **out);

// Writes a grid file.
//
// # Safety
// `g` must be a live handle and `path` a NUL-terminated string.
enum HmeStatus hme_grid_write(const struct HmeGrid *g, const char *path);

// Number of stored points; 0 for a null handle.
//
// # Safety
// `g` must be null or a live handle.
size_t hme_grid_len(const struct HmeGrid *g);

// # Safety
// `g` must be null or a live handle.
size_t hme_grid_slow_dims(const struct HmeGrid *g);

// # Safety
// `g` must be null or a live handle.
size_t hme_grid_fast_dims(const struct HmeGrid *g);

// # Safety
// `g` must be a live handle and `out` a writable pointer.
enum HmeStatus hme_grid_total_mass(const struct HmeGrid *g, double *out);

// Copies the grid in lexicographic order. `d` receives `len * slow_dims`
// values, `c` receives `len * fast_dims` and `p` receives `len`, where
// `capacity` is the number of points the buffers can hold.
//
// # Safety
// The buffers must be writable for the sizes above.
enum HmeStatus hme_grid_copy(const struct HmeGrid *g,
                             int64_t *d,
                             int64_t *c,
                             double *p,
                             size_t capacity);

// Total variation distance between two grids.
//
// # Safety
// `a` and `b` must be live handles and `out` a writable pointer.
enum HmeStatus hme_total_variation(const struct HmeGrid *a, const struct HmeGrid *b, double *out);

// # Safety
// `g` must be null or a handle not yet freed.
void hme_grid_free(struct HmeGrid *g);

#endif  /* HME_H */
