#ifndef HOLIV_H
#define HOLIV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HolivStatus {
  HOLIV_STATUS_OK = 0,
  HOLIV_STATUS_NULL_POINTER = 1,
  HOLIV_STATUS_INVALID_ARGUMENT = 2,
  HOLIV_STATUS_NOT_HYPERBOLIC = 3,
  HOLIV_STATUS_BUFFER_TOO_SMALL = 4,
  HOLIV_STATUS_NOT_IRREDUCIBLE = 5,
  HOLIV_STATUS_OVER_BUDGET = 6,
  HOLIV_STATUS_NUMERICAL_FAILURE = 7,
  HOLIV_STATUS_PANIC = 8,
} HolivStatus;

// Unitary cocycle over a map.
typedef struct HolivCocycle HolivCocycle;

// Result of a Livšic solve.
typedef struct HolivLivsicReport HolivLivsicReport;

// Toral automorphism.
typedef struct HolivMap HolivMap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
//
// # Safety
// `buf` must be null or valid for `len` writable bytes.
size_t holiv_last_error(char *buf, size_t len);

// Static NUL-terminated version string.
const char *holiv_version(void);

// Builds the map with row-major integer entries `entries[0..4]`.
//
// # Safety
// `entries` must point to four `int64_t`; `out` must be valid for a write.
enum HolivStatus holiv_map_new(const int64_t *entries, struct HolivMap **out);

// # Safety
// `map` must be null or a handle from [`holiv_map_new`] not yet freed.
void holiv_map_free(struct HolivMap *map);

// Number of points fixed by the `n`-th iterate, `|det(M^n - I)|`.
//
// # Safety
// `map` must be a live handle; `out` valid for a write.
enum HolivStatus holiv_map_fixed_point_count(const struct HolivMap *map, uint32_t n, uint64_t *out);

// Cocycle from a JSON field spec (the `kind`-tagged format).
//
// # Safety
// `map` must be a live handle, `json` a NUL-terminated string, `out`
// valid for a write.
enum HolivStatus holiv_cocycle_from_json(const struct HolivMap *map,
                                         const char *json,
                                         struct HolivCocycle **out);

// Random trig-polynomial cocycle of the given rank, seeded.
//
// # Safety
// `map` must be a live handle; `out` valid for a write.
enum HolivStatus holiv_cocycle_random(const struct HolivMap *map,
                                      size_t rank,
                                      double amplitude,
                                      uint64_t seed,
                                      struct HolivCocycle **out);

// # Safety
// `c` must be null or a live cocycle handle.
void holiv_cocycle_free(struct HolivCocycle *c);

// Fiber dimension, or 0 for a null handle.
//
// # Safety
// `c` must be null or a live cocycle handle.
size_t holiv_cocycle_rank(const struct HolivCocycle *c);

// Wilson traces over primitive periodic orbits of period `<= period_max`,
// in enumeration order, written as `(re, im)` pairs into `traces`
// (`2 * capacity` doubles). `count` receives the number of orbits; when it
// exceeds `capacity` nothing is written and the status is
// `BUFFER_TOO_SMALL`.
//
// # Safety
// `c` must be a live handle, `traces` valid for `2 * capacity` doubles
// (or null with `capacity == 0`), `count` valid for a write.
enum HolivStatus holiv_wilson_traces(const struct HolivCocycle *c,
                                     uint32_t period_max,
                                     double *traces,
                                     size_t capacity,
                                     size_t *count);

// `max |W_1 - W_2|` over primitive orbits of period `<= period_max`.
//
// # Safety
// `c1`, `c2` must be live handles; `out` valid for a write.
enum HolivStatus holiv_wilson_discrepancy(const struct HolivCocycle *c1,
                                          const struct HolivCocycle *c2,
                                          uint32_t period_max,
                                          double *out);

// Runs the Livšic solver with default settings on a `grid x grid` output
// grid (`grid == 0` keeps the default).
//
// # Safety
// `c0`, `c` must be live handles; `out` valid for a write.
enum HolivStatus holiv_livsic_solve(const struct HolivCocycle *c0,
                                    const struct HolivCocycle *c,
                                    double eps_budget,
                                    size_t grid,
                                    struct HolivLivsicReport **out);

// # Safety
// `r` must be null or a live report handle.
void holiv_livsic_report_free(struct HolivLivsicReport *r);

// Sup of the transport defect, or NaN for a null handle.
//
// # Safety
// `r` must be null or a live report handle.
double holiv_livsic_report_sup_defect(const struct HolivLivsicReport *r);

// Grid side of the section, or 0 for a null handle.
//
// # Safety
// `r` must be null or a live report handle.
size_t holiv_livsic_report_grid_side(const struct HolivLivsicReport *r);

// Copies the section into `buf`: row-major nodes, `r^2` row-major entries
// per node, each as `(re, im)`. `needed` receives the number of doubles.
//
// # Safety
// `r` must be a live handle, `buf` valid for `len` doubles (or null with
// `len == 0`), `needed` valid for a write.
enum HolivStatus holiv_livsic_report_section(const struct HolivLivsicReport *r,
                                             double *buf,
                                             size_t len,
                                             size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOLIV_H */
