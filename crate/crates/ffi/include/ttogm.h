#ifndef TTOGM_H
#define TTOGM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Status code returned by every fallible function.
typedef enum TtogmStatus {
  TTOGM_OK = 0,
  // Null pointer, non-UTF-8 string or out-of-range enum value.
  TTOGM_ERR_INVALID_ARGUMENT = 1,
  TTOGM_ERR_INVALID_CONFIG = 2,
  // Missing or unreadable file.
  TTOGM_ERR_IO = 3,
  // Malformed input data or a violated precondition.
  TTOGM_ERR_DATA = 4,
  // Registration found no usable correspondences.
  TTOGM_ERR_REGISTRATION = 5,
  // The external cleaning model failed.
  TTOGM_ERR_MODEL = 6,
  TTOGM_ERR_PANIC = 7,
} TtogmStatus;

// Cell class scored by [`ttogm_map_iou`].
typedef enum TtogmIouClass {
  TTOGM_IOU_OCCUPIED = 0,
  TTOGM_IOU_UNOCCUPIED = 1,
} TtogmIouClass;

// Discretized map with codes 0 (free), 100 (occupied), 255 (unknown), row 0 at the top.
typedef struct TtogmMap TtogmMap;

// Streaming mapper. Created by [`ttogm_mapper_new`].
typedef struct TtogmMapper TtogmMapper;

// Planar part of a pose: meters and radians.
typedef struct TtogmPose2D {
  double x;
  double y;
  double yaw;
} TtogmPose2D;

// Grid geometry: cells, meters per cell and the world position of the
// lower-left corner.
typedef struct TtogmMapInfo {
  size_t width;
  size_t height;
  double resolution;
  double origin_x;
  double origin_y;
} TtogmMapInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none failed.
// The pointer stays valid until the next failing call on the same thread.
const char *ttogm_last_error(void);

// Library version as a static NUL-terminated string.
const char *ttogm_version(void);

// Creates a mapper. `config_toml` is a TOML pipeline configuration or null for
// the defaults.
enum TtogmStatus ttogm_mapper_new(const char *config_toml, struct TtogmMapper **out);

void ttogm_mapper_free(struct TtogmMapper *mapper);

// Feeds one scan of `count` points laid out as `x, y, z, intensity` doubles
// (sensor frame, intensity in [0, 1]). Scans are numbered in call order.
// On success the estimated pose is written to `pose` when it is not null.
enum TtogmStatus ttogm_mapper_process(struct TtogmMapper *mapper,
                                      const double *xyzi,
                                      size_t count,
                                      struct TtogmPose2D *pose);

// Number of scans processed so far.
uint64_t ttogm_mapper_scan_count(const struct TtogmMapper *mapper);

// Filtered (uncleaned) snapshot of the current map.
enum TtogmStatus ttogm_mapper_snapshot(const struct TtogmMapper *mapper, struct TtogmMap **out);

// Finishes mapping and returns the published map (cleaned when a cleaner is
// configured). The mapper accepts no further scans but must still be freed.
enum TtogmStatus ttogm_mapper_finish(struct TtogmMapper *mapper, struct TtogmMap **out);

// Reads a PGM map with its metadata sidecar.
enum TtogmStatus ttogm_map_read(const char *path, struct TtogmMap **out);

// Writes the map as PGM plus metadata sidecar.
enum TtogmStatus ttogm_map_write(const struct TtogmMap *map, const char *path);

// Map of `info.width * info.height` cells copied from `codes` (image order,
// row 0 at the top). Every code must be 0, 100 or 255.
enum TtogmStatus ttogm_map_from_codes(const struct TtogmMapInfo *info,
                                      const uint8_t *codes,
                                      struct TtogmMap **out);

void ttogm_map_free(struct TtogmMap *map);

enum TtogmStatus ttogm_map_info(const struct TtogmMap *map, struct TtogmMapInfo *info);

// Borrowed pointer to the `width * height` cell codes; valid while the map lives.
const uint8_t *ttogm_map_codes(const struct TtogmMap *map);

// Cleans `map` with `cleaner` (`identity`, `morph` or `model:<path>`) using
// the default tiling and thresholds.
enum TtogmStatus ttogm_map_clean(const struct TtogmMap *map,
                                 const char *cleaner,
                                 struct TtogmMap **out);

// IoU of `map` against `truth` for one cell class (a [`TtogmIouClass`]
// value), maps aligned by identity.
enum TtogmStatus ttogm_map_iou(const struct TtogmMap *map,
                               const struct TtogmMap *truth,
                               int32_t class_,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TTOGM_H */
