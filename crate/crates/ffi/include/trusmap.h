/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef TRUSMAP_H
#define TRUSMAP_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Status codes returned by every fallible function.
 */
typedef enum TrusStatus {
  TRUS_STATUS_OK = 0,
  TRUS_STATUS_NULL_POINTER = 1,
  TRUS_STATUS_INVALID_ARGUMENT = 2,
  TRUS_STATUS_IO = 3,
  TRUS_STATUS_PARSE = 4,
  TRUS_STATUS_REGISTRATION = 5,
  TRUS_STATUS_BUFFER_TOO_SMALL = 6,
  TRUS_STATUS_PANIC = 7,
} TrusStatus;

/*
 Voxel storage type of a volume.
 */
typedef enum TrusIntensityType {
  TRUS_INTENSITY_TYPE_U8 = 0,
  TRUS_INTENSITY_TYPE_I16 = 1,
  TRUS_INTENSITY_TYPE_F32 = 2,
} TrusIntensityType;

/*
 A synthetic gland phantom with fiducials.
 */
typedef struct TrusPhantom TrusPhantom;

/*
 Outcome of a rigid registration.
 */
typedef struct TrusRegistration TrusRegistration;

/*
 A 3-D scalar volume with LPS geometry.
 */
typedef struct TrusVolume TrusVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL.
 The pointer stays valid until the next failing call on the same thread.
 */
const char *trus_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *trus_version(void);

/*
 Reads a MetaImage (`.mha` or `.mhd`) file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TrusStatus trus_volume_read_mha(const char *path, struct TrusVolume **out_volume);

/*
 Writes a volume as MetaImage.

 # Safety
 `volume` must come from this library; `path` must be NUL-terminated.
 */
enum TrusStatus trus_volume_write_mha(const struct TrusVolume *volume, const char *path);

/*
 Builds a volume from `dims[0]*dims[1]*dims[2]` samples, x fastest.
 Samples are quantized to `ty`. The direction is the identity.

 # Safety
 `dims`, `spacing` and `origin` must point to 3 values, `data` to `len`.
 */
enum TrusStatus trus_volume_new(const size_t *dims,
                                const double *spacing,
                                const double *origin,
                                const float *data,
                                size_t len,
                                enum TrusIntensityType ty,
                                struct TrusVolume **out_volume);

/*
 Releases a volume. NULL is ignored.

 # Safety
 `volume` must come from this library and not be used afterwards.
 */
void trus_volume_free(struct TrusVolume *volume);

/*
 Grid size, spacing (mm) and origin (mm) of a volume.
 Any output pointer may be NULL.

 # Safety
 Non-null outputs must point to 3 writable values.
 */
enum TrusStatus trus_volume_geometry(const struct TrusVolume *volume,
                                     size_t *out_dims,
                                     double *out_spacing,
                                     double *out_origin);

/*
 Borrowed view of the samples, x fastest. Valid while the volume lives.

 # Safety
 `out_data` and `out_len` must be valid pointers.
 */
enum TrusStatus trus_volume_data(const struct TrusVolume *volume,
                                 const float **out_data,
                                 size_t *out_len);

/*
 Creates a phantom. `config_json` may be NULL for the defaults; otherwise
 it is a JSON object whose missing fields take default values.

 # Safety
 `config_json` must be NULL or NUL-terminated; `out_phantom` valid.
 */
enum TrusStatus trus_phantom_new(const char *config_json, struct TrusPhantom **out_phantom);

/*
 Releases a phantom. NULL is ignored.

 # Safety
 `phantom` must come from this library and not be used afterwards.
 */
void trus_phantom_free(struct TrusPhantom *phantom);

/*
 Renders the reference volume.

 # Safety
 Pointers must be valid.
 */
enum TrusStatus trus_phantom_reference(const struct TrusPhantom *phantom,
                                       struct TrusVolume **out_volume);

/*
 Renders a moving volume related to the reference by the rigid map with
 parameters `params` = (tx, ty, tz, rx, ry, rz) (mm, radians) about the
 grid centre. Motions beyond the plausibility bounds are rejected.

 # Safety
 `params` must point to 6 values; `out_volume` must be valid.
 */
enum TrusStatus trus_phantom_moving(const struct TrusPhantom *phantom,
                                    const double *params,
                                    uint64_t noise_seed,
                                    struct TrusVolume **out_volume);

/*
 Copies fiducial centres (reference frame, mm) as x,y,z triples into
 `out_xyz`, which holds `capacity` points. `out_count` always receives the
 number of fiducials; a short buffer yields `BufferTooSmall`.

 # Safety
 `out_xyz` must hold `3 * capacity` doubles (may be NULL if capacity is 0).
 */
enum TrusStatus trus_phantom_fiducials(const struct TrusPhantom *phantom,
                                       double *out_xyz,
                                       size_t capacity,
                                       size_t *out_count);

/*
 Registers `moving` onto `reference`. `config_json` may be NULL for the
 defaults. An unsuccessful but completed registration returns `Ok`; check
 [`trus_registration_success`]. Errors such as insufficient overlap return
 `Registration`.

 # Safety
 Handles must come from this library; `out_result` must be valid.
 */
enum TrusStatus trus_register(const struct TrusVolume *reference,
                              const struct TrusVolume *moving,
                              const char *config_json,
                              struct TrusRegistration **out_result);

/*
 Releases a registration result. NULL is ignored.

 # Safety
 `result` must come from this library and not be used afterwards.
 */
void trus_registration_free(struct TrusRegistration *result);

/*
 Whether the registration met the success criteria. False for NULL.

 # Safety
 `result` must be NULL or come from this library.
 */
bool trus_registration_success(const struct TrusRegistration *result);

/*
 Final similarity score, overlap fraction, iteration count and wall time.
 Any output pointer may be NULL.

 # Safety
 Non-null pointers must be valid.
 */
enum TrusStatus trus_registration_metrics(const struct TrusRegistration *result,
                                          double *out_score,
                                          double *out_overlap,
                                          size_t *out_iterations,
                                          double *out_seconds);

/*
 The moving-to-reference map as a row-major 3x3 rotation `R` and an offset
 `o`, so that `p_ref = R p_mov + o`.

 # Safety
 `out_rotation` must hold 9 doubles and `out_offset` 3.
 */
enum TrusStatus trus_registration_matrix(const struct TrusRegistration *result,
                                         double *out_rotation,
                                         double *out_offset);

/*
 Maps a point from the moving frame into the reference frame.

 # Safety
 `point` and `out_point` must point to 3 doubles; they may alias.
 */
enum TrusStatus trus_registration_apply_point(const struct TrusRegistration *result,
                                              const double *point,
                                              double *out_point);

/*
 Target registration error of a result over `n` fiducial pairs given as
 x,y,z triples: mean and max of `|T(p_mov) - p_ref|` in mm.

 # Safety
 `ref_xyz` and `mov_xyz` must hold `3 * n` doubles; outputs may be NULL.
 */
enum TrusStatus trus_registration_tre(const struct TrusRegistration *result,
                                      const double *ref_xyz,
                                      const double *mov_xyz,
                                      size_t n,
                                      double *out_mean_mm,
                                      double *out_max_mm);

/*
 Pearson chi-square of the 2x2 table [[a, b], [c, d]] without continuity
 correction, and optionally its df = 1 p-value.

 # Safety
 `out_chi2` must be valid; `out_p` may be NULL.
 */
enum TrusStatus trus_chi2_2x2(uint64_t a,
                              uint64_t b,
                              uint64_t c,
                              uint64_t d,
                              double *out_chi2,
                              double *out_p);

/*
 Survival function of the chi-square distribution with one degree of freedom.

 # Safety
 `out_p` must be valid.
 */
enum TrusStatus trus_chi2_sf_df1(double x, double *out_p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRUSMAP_H */
