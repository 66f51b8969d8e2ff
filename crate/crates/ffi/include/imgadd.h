#ifndef IMGADD_H
#define IMGADD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum ImgaddStatus {
  IMGADD_STATUS_OK = 0,
  IMGADD_STATUS_NULL_POINTER = 1,
  IMGADD_STATUS_INVALID_UTF8 = 2,
  IMGADD_STATUS_INVALID_CONFIG = 3,
  IMGADD_STATUS_INVALID_INPUT = 4,
  IMGADD_STATUS_NUMERICAL = 5,
  IMGADD_STATUS_IO = 6,
  IMGADD_STATUS_BUFFER_TOO_SMALL = 7,
  IMGADD_STATUS_VERIFY_FAILED = 8,
  IMGADD_STATUS_PANIC = 9,
} ImgaddStatus;

/*
 A solved beamformer bank.
 */
typedef struct ImgaddBank ImgaddBank;

/*
 A formed image.
 */
typedef struct ImgaddImage ImgaddImage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *imgadd_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *imgadd_version(void);

/*
 Solves the JSON design problem `config` and stores a new bank in `*out`.

 # Safety
 `config` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ImgaddStatus imgadd_solve(const char *config, struct ImgaddBank **out);

/*
 Loads a bank from the JSON text written by [`imgadd_bank_to_json`].

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ImgaddStatus imgadd_bank_from_json(const char *json, struct ImgaddBank **out);

/*
 Serializes a bank to JSON. Release the string with [`imgadd_string_free`].

 # Safety
 `bank` must come from this library; `out` must be a valid pointer.
 */
enum ImgaddStatus imgadd_bank_to_json(const struct ImgaddBank *bank, char **out);

/*
 Frees a bank. NULL is ignored.

 # Safety
 `bank` must come from this library and not be used afterwards.
 */
void imgadd_bank_free(struct ImgaddBank *bank);

/*
 Frees a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and not be used afterwards.
 */
void imgadd_string_free(char *s);

/*
 Image count, element counts and relative error of a bank.

 # Safety
 `bank` must come from this library; output pointers may be NULL.
 */
enum ImgaddStatus imgadd_bank_info(const struct ImgaddBank *bank,
                                   size_t *q,
                                   size_t *n_t,
                                   size_t *n_r,
                                   double *relative_error);

/*
 Effective element weights of every image: `N_t × Q` transmit and
 `N_r × Q` receive, interleaved complex, column-major. `len_t` and
 `len_r` count doubles.

 # Safety
 Buffers must hold at least the given number of doubles.
 */
enum ImgaddStatus imgadd_bank_weights(const struct ImgaddBank *bank,
                                      double *tx,
                                      size_t len_t,
                                      double *rx,
                                      size_t len_r);

/*
 Desired and realized PSF magnitudes over the default grid with `points`
 samples (per axis for planar arrays). Both buffers need the grid size,
 which is written to `*count` first so a sizing call may pass NULL buffers.

 # Safety
 `count` must be valid; buffers must hold `len` doubles.
 */
enum ImgaddStatus imgadd_bank_psf(const struct ImgaddBank *bank,
                                  size_t points,
                                  double *desired,
                                  double *realized,
                                  size_t len,
                                  size_t *count);

/*
 Forms the image described by the JSON `config`. `bank` replaces the
 config's bank file and may be NULL when the config has a `solve` section.

 # Safety
 `config` must be NUL-terminated; `bank` NULL or from this library.
 */
enum ImgaddStatus imgadd_image(const char *config,
                               const struct ImgaddBank *bank,
                               struct ImgaddImage **out);

/*
 Image shape; linear arrays give `rows = pixels`, `cols = 1`.

 # Safety
 `image` must come from this library; outputs must be valid.
 */
enum ImgaddStatus imgadd_image_shape(const struct ImgaddImage *image, size_t *rows, size_t *cols);

/*
 Pixel values, interleaved complex in row-major order (`2·rows·cols`
 doubles).

 # Safety
 `buf` must hold `len` doubles.
 */
enum ImgaddStatus imgadd_image_values(const struct ImgaddImage *image, double *buf, size_t len);

/*
 Frees an image. NULL is ignored.

 # Safety
 `image` must come from this library and not be used afterwards.
 */
void imgadd_image_free(struct ImgaddImage *image);

/*
 Runs the closed-form and invariant self-checks. Returns
 `IMGADD_STATUS_VERIFY_FAILED` when any check fails; `failures` receives
 the number of failing checks when non-NULL.

 # Safety
 `failures` must be NULL or valid for writes.
 */
enum ImgaddStatus imgadd_verify(uint64_t seed, size_t *failures);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMGADD_H */
