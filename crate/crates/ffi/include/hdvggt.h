#ifndef HDVGGT_H
#define HDVGGT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum HdStatus {
  HdStatus_Ok = 0,
  HdStatus_NullPointer = 1,
  HdStatus_InvalidArgument = 2,
  HdStatus_Config = 3,
  HdStatus_MissingArtifact = 4,
  HdStatus_Numerical = 5,
  HdStatus_Io = 6,
  HdStatus_Panic = 7,
} HdStatus;

/**
 * Generated multi-view scene.
 */
typedef struct HdScene HdScene;

/**
 * Seeded coarse and refiner weights.
 */
typedef struct HdStack HdStack;

/**
 * Attention multiply-add counts.
 */
typedef struct HdFlopCount {
  uint64_t qk;
  uint64_t av;
  uint64_t proj;
  uint64_t total;
} HdFlopCount;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hd_version(void);

/**
 * Copies the last error message of this thread into `buf`, truncated and
 * NUL-terminated. Returns the full message length in bytes, 0 if none.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
uintptr_t hd_last_error(char *buf, uintptr_t len);

/**
 * Generates a scene with the default config except the given fields.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum HdStatus hd_scene_generate(uintptr_t views,
                                uintptr_t height,
                                uintptr_t width,
                                uintptr_t patch,
                                double singularity_fraction,
                                uint64_t seed,
                                struct HdScene **out);

/**
 * # Safety
 * `scene` must be null or come from [`hd_scene_generate`] and not be
 * used afterwards.
 */
void hd_scene_free(struct HdScene *scene);

/**
 * View count, image height and width, tokens per view.
 *
 * # Safety
 * `scene` must be a live handle; outputs must be null or writable.
 */
enum HdStatus hd_scene_dims(const struct HdScene *scene,
                            uintptr_t *views,
                            uintptr_t *height,
                            uintptr_t *width,
                            uintptr_t *tokens);

/**
 * Copies view `index` as `H·W·3` row-major RGB in `[0, 1]`.
 *
 * # Safety
 * `scene` must be a live handle and `out` valid for `len` doubles.
 */
enum HdStatus hd_scene_copy_view(const struct HdScene *scene,
                                 uintptr_t index,
                                 double *out,
                                 uintptr_t len);

/**
 * Copies the ground-truth depth of view `index`, `H·W` row-major.
 *
 * # Safety
 * `scene` must be a live handle and `out` valid for `len` doubles.
 */
enum HdStatus hd_scene_copy_depth(const struct HdScene *scene,
                                  uintptr_t index,
                                  double *out,
                                  uintptr_t len);

/**
 * Writes the scene directory layout under `dir`.
 *
 * # Safety
 * `scene` must be a live handle and `dir` a NUL-terminated path.
 */
enum HdStatus hd_scene_save(const struct HdScene *scene, const char *dir);

/**
 * Default stack config with the given weight seed.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum HdStatus hd_stack_new(uint64_t seed, struct HdStack **out);

/**
 * # Safety
 * `stack` must be null or come from [`hd_stack_new`] and not be used
 * afterwards.
 */
void hd_stack_free(struct HdStack *stack);

/**
 * Runs detection with the default modulation config. Writes the `N·K`
 * saliency scores and refined mask (0 or 1), and the ROC-AUC; `has_auc`
 * is set to 0 when the ground truth has a single class.
 *
 * # Safety
 * Handles must be live; `saliency` and `mask` valid for `len` elements;
 * `auc` and `has_auc` writable.
 */
enum HdStatus hd_detect(const struct HdStack *stack,
                        const struct HdScene *scene,
                        double *saliency,
                        uint8_t *mask,
                        uintptr_t len,
                        double *auc,
                        int32_t *has_auc);

/**
 * Attention multiply-adds of `layers` layers over `n·k` tokens; `window`
 * 0 means global attention.
 *
 * # Safety
 * `out` must be writable.
 */
enum HdStatus hd_count_attention_flops(uintptr_t n,
                                       uintptr_t k,
                                       uintptr_t c,
                                       uintptr_t layers,
                                       uintptr_t window,
                                       struct HdFlopCount *out);

/**
 * Parses and validates a JSON run config.
 *
 * # Safety
 * `json` must be NUL-terminated.
 */
enum HdStatus hd_config_validate(const char *json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HDVGGT_H */
