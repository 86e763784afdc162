#ifndef SPARSEPOSE_H
#define SPARSEPOSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SP_INPUT_DIM 135

#define SP_NUM_COMPONENTS 8

#define SP_NUM_JOINTS 22

#define SP_POSE_DIM 132

#define SP_SHAPE_DIM 16

#define SP_POSITIONS_DIM 66

#define SP_ROTATIONS_DIM 198

enum SpStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  SP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SP_STATUS_NULL = 1,
  /**
   * Malformed file, string or input vector.
   */
  SP_STATUS_PARSE = 2,
  /**
   * Numerically degenerate input, or every component masked.
   */
  SP_STATUS_DEGENERATE = 3,
  SP_STATUS_CALIBRATION = 4,
  SP_STATUS_INVALID_ARGUMENT = 5,
  SP_STATUS_IO = 6,
  SP_STATUS_PANIC = 7,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum SpStatus SpStatus;
#else
typedef int32_t SpStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

enum SpScenario
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  SP_SCENARIO_HMD = 0,
  SP_SCENARIO_HMD2_IMUS = 1,
  SP_SCENARIO_HMD3_IMUS = 2,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum SpScenario SpScenario;
#else
typedef int32_t SpScenario;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Turns raw device frames into network input vectors.
 */
typedef struct SpAssembler SpAssembler;

/**
 * Streaming inference state bound to one set of weights.
 */
typedef struct SpEngine SpEngine;

/**
 * Per-frame network output.
 */
typedef struct SpPoseOutput {
  /**
   * Local joint rotations, 22 × column-major 6D.
   */
  double theta[SP_POSE_DIM];
  double beta[SP_SHAPE_DIM];
  /**
   * Global joint positions in meters, 22 × xyz, head-anchored.
   */
  double joint_positions[SP_POSITIONS_DIM];
  /**
   * Global joint rotations, 22 × row-major 3×3.
   */
  double global_rotations[SP_ROTATIONS_DIM];
} SpPoseOutput;

/**
 * A 6DOF device sample.
 */
typedef struct SpDevicePose {
  double position[3];
  /**
   * Row-major rotation matrix.
   */
  double rotation[9];
  double timestamp;
} SpDevicePose;

/**
 * A calibrated IMU sample. Ignored unless `present` is nonzero.
 */
typedef struct SpImuSample {
  uint8_t present;
  /**
   * Row-major rotation matrix.
   */
  double rotation[9];
  /**
   * Free acceleration, m/s².
   */
  double acceleration[3];
  double timestamp;
} SpImuSample;

typedef struct SpSensorFrame {
  struct SpDevicePose head;
  struct SpDevicePose left_hand;
  struct SpDevicePose right_hand;
  struct SpImuSample pelvis;
  struct SpImuSample left_leg;
  struct SpImuSample right_leg;
} SpSensorFrame;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *sp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sp_version(void);

/**
 * Loads weights and, if `skeleton_path` is non-null, a skeleton asset.
 *
 * # Safety
 * Paths must be null or NUL-terminated strings; `out` must be writable.
 */
SpStatus sp_engine_new_from_files(const char *weights_path,
                                  const char *skeleton_path,
                                  struct SpEngine **out);

/**
 * Creates an engine with freshly initialized weights. `config_json` is a
 * model configuration object, or null for the reference architecture.
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` must be writable.
 */
SpStatus sp_engine_new_random(const char *config_json, uint64_t seed, struct SpEngine **out);

/**
 * # Safety
 * `engine` must be null or a handle from an `sp_engine_new_*` call that has
 * not been freed.
 */
void sp_engine_free(struct SpEngine *engine);

/**
 * Clears the recurrent state, as at the start of a new stream.
 *
 * # Safety
 * `engine` must be a live handle.
 */
SpStatus sp_engine_reset(struct SpEngine *engine);

/**
 * Number of scalar parameters in the engine's weights.
 *
 * # Safety
 * `engine` must be a live handle and `out` writable.
 */
SpStatus sp_engine_parameter_count(const struct SpEngine *engine, uint64_t *out);

/**
 * Writes the weights' sha256 as 64 hex digits plus NUL into `buf`, which
 * must hold at least 65 bytes.
 *
 * # Safety
 * `engine` must be a live handle and `buf` writable for `len` bytes.
 */
SpStatus sp_engine_weights_checksum(const struct SpEngine *engine, char *buf, size_t len);

/**
 * Advances the stream by one frame.
 *
 * `x` holds 135 values, `mask` 8 flags (nonzero = present). On failure the
 * recurrent state is left unchanged.
 *
 * # Safety
 * `engine` must be a live handle, `x` readable for 135 doubles, `mask`
 * readable for 8 bytes and `out` writable.
 */
SpStatus sp_engine_step(struct SpEngine *engine,
                        const double *x,
                        const uint8_t *mask,
                        uint64_t frame_index,
                        double dt,
                        struct SpPoseOutput *out);

/**
 * `scenario` is one of the `SP_SCENARIO_*` values.
 *
 * # Safety
 * `out` must be writable.
 */
SpStatus sp_assembler_new(int32_t scenario, struct SpAssembler **out);

/**
 * # Safety
 * `assembler` must be null or a live handle.
 */
void sp_assembler_free(struct SpAssembler *assembler);

/**
 * # Safety
 * `assembler` must be a live handle.
 */
SpStatus sp_assembler_reset(struct SpAssembler *assembler);

/**
 * Assembles the network input for one device frame.
 *
 * # Safety
 * `assembler` must be a live handle, `frame` readable, `x_out` writable for
 * 135 doubles, `mask_out` writable for 8 bytes, and `frame_index_out` and
 * `dt_out` null or writable.
 */
SpStatus sp_assembler_push(struct SpAssembler *assembler,
                           const struct SpSensorFrame *frame,
                           double *x_out,
                           uint8_t *mask_out,
                           uint64_t *frame_index_out,
                           double *dt_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPARSEPOSE_H */
