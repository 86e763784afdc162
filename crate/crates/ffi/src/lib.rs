//! C ABI for the sparsepose engine.
//!
//! Every function returns an [`SpStatus`]. On failure a human-readable
//! message for the calling thread is available from
//! [`sp_last_error_message`] until the next failing call on that thread.
//! Handles are opaque and must be released with their `_free` function.
//! No function unwinds across the boundary; internal panics are reported as
//! [`SpStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::{Matrix3, Vector3};
use sparsepose::body_model::{Skeleton, NUM_JOINTS, NUM_SHAPE};
use sparsepose::net::{forward_step, init_weights, ModelConfig, NetworkWeights, StreamState};
use sparsepose::rotmath::RotationMatrix;
use sparsepose::sensing::{DevicePose, FrameInput, ImuSample, InputAssembler, Scenario, SensorFrame};
use sparsepose::Error;

pub const SP_INPUT_DIM: usize = 135;
pub const SP_NUM_COMPONENTS: usize = 8;
pub const SP_NUM_JOINTS: usize = 22;
pub const SP_POSE_DIM: usize = 132;
pub const SP_SHAPE_DIM: usize = 16;
pub const SP_POSITIONS_DIM: usize = 66;
pub const SP_ROTATIONS_DIM: usize = 198;

const _: () = assert!(SP_INPUT_DIM == sparsepose::sensing::INPUT_DIM);
const _: () = assert!(SP_NUM_COMPONENTS == sparsepose::sensing::NUM_COMPONENTS);
const _: () = assert!(SP_NUM_JOINTS == NUM_JOINTS);
const _: () = assert!(SP_POSE_DIM == 6 * NUM_JOINTS);
const _: () = assert!(SP_SHAPE_DIM == NUM_SHAPE);
const _: () = assert!(SP_POSITIONS_DIM == 3 * NUM_JOINTS);
const _: () = assert!(SP_ROTATIONS_DIM == 9 * NUM_JOINTS);

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    Null = 1,
    /// Malformed file, string or input vector.
    Parse = 2,
    /// Numerically degenerate input, or every component masked.
    Degenerate = 3,
    Calibration = 4,
    InvalidArgument = 5,
    Io = 6,
    Panic = 7,
}

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpScenario {
    Hmd = 0,
    Hmd2Imus = 1,
    Hmd3Imus = 2,
}

impl From<SpScenario> for Scenario {
    fn from(s: SpScenario) -> Self {
        match s {
            SpScenario::Hmd => Scenario::Hmd,
            SpScenario::Hmd2Imus => Scenario::Hmd2Imus,
            SpScenario::Hmd3Imus => Scenario::Hmd3Imus,
        }
    }
}

/// Per-frame network output.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpPoseOutput {
    /// Local joint rotations, 22 × column-major 6D.
    pub theta: [f64; SP_POSE_DIM],
    pub beta: [f64; SP_SHAPE_DIM],
    /// Global joint positions in meters, 22 × xyz, head-anchored.
    pub joint_positions: [f64; SP_POSITIONS_DIM],
    /// Global joint rotations, 22 × row-major 3×3.
    pub global_rotations: [f64; SP_ROTATIONS_DIM],
}

/// A 6DOF device sample.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpDevicePose {
    pub position: [f64; 3],
    /// Row-major rotation matrix.
    pub rotation: [f64; 9],
    pub timestamp: f64,
}

/// A calibrated IMU sample. Ignored unless `present` is nonzero.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpImuSample {
    pub present: u8,
    /// Row-major rotation matrix.
    pub rotation: [f64; 9],
    /// Free acceleration, m/s².
    pub acceleration: [f64; 3],
    pub timestamp: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpSensorFrame {
    pub head: SpDevicePose,
    pub left_hand: SpDevicePose,
    pub right_hand: SpDevicePose,
    pub pelvis: SpImuSample,
    pub left_leg: SpImuSample,
    pub right_leg: SpImuSample,
}

/// Streaming inference state bound to one set of weights.
pub struct SpEngine {
    weights: NetworkWeights,
    skeleton: Skeleton,
    state: StreamState,
}

/// Turns raw device frames into network input vectors.
pub struct SpAssembler {
    inner: InputAssembler,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> SpStatus {
    match e {
        Error::Io(_) => SpStatus::Io,
        Error::InvalidConfig(_) | Error::UnknownSensor(_) => SpStatus::InvalidArgument,
        _ => match e.exit_code() {
            3 => SpStatus::Degenerate,
            4 => SpStatus::Calibration,
            _ => SpStatus::Parse,
        },
    }
}

struct Fail(SpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SpStatus::Null, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            SpStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SpStatus::InvalidArgument, format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn write_output(y: &sparsepose::net::PoseOutput, out: &mut SpPoseOutput) {
    for (j, r) in y.theta.0.iter().enumerate() {
        out.theta[6 * j..6 * j + 6].copy_from_slice(&r.0);
    }
    out.beta.copy_from_slice(&y.beta.0);
    for j in 0..NUM_JOINTS {
        let p = &y.body.joint_pos[j];
        out.joint_positions[3 * j..3 * j + 3].copy_from_slice(&[p.x, p.y, p.z]);
        out.global_rotations[9 * j..9 * j + 9].copy_from_slice(&y.body.global_rot[j].to_row_major());
    }
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads weights and, if `skeleton_path` is non-null, a skeleton asset.
///
/// # Safety
/// Paths must be null or NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_engine_new_from_files(
    weights_path: *const c_char,
    skeleton_path: *const c_char,
    out: *mut *mut SpEngine,
) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let weights = NetworkWeights::load(path_arg(weights_path, "weights_path")?)?;
        let skeleton = if skeleton_path.is_null() {
            Skeleton::default_skeleton()
        } else {
            Skeleton::load(path_arg(skeleton_path, "skeleton_path")?)?
        };
        let state = StreamState::new(&weights.config);
        *out = Box::into_raw(Box::new(SpEngine {
            weights,
            skeleton,
            state,
        }));
        Ok(())
    })
}

/// Creates an engine with freshly initialized weights. `config_json` is a
/// model configuration object, or null for the reference architecture.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_engine_new_random(config_json: *const c_char, seed: u64, out: *mut *mut SpEngine) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let config = if config_json.is_null() {
            ModelConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| Fail(SpStatus::InvalidArgument, "`config_json` is not UTF-8".into()))?;
            serde_json::from_str(text).map_err(|e| Fail(SpStatus::Parse, e.to_string()))?
        };
        let weights = init_weights(&config, seed)?;
        let state = StreamState::new(&weights.config);
        *out = Box::into_raw(Box::new(SpEngine {
            weights,
            skeleton: Skeleton::default_skeleton(),
            state,
        }));
        Ok(())
    })
}

/// # Safety
/// `engine` must be null or a handle from an `sp_engine_new_*` call that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn sp_engine_free(engine: *mut SpEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Clears the recurrent state, as at the start of a new stream.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sp_engine_reset(engine: *mut SpEngine) -> SpStatus {
    guard(|| {
        let e = engine.as_mut().ok_or_else(|| null("engine"))?;
        e.state.reset();
        Ok(())
    })
}

/// Number of scalar parameters in the engine's weights.
///
/// # Safety
/// `engine` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_engine_parameter_count(engine: *const SpEngine, out: *mut u64) -> SpStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = e.weights.parameter_count() as u64;
        Ok(())
    })
}

/// Writes the weights' sha256 as 64 hex digits plus NUL into `buf`, which
/// must hold at least 65 bytes.
///
/// # Safety
/// `engine` must be a live handle and `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sp_engine_weights_checksum(engine: *const SpEngine, buf: *mut c_char, len: usize) -> SpStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let sum = e.weights.checksum();
        if len < sum.len() + 1 {
            return Err(Fail(SpStatus::InvalidArgument, format!("buffer needs {} bytes", sum.len() + 1)));
        }
        ptr::copy_nonoverlapping(sum.as_ptr().cast::<c_char>(), buf, sum.len());
        *buf.add(sum.len()) = 0;
        Ok(())
    })
}

/// Advances the stream by one frame.
///
/// `x` holds 135 values, `mask` 8 flags (nonzero = present). On failure the
/// recurrent state is left unchanged.
///
/// # Safety
/// `engine` must be a live handle, `x` readable for 135 doubles, `mask`
/// readable for 8 bytes and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_engine_step(
    engine: *mut SpEngine,
    x: *const f64,
    mask: *const u8,
    frame_index: u64,
    dt: f64,
    out: *mut SpPoseOutput,
) -> SpStatus {
    guard(|| {
        let e = engine.as_mut().ok_or_else(|| null("engine"))?;
        if x.is_null() {
            return Err(null("x"));
        }
        if mask.is_null() {
            return Err(null("mask"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let mut xs = [0.0; SP_INPUT_DIM];
        xs.copy_from_slice(std::slice::from_raw_parts(x, SP_INPUT_DIM));
        let mut m = [false; SP_NUM_COMPONENTS];
        for (dst, src) in m.iter_mut().zip(std::slice::from_raw_parts(mask, SP_NUM_COMPONENTS)) {
            *dst = *src != 0;
        }
        let input = FrameInput::new(xs, m, frame_index, dt)?;
        let mut next = e.state.clone();
        let y = forward_step(&mut next, &input, &e.weights, &e.skeleton)?;
        e.state = next;
        write_output(&y, out);
        Ok(())
    })
}

/// `scenario` is one of the `SP_SCENARIO_*` values.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_assembler_new(scenario: i32, out: *mut *mut SpAssembler) -> SpStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let scenario = match scenario {
            0 => SpScenario::Hmd,
            1 => SpScenario::Hmd2Imus,
            2 => SpScenario::Hmd3Imus,
            other => return Err(Fail(SpStatus::InvalidArgument, format!("unknown scenario {other}"))),
        };
        *out = Box::into_raw(Box::new(SpAssembler {
            inner: InputAssembler::new(scenario.into()),
        }));
        Ok(())
    })
}

/// # Safety
/// `assembler` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sp_assembler_free(assembler: *mut SpAssembler) {
    if !assembler.is_null() {
        drop(Box::from_raw(assembler));
    }
}

/// # Safety
/// `assembler` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sp_assembler_reset(assembler: *mut SpAssembler) -> SpStatus {
    guard(|| {
        assembler.as_mut().ok_or_else(|| null("assembler"))?.inner.reset();
        Ok(())
    })
}

/// Rotations that are orthonormal to 1e-9 pass through untouched; slightly
/// drifted ones are projected back onto SO(3).
fn rotation(v: &[f64; 9]) -> Result<RotationMatrix, Fail> {
    match RotationMatrix::try_from_matrix(Matrix3::from_row_slice(v), 1e-9) {
        Ok(r) => Ok(r),
        Err(_) => Ok(RotationMatrix::from_row_major(v)?),
    }
}

fn device(p: &SpDevicePose) -> Result<DevicePose, Fail> {
    Ok(DevicePose {
        position: Vector3::from(p.position),
        rotation: rotation(&p.rotation)?,
        timestamp: p.timestamp,
    })
}

fn imu(s: &SpImuSample) -> Result<Option<ImuSample>, Fail> {
    if s.present == 0 {
        return Ok(None);
    }
    Ok(Some(ImuSample {
        rotation: rotation(&s.rotation)?,
        acceleration: Vector3::from(s.acceleration),
        timestamp: s.timestamp,
    }))
}

/// Assembles the network input for one device frame.
///
/// # Safety
/// `assembler` must be a live handle, `frame` readable, `x_out` writable for
/// 135 doubles, `mask_out` writable for 8 bytes, and `frame_index_out` and
/// `dt_out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sp_assembler_push(
    assembler: *mut SpAssembler,
    frame: *const SpSensorFrame,
    x_out: *mut f64,
    mask_out: *mut u8,
    frame_index_out: *mut u64,
    dt_out: *mut f64,
) -> SpStatus {
    guard(|| {
        let a = assembler.as_mut().ok_or_else(|| null("assembler"))?;
        let f = frame.as_ref().ok_or_else(|| null("frame"))?;
        if x_out.is_null() {
            return Err(null("x_out"));
        }
        if mask_out.is_null() {
            return Err(null("mask_out"));
        }
        let sf = SensorFrame {
            head: device(&f.head)?,
            left_hand: device(&f.left_hand)?,
            right_hand: device(&f.right_hand)?,
            pelvis: imu(&f.pelvis)?,
            left_leg: imu(&f.left_leg)?,
            right_leg: imu(&f.right_leg)?,
        };
        let input = a.inner.push(&sf)?;
        std::slice::from_raw_parts_mut(x_out, SP_INPUT_DIM).copy_from_slice(&input.x);
        for (dst, src) in std::slice::from_raw_parts_mut(mask_out, SP_NUM_COMPONENTS).iter_mut().zip(input.mask) {
            *dst = src as u8;
        }
        if let Some(i) = frame_index_out.as_mut() {
            *i = input.frame_index;
        }
        if let Some(d) = dt_out.as_mut() {
            *d = input.dt;
        }
        Ok(())
    })
}
