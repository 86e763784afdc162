//! Evaluation datasets: network inputs paired with ground truth.
//!
//! Line-delimited JSON. Each sequence starts with a header line followed by
//! one line per frame:
//!
//! ```text
//! {"sequence":"walk-000","scenario":"hmd2imus","fps":60.0,"frames":240,"shape":[β0, …, β15]}
//! {"x":[135 reals],"mask":[8 booleans],"frame_index":0,"dt":0.016666666666666666,"root_translation":[x,y,z],"local_rot6d":[[6 reals] × 22]}
//! ```

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body_model::{LocalPose, ShapeParams, Skeleton, NUM_JOINTS, NUM_SHAPE};
use crate::error::{Error, Result};
use crate::rotmath::{matrix_to_rot6d, RotationMatrix};
use crate::sensing::imu::sensor_frames_from_motion;
use crate::sensing::motion::{MotionFrame, MotionRecord, MotionSequence};
use crate::sensing::{FrameInput, InputAssembler, Scenario, INPUT_DIM, NUM_COMPONENTS};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceHeader {
    sequence: String,
    scenario: Scenario,
    fps: f64,
    frames: usize,
    shape: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    x: Vec<f64>,
    mask: [bool; NUM_COMPONENTS],
    frame_index: u64,
    dt: f64,
    root_translation: [f64; 3],
    local_rot6d: Vec<[f64; 6]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSequence {
    pub name: String,
    pub scenario: Scenario,
    pub inputs: Vec<FrameInput>,
    pub ground_truth: MotionSequence,
}

impl EvalSequence {
    /// Builds network inputs for a ground-truth motion: headset and
    /// controllers from the head and wrist joints, IMUs synthesized on the
    /// pelvis and lower legs.
    pub fn from_motion(name: &str, motion: &MotionSequence, skel: &Skeleton, scenario: Scenario) -> Result<Self> {
        let frames = sensor_frames_from_motion(motion, skel)?;
        let mut asm = InputAssembler::new(scenario);
        let mut inputs = Vec::with_capacity(frames.len());
        for f in &frames {
            inputs.push(asm.push(f)?);
        }
        Ok(EvalSequence {
            name: name.to_string(),
            scenario,
            inputs,
            ground_truth: motion.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub fn write_dataset<W: Write>(sequences: &[EvalSequence], mut w: W) -> Result<()> {
    for s in sequences {
        let header = SequenceHeader {
            sequence: s.name.clone(),
            scenario: s.scenario,
            fps: s.ground_truth.fps,
            frames: s.inputs.len(),
            shape: s.ground_truth.shape.0.to_vec(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for (x, gt) in s.inputs.iter().zip(&s.ground_truth.frames) {
            let MotionRecord {
                root_translation,
                local_rot6d,
            } = gt.to_record();
            let rec = FrameRecord {
                x: x.x.to_vec(),
                mask: x.mask,
                frame_index: x.frame_index,
                dt: x.dt,
                root_translation,
                local_rot6d,
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn save_dataset(sequences: &[EvalSequence], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(sequences, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<EvalSequence>> {
    let mut out: Vec<EvalSequence> = Vec::new();
    let mut remaining = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = |e: Error| Error::Parse(format!("dataset line {}: {e}", i + 1));
        if remaining == 0 {
            let h: SequenceHeader = serde_json::from_str(&line).map_err(|e| ctx(e.into()))?;
            if h.shape.len() != NUM_SHAPE {
                return Err(ctx(Error::Parse(format!("shape has {} entries", h.shape.len()))));
            }
            if !(h.fps > 0.0 && h.fps.is_finite()) || h.frames == 0 {
                return Err(ctx(Error::Parse("fps and frame count must be positive".into())));
            }
            let mut shape = ShapeParams::zero();
            shape.0.copy_from_slice(&h.shape);
            remaining = h.frames;
            out.push(EvalSequence {
                name: h.sequence,
                scenario: h.scenario,
                inputs: Vec::with_capacity(h.frames),
                ground_truth: MotionSequence {
                    fps: h.fps,
                    shape,
                    frames: Vec::with_capacity(h.frames),
                },
            });
        } else {
            let r: FrameRecord = serde_json::from_str(&line).map_err(|e| ctx(e.into()))?;
            let x: [f64; INPUT_DIM] = r
                .x
                .as_slice()
                .try_into()
                .map_err(|_| ctx(Error::Parse(format!("x has {} entries, expected {INPUT_DIM}", r.x.len()))))?;
            let input = FrameInput::new(x, r.mask, r.frame_index, r.dt).map_err(ctx)?;
            let gt = MotionFrame::from_record(&MotionRecord {
                root_translation: r.root_translation,
                local_rot6d: r.local_rot6d,
            })
            .map_err(ctx)?;
            let seq = out.last_mut().expect("header precedes frames");
            seq.inputs.push(input);
            seq.ground_truth.frames.push(gt);
            remaining -= 1;
        }
    }
    if remaining != 0 {
        return Err(Error::Parse(format!("dataset ends {remaining} frames early")));
    }
    if out.is_empty() {
        return Err(Error::Parse("dataset contains no sequences".into()));
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<EvalSequence>> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Procedural walking-in-place-and-turning motion with a random body shape.
///
/// Smooth in time, so velocities, accelerations and jerk stay bounded.
pub fn procedural_motion(seed: u64, frames: usize, fps: f64) -> MotionSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = ShapeParams::zero();
    for b in shape.0.iter_mut() {
        *b = rng.random_range(-1.0..1.0);
    }
    let freq = rng.random_range(0.7..1.1);
    let stride = rng.random_range(0.3..0.6);
    let turn = rng.random_range(-0.3..0.3);
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let speed = rng.random_range(0.2..0.8);
    let out = (0..frames)
        .map(|i| {
            let t = i as f64 / fps;
            let w = 2.0 * PI * freq * t + phase;
            let yaw = turn * t + 0.2 * (0.3 * w).sin();
            let mut r = [RotationMatrix::identity(); NUM_JOINTS];
            r[0] = RotationMatrix::rot_y(yaw).mul(&RotationMatrix::rot_z(0.05 * w.sin()));
            r[1] = RotationMatrix::rot_x(-stride * w.sin());
            r[2] = RotationMatrix::rot_x(stride * w.sin());
            r[4] = RotationMatrix::rot_x(stride * (1.0 + (w - 0.8).sin()));
            r[5] = RotationMatrix::rot_x(stride * (1.0 - (w - 0.8).sin()));
            r[3] = RotationMatrix::rot_y(0.1 * w.sin());
            r[6] = RotationMatrix::rot_x(0.05 * (2.0 * w).sin());
            r[12] = RotationMatrix::rot_y(0.3 * (0.5 * w).sin()).mul(&RotationMatrix::rot_x(0.1 * (0.7 * w).cos()));
            r[15] = RotationMatrix::rot_x(0.1 * (0.4 * w).sin());
            r[16] = RotationMatrix::rot_z(-1.2).mul(&RotationMatrix::rot_x(0.4 * w.sin()));
            r[17] = RotationMatrix::rot_z(1.2).mul(&RotationMatrix::rot_x(-0.4 * w.sin()));
            r[18] = RotationMatrix::rot_y(-0.6 - 0.3 * (w + 0.5).sin());
            r[19] = RotationMatrix::rot_y(0.6 - 0.3 * (w + 0.5).sin());
            let forward = Vector3::new(yaw.sin(), 0.0, yaw.cos());
            MotionFrame {
                root_translation: Vector3::new(0.0, 0.92 + 0.02 * (2.0 * w).cos(), 0.0) + forward * (speed * t),
                theta: LocalPose(r.map(|m| matrix_to_rot6d(&m))),
            }
        })
        .collect();
    MotionSequence {
        fps,
        shape,
        frames: out,
    }
}

/// A subject standing still in the first frame's pose of
/// [`procedural_motion`] with the same seed.
pub fn stationary_motion(seed: u64, frames: usize, fps: f64) -> MotionSequence {
    let mut m = procedural_motion(seed, 1, fps);
    let first = m.frames[0].clone();
    m.frames = vec![first; frames];
    m
}

/// Reads motion files, decimates them to `fps` and pairs them with inputs.
pub fn synthesize_dataset(
    motions: &[(String, MotionSequence)],
    skel: &Skeleton,
    scenario: Scenario,
    fps: f64,
) -> Result<Vec<EvalSequence>> {
    motions
        .iter()
        .map(|(name, m)| {
            let m = if (m.fps - fps).abs() > 1e-9 { m.resample(fps)? } else { m.clone() };
            EvalSequence::from_motion(name, &m, skel, scenario)
        })
        .collect()
}
