//! Ground-truth motion files.
//!
//! Line-delimited JSON. The first line is the header, every following
//! non-empty line is one frame:
//!
//! ```text
//! {"fps":60.0,"joint_count":22,"shape":[β0, …, β15]}
//! {"root_translation":[x,y,z],"local_rot6d":[[6 reals] × 22]}
//! ```
//!
//! Translations are in meters; `local_rot6d[j]` is joint `j`'s local rotation
//! in the column-major 6D layout.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyState, LocalPose, ShapeParams, Skeleton, NUM_JOINTS, NUM_SHAPE};
use crate::error::{Error, Result};
use crate::rotmath::Rot6D;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionHeader {
    pub fps: f64,
    pub joint_count: usize,
    pub shape: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionRecord {
    pub root_translation: [f64; 3],
    pub local_rot6d: Vec<[f64; 6]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionFrame {
    pub root_translation: Vector3<f64>,
    pub theta: LocalPose,
}

impl MotionFrame {
    pub fn to_record(&self) -> MotionRecord {
        MotionRecord {
            root_translation: [self.root_translation.x, self.root_translation.y, self.root_translation.z],
            local_rot6d: self.theta.0.iter().map(|r| r.0).collect(),
        }
    }

    pub fn from_record(rec: &MotionRecord) -> Result<Self> {
        if rec.local_rot6d.len() != NUM_JOINTS {
            return Err(Error::Dimension {
                what: "local_rot6d".into(),
                expected: NUM_JOINTS,
                got: rec.local_rot6d.len(),
            });
        }
        let mut theta = LocalPose::identity();
        for (dst, src) in theta.0.iter_mut().zip(&rec.local_rot6d) {
            *dst = Rot6D(*src);
        }
        Ok(MotionFrame {
            root_translation: Vector3::from(rec.root_translation),
            theta,
        })
    }
}

/// A ground-truth clip: constant shape, per-frame pose and root translation.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fps: f64,
    pub shape: ShapeParams,
    pub frames: Vec<MotionFrame>,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// FK of every frame at its recorded root translation.
    pub fn bodies(&self, skel: &Skeleton) -> Result<Vec<BodyState>> {
        self.frames
            .iter()
            .map(|f| skel.forward_kinematics(&self.shape, &f.theta, &f.root_translation))
            .collect()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header_line = loop {
            match lines.next() {
                Some(l) => {
                    let l = l?;
                    if !l.trim().is_empty() {
                        break l;
                    }
                }
                None => return Err(Error::Parse("motion file is empty".into())),
            }
        };
        let header: MotionHeader = serde_json::from_str(&header_line)?;
        if header.joint_count != NUM_JOINTS {
            return Err(Error::Dimension {
                what: "joint_count".into(),
                expected: NUM_JOINTS,
                got: header.joint_count,
            });
        }
        if header.shape.len() != NUM_SHAPE {
            return Err(Error::Dimension {
                what: "shape".into(),
                expected: NUM_SHAPE,
                got: header.shape.len(),
            });
        }
        if !(header.fps > 0.0 && header.fps.is_finite()) {
            return Err(Error::Parse(format!("invalid fps {}", header.fps)));
        }
        let mut shape = ShapeParams::zero();
        shape.0.copy_from_slice(&header.shape);

        let mut frames = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: MotionRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("frame {i}: {e}")))?;
            frames.push(MotionFrame::from_record(&rec)?);
        }
        Ok(MotionSequence {
            fps: header.fps,
            shape,
            frames,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn to_writer<W: Write>(&self, mut w: W) -> Result<()> {
        let header = MotionHeader {
            fps: self.fps,
            joint_count: NUM_JOINTS,
            shape: self.shape.0.to_vec(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for f in &self.frames {
            serde_json::to_writer(&mut w, &f.to_record())?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// Nearest-frame decimation to `target_fps`. Only integer ratios are
    /// supported.
    pub fn resample(&self, target_fps: f64) -> Result<MotionSequence> {
        let ratio = self.fps / target_fps;
        let step = ratio.round();
        if step < 1.0 || (ratio - step).abs() > 1e-9 {
            return Err(Error::UnsupportedRate(format!(
                "cannot decimate {} Hz to {} Hz (non-integer ratio)",
                self.fps, target_fps
            )));
        }
        let step = step as usize;
        Ok(MotionSequence {
            fps: target_fps,
            shape: self.shape,
            frames: self.frames.iter().step_by(step).cloned().collect(),
        })
    }
}
