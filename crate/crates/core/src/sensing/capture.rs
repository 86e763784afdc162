//! Raw inertial capture files.
//!
//! One JSON object per line:
//!
//! ```text
//! {"sensor":"imu-a","t":0.016667,"rotation":[r00,r01,r02,r10,r11,r12,r20,r21,r22],"acceleration":[ax,ay,az]}
//! ```
//!
//! `rotation` is the sensor orientation in its gravity-aligned (+y up) world
//! frame, row-major. `acceleration` is free acceleration in that same world
//! frame, m/s². Records may be interleaved across sensors; each sensor's
//! timestamps must be strictly increasing.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::ImuSample;
use crate::error::{Error, Result};
use crate::rotmath::RotationMatrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureRecord {
    pub sensor: String,
    pub t: f64,
    pub rotation: [f64; 9],
    pub acceleration: [f64; 3],
}

/// Per-sensor raw sample streams keyed by sensor id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawCapture {
    pub streams: BTreeMap<String, Vec<ImuSample>>,
}

impl RawCapture {
    pub fn push(&mut self, sensor: &str, sample: ImuSample) -> Result<()> {
        let stream = self.streams.entry(sensor.to_string()).or_default();
        if let Some(last) = stream.last() {
            if !(sample.timestamp > last.timestamp) {
                return Err(Error::NonMonotonicTime {
                    prev: last.timestamp,
                    cur: sample.timestamp,
                });
            }
        }
        stream.push(sample);
        Ok(())
    }

    pub fn sensor_ids(&self) -> Vec<String> {
        self.streams.keys().cloned().collect()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut cap = RawCapture::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CaptureRecord =
                serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            if !rec.t.is_finite() || !rec.acceleration.iter().all(|v| v.is_finite()) {
                return Err(Error::Parse(format!("line {}: non-finite value", i + 1)));
            }
            let rotation = RotationMatrix::from_row_major(&rec.rotation)
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            cap.push(
                &rec.sensor,
                ImuSample {
                    rotation,
                    acceleration: Vector3::from(rec.acceleration),
                    timestamp: rec.t,
                },
            )?;
        }
        if cap.streams.is_empty() {
            return Err(Error::Parse("capture contains no samples".into()));
        }
        Ok(cap)
    }

    /// Writes samples ordered by time, then sensor id.
    pub fn to_writer<W: Write>(&self, mut w: W) -> Result<()> {
        let mut records: Vec<CaptureRecord> = self
            .streams
            .iter()
            .flat_map(|(id, s)| {
                s.iter().map(move |x| CaptureRecord {
                    sensor: id.clone(),
                    t: x.timestamp,
                    rotation: x.rotation.to_row_major(),
                    acceleration: [x.acceleration.x, x.acceleration.y, x.acceleration.z],
                })
            })
            .collect();
        records.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.sensor.cmp(&b.sensor)));
        for r in &records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }
}
