//! IMU-to-body calibration from three scripted actions.
//!
//! The subject (1) stands straight for at least 5 s, (2) bends both knees
//! forward and holds, (3) lifts the left leg and then the right leg.
//!
//! Sensor model: every raw orientation is `W · B · S`, where `W` is the yaw
//! of the (shared, gravity-aligned) sensor world frame relative to the body
//! frame, `B` the bone orientation in the body frame and `S` the sensor
//! mounting on the bone. The body frame is SMPL-like: +y up, +z forward,
//! +x to the subject's left, and every bone is identity when standing.
//!
//! * Standing gives `W·S` per sensor (chordal mean over the still window).
//! * During the knee-bend hold both shanks are pitched about the body's +x
//!   axis, so the axis of `R_bend · R_standᵀ` is `W·x̂`; its horizontal
//!   direction fixes the yaw.
//! * Motion energy after standing separates the pelvis (least energy) from
//!   the legs, and the time order of the leg energy separates left (first)
//!   from right.
//!
//! The result maps raw samples back to bones with `heading · raw · offset`,
//! where `heading = Wᵀ` and `offset = Sᵀ = R_standᵀ · W`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::capture::RawCapture;
use super::ImuSample;
use crate::error::{Error, Result};
use crate::rotmath::{geodesic_angle, project_to_rotation, RotationMatrix};

pub const STILL_ANGULAR_SPEED_DEG: f64 = 5.0;
pub const STILL_MIN_SECONDS: f64 = 5.0;
pub const MIN_ENERGY_RATIO: f64 = 3.0;
/// Minimum separation between the two legs' energy-weighted time centroids.
pub const MIN_LIFT_SEPARATION_S: f64 = 0.25;
/// A leg counts as bent once it deviates this far from its standing orientation.
pub const KNEE_BEND_MIN_DEG: f64 = 10.0;
pub const CALIBRATION_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limb {
    Pelvis,
    LeftLeg,
    RightLeg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorCalibration {
    pub limb: Limb,
    /// Sensor-to-bone rotation, applied on the right of the raw orientation.
    pub offset: RotationMatrix,
    /// RMS deviation from the mean orientation over the still window, degrees.
    pub still_rms_deg: f64,
    /// Motion energy after the still window, rad²/s.
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// World-to-body yaw alignment, applied on the left.
    pub heading: RotationMatrix,
    pub sensors: BTreeMap<String, SensorCalibration>,
    pub still_window: (f64, f64),
    pub knee_bend_window: (f64, f64),
}

impl CalibrationResult {
    pub fn identity(ids: &[(&str, Limb)]) -> Self {
        CalibrationResult {
            heading: RotationMatrix::identity(),
            sensors: ids
                .iter()
                .map(|(id, limb)| {
                    (
                        id.to_string(),
                        SensorCalibration {
                            limb: *limb,
                            offset: RotationMatrix::identity(),
                            still_rms_deg: 0.0,
                            energy: 0.0,
                        },
                    )
                })
                .collect(),
            still_window: (0.0, 0.0),
            knee_bend_window: (0.0, 0.0),
        }
    }

    pub fn sensor_for(&self, limb: Limb) -> Option<&str> {
        self.sensors
            .iter()
            .find(|(_, s)| s.limb == limb)
            .map(|(id, _)| id.as_str())
    }
}

/// Maps a raw sample into the body-centric frame.
pub fn apply_calibration(raw: &ImuSample, calib: &CalibrationResult, sensor: &str) -> Result<ImuSample> {
    let s = calib
        .sensors
        .get(sensor)
        .ok_or_else(|| Error::UnknownSensor(sensor.to_string()))?;
    Ok(ImuSample {
        rotation: calib.heading.mul(&raw.rotation).mul(&s.offset),
        acceleration: calib.heading.rotate(&raw.acceleration),
        timestamp: raw.timestamp,
    })
}

struct Streams<'a> {
    ids: Vec<&'a str>,
    samples: Vec<&'a [ImuSample]>,
    times: Vec<f64>,
    // angular speed per sensor per sample, rad/s
    speed: Vec<Vec<f64>>,
}

fn prepare(capture: &RawCapture) -> Result<Streams<'_>> {
    let n_sensors = capture.streams.len();
    if !(2..=3).contains(&n_sensors) {
        return Err(Error::Calibration(format!(
            "expected 2 or 3 sensors, capture has {n_sensors}"
        )));
    }
    let ids: Vec<&str> = capture.streams.keys().map(String::as_str).collect();
    let samples: Vec<&[ImuSample]> = capture.streams.values().map(Vec::as_slice).collect();
    let n = samples[0].len();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    for (id, s) in ids.iter().zip(&samples) {
        if s.len() != n {
            return Err(Error::Calibration(format!(
                "sensor `{id}` has {} samples, expected {n} (streams must be synchronized)",
                s.len()
            )));
        }
        for (a, b) in s.iter().zip(samples[0]) {
            if (a.timestamp - b.timestamp).abs() > 1e-6 {
                return Err(Error::Calibration(format!(
                    "sensor `{id}` timestamps are not aligned with `{}`",
                    ids[0]
                )));
            }
        }
    }
    let times: Vec<f64> = samples[0].iter().map(|s| s.timestamp).collect();
    let speed = samples
        .iter()
        .map(|s| {
            let mut w = vec![0.0; n];
            for t in 1..n {
                w[t] = geodesic_angle(&s[t - 1].rotation, &s[t].rotation) / (times[t] - times[t - 1]);
            }
            w[0] = w[1];
            w
        })
        .collect();
    Ok(Streams {
        ids,
        samples,
        times,
        speed,
    })
}

fn nominal_dt(times: &[f64]) -> f64 {
    (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
}

/// Longest run of indices where `pred` holds, as an inclusive range.
fn longest_run(n: usize, pred: impl Fn(usize) -> bool) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for t in 0..=n {
        let ok = t < n && pred(t);
        match (ok, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                if best.is_none_or(|(bs, be)| t - 1 - s > be - bs) {
                    best = Some((s, t - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

fn first_run(range: std::ops::Range<usize>, min_len: usize, pred: impl Fn(usize) -> bool) -> Option<(usize, usize)> {
    let mut start = None;
    let end = range.end;
    for t in range.start..=end {
        let ok = t < end && pred(t);
        match (ok, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                if t - s >= min_len {
                    return Some((s, t - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    None
}

fn chordal_mean(samples: &[ImuSample]) -> Result<RotationMatrix> {
    let sum = samples
        .iter()
        .fold(Matrix3::zeros(), |acc, s| acc + s.rotation.matrix());
    project_to_rotation(&(sum / samples.len() as f64))
}

pub fn calibrate(capture: &RawCapture) -> Result<CalibrationResult> {
    let st = prepare(capture)?;
    let n = st.times.len();
    let n_sensors = st.ids.len();
    let dt = nominal_dt(&st.times);
    let still_speed = STILL_ANGULAR_SPEED_DEG.to_radians();

    // (1) stand straight
    let (s0, s1) = longest_run(n, |t| st.speed.iter().all(|w| w[t] < still_speed))
        .filter(|&(a, b)| st.times[b] - st.times[a] + dt >= STILL_MIN_SECONDS - 1e-9)
        .ok_or(Error::NoStillSegment {
            min_seconds: STILL_MIN_SECONDS,
        })?;
    let mut stand = Vec::with_capacity(n_sensors);
    let mut still_rms = Vec::with_capacity(n_sensors);
    for s in &st.samples {
        let mean = chordal_mean(&s[s0..=s1])?;
        let ms = s[s0..=s1]
            .iter()
            .map(|x| geodesic_angle(&mean, &x.rotation).powi(2))
            .sum::<f64>()
            / (s1 - s0 + 1) as f64;
        stand.push(mean);
        still_rms.push(ms.sqrt().to_degrees());
    }
    let after = s1 + 1;
    if after >= n {
        return Err(Error::Calibration("no motion after the still window".into()));
    }

    // (3) limb assignment from motion energy
    let energy: Vec<f64> = st
        .speed
        .iter()
        .map(|w| w[after..].iter().map(|v| v * v * dt).sum())
        .collect();
    let mut order: Vec<usize> = (0..n_sensors).collect();
    order.sort_by(|&a, &b| energy[a].total_cmp(&energy[b]));
    let (pelvis, legs) = if n_sensors == 3 {
        let p = order[0];
        let leg_min = energy[order[1]];
        if leg_min < MIN_ENERGY_RATIO * energy[p] {
            return Err(Error::AmbiguousAssignment(format!(
                "leg/pelvis energy ratio {:.2} below {MIN_ENERGY_RATIO}",
                leg_min / energy[p]
            )));
        }
        (Some(p), [order[1], order[2]])
    } else {
        (None, [order[0], order[1]])
    };
    let centroid = |i: usize| {
        let w = &st.speed[i];
        let (num, den) = (after..n).fold((0.0, 0.0), |(a, b), t| {
            let e = w[t] * w[t];
            (a + st.times[t] * e, b + e)
        });
        if den > 0.0 {
            Some(num / den)
        } else {
            None
        }
    };
    let (c0, c1) = match (centroid(legs[0]), centroid(legs[1])) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::AmbiguousAssignment("a leg sensor never moves".into())),
    };
    if (c0 - c1).abs() < MIN_LIFT_SEPARATION_S {
        return Err(Error::AmbiguousAssignment(format!(
            "leg lifts are not sequential (centroid gap {:.3} s)",
            (c0 - c1).abs()
        )));
    }
    let (left, right) = if c0 < c1 { (legs[0], legs[1]) } else { (legs[1], legs[0]) };

    // (2) knee-bend hold: both legs static and away from their standing pose
    let bend_min = KNEE_BEND_MIN_DEG.to_radians();
    let bent = |i: usize, t: usize| {
        st.speed[i][t] < still_speed && geodesic_angle(&stand[i], &st.samples[i][t].rotation) > bend_min
    };
    let min_hold = ((0.5 / dt).round() as usize).max(1);
    let (k0, k1) = first_run(after..n, min_hold, |t| bent(left, t) && bent(right, t))
        .ok_or_else(|| Error::Calibration("no knee-bend hold found".into()))?;
    let mut axis = Vector3::zeros();
    for &i in &[left, right] {
        for t in k0..=k1 {
            axis += st.samples[i][t].rotation.mul(&stand[i].transpose()).log();
        }
    }
    let horizontal = Vector3::new(axis.x, 0.0, axis.z);
    if horizontal.norm() < 0.5 * axis.norm() || horizontal.norm() == 0.0 {
        return Err(Error::Calibration(
            "knee-bend rotation axis is not horizontal".into(),
        ));
    }
    // axis = W·x̂ = (cos ψ, 0, −sin ψ) for W = R_y(ψ)
    let yaw = (-horizontal.z).atan2(horizontal.x);
    let world = RotationMatrix::rot_y(yaw);

    let mut sensors = BTreeMap::new();
    for i in 0..n_sensors {
        let limb = if Some(i) == pelvis {
            Limb::Pelvis
        } else if i == left {
            Limb::LeftLeg
        } else {
            Limb::RightLeg
        };
        sensors.insert(
            st.ids[i].to_string(),
            SensorCalibration {
                limb,
                offset: stand[i].transpose().mul(&world),
                still_rms_deg: still_rms[i],
                energy: energy[i],
            },
        );
    }
    Ok(CalibrationResult {
        heading: world.transpose(),
        sensors,
        still_window: (st.times[s0], st.times[s1]),
        knee_bend_window: (st.times[k0], st.times[k1]),
    })
}

// ---------------------------------------------------------------------------
// Result file

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub version: u32,
    /// Row-major.
    pub heading: [f64; 9],
    pub still_window_s: [f64; 2],
    pub knee_bend_window_s: [f64; 2],
    pub sensors: Vec<SensorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorEntry {
    pub id: String,
    pub limb: Limb,
    /// Row-major.
    pub offset: [f64; 9],
    pub still_rms_deg: f64,
    pub motion_energy: f64,
}

impl CalibrationResult {
    pub fn to_file(&self) -> CalibrationFile {
        CalibrationFile {
            version: CALIBRATION_VERSION,
            heading: self.heading.to_row_major(),
            still_window_s: [self.still_window.0, self.still_window.1],
            knee_bend_window_s: [self.knee_bend_window.0, self.knee_bend_window.1],
            sensors: self
                .sensors
                .iter()
                .map(|(id, s)| SensorEntry {
                    id: id.clone(),
                    limb: s.limb,
                    offset: s.offset.to_row_major(),
                    still_rms_deg: s.still_rms_deg,
                    motion_energy: s.energy,
                })
                .collect(),
        }
    }

    pub fn from_file(f: &CalibrationFile) -> Result<Self> {
        if f.version != CALIBRATION_VERSION {
            return Err(Error::VersionMismatch {
                found: f.version,
                expected: CALIBRATION_VERSION,
            });
        }
        let mut sensors = BTreeMap::new();
        for s in &f.sensors {
            sensors.insert(
                s.id.clone(),
                SensorCalibration {
                    limb: s.limb,
                    offset: RotationMatrix::from_row_major(&s.offset)?,
                    still_rms_deg: s.still_rms_deg,
                    energy: s.motion_energy,
                },
            );
        }
        Ok(CalibrationResult {
            heading: RotationMatrix::from_row_major(&f.heading)?,
            sensors,
            still_window: (f.still_window_s[0], f.still_window_s[1]),
            knee_bend_window: (f.knee_bend_window_s[0], f.knee_bend_window_s[1]),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file(&serde_json::from_str(&text)?)
    }
}

// ---------------------------------------------------------------------------
// Scripted synthetic capture

/// A simulated calibration session with known ground truth.
#[derive(Debug, Clone)]
pub struct ScriptedCapture {
    pub fps: f64,
    /// Yaw of the sensor world frame relative to the body frame, radians.
    pub world_yaw: f64,
    /// `(sensor id, limb, mounting S)`.
    pub sensors: Vec<(String, Limb, RotationMatrix)>,
    /// Per-sample orientation jitter (standard deviation), degrees.
    pub noise_deg: f64,
    pub seed: u64,
    /// When false every sensor moves throughout (no still window).
    pub include_stand: bool,
}

/// Bone orientations in the body frame for one sensor at time `t` (seconds).
fn scripted_bone(limb: Limb, t: f64, include_stand: bool) -> RotationMatrix {
    let smooth = |x: f64| {
        let x = x.clamp(0.0, 1.0);
        x * x * (3.0 - 2.0 * x)
    };
    let bump = |t0: f64, len: f64| {
        if t < t0 || t > t0 + len {
            0.0
        } else {
            (std::f64::consts::PI * (t - t0) / len).sin().powi(2)
        }
    };
    if !include_stand {
        let phase = match limb {
            Limb::Pelvis => 0.0,
            Limb::LeftLeg => 1.0,
            Limb::RightLeg => 2.0,
        };
        return RotationMatrix::rot_x(0.6 * (1.7 * t + phase).sin())
            .mul(&RotationMatrix::rot_z(0.4 * (1.1 * t + phase).cos()));
    }
    // 0-8 s stand, 8-9 bend, 9-14 hold, 14-15 rise, 15-16 rest,
    // 16-17.5 left lift, 17.5-18.5 rest, 18.5-20 right lift, 20-21 rest.
    let bend = smooth(t - 8.0) - smooth(t - 14.0);
    match limb {
        Limb::Pelvis => RotationMatrix::rot_x(5f64.to_radians() * bend)
            .mul(&RotationMatrix::rot_z(1.5f64.to_radians() * (bump(16.0, 1.5) - bump(18.5, 1.5)))),
        Limb::LeftLeg => RotationMatrix::rot_x(30f64.to_radians() * bend - 40f64.to_radians() * bump(16.0, 1.5)),
        Limb::RightLeg => RotationMatrix::rot_x(30f64.to_radians() * bend - 40f64.to_radians() * bump(18.5, 1.5)),
    }
}

pub const SCRIPT_SECONDS: f64 = 21.0;

impl ScriptedCapture {
    /// Three sensors with distinct, non-trivial mountings.
    pub fn standard(world_yaw: f64, seed: u64) -> Self {
        ScriptedCapture {
            fps: 60.0,
            world_yaw,
            sensors: vec![
                (
                    "imu-0".into(),
                    Limb::RightLeg,
                    RotationMatrix::exp(&Vector3::new(0.3, -1.2, 0.4)),
                ),
                (
                    "imu-1".into(),
                    Limb::Pelvis,
                    RotationMatrix::exp(&Vector3::new(-0.9, 0.2, 0.5)),
                ),
                (
                    "imu-2".into(),
                    Limb::LeftLeg,
                    RotationMatrix::exp(&Vector3::new(1.1, 0.7, -0.6)),
                ),
            ],
            noise_deg: 0.01,
            seed,
            include_stand: true,
        }
    }

    /// Raw capture plus the true bone orientations per sensor and sample.
    pub fn generate(&self) -> (RawCapture, BTreeMap<String, Vec<RotationMatrix>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let world = RotationMatrix::rot_y(self.world_yaw);
        let n = (SCRIPT_SECONDS * self.fps).round() as usize;
        let mut cap = RawCapture::default();
        let mut truth: BTreeMap<String, Vec<RotationMatrix>> = BTreeMap::new();
        for (id, limb, mount) in &self.sensors {
            let mut prev_pos: Option<[Vector3<f64>; 2]> = None;
            for i in 0..n {
                let t = i as f64 / self.fps;
                let bone = scripted_bone(*limb, t, self.include_stand);
                let jitter = Vector3::new(
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                ) * self.noise_deg.to_radians();
                let raw = world.mul(&bone).mul(mount).mul(&RotationMatrix::exp(&jitter));
                // Sensor sits 0.2 m down the bone; free acceleration in the world frame.
                let pos = world.rotate(&bone.rotate(&Vector3::new(0.0, -0.2, 0.0)));
                let acc = match prev_pos {
                    Some([p2, p1]) => (pos - 2.0 * p1 + p2) * self.fps * self.fps,
                    None => Vector3::zeros(),
                };
                prev_pos = Some(match prev_pos {
                    Some([_, p1]) => [p1, pos],
                    None => [pos, pos],
                });
                cap.push(
                    id,
                    ImuSample {
                        rotation: raw,
                        acceleration: acc,
                        timestamp: t,
                    },
                )
                .expect("generated timestamps increase");
                truth.entry(id.clone()).or_default().push(bone);
            }
        }
        (cap, truth)
    }
}
