//! Device streams to model input.
//!
//! The per-frame observation is a 135-vector made of eight blocks:
//!
//! | block | component                 | offset | width | layout                          |
//! |-------|---------------------------|--------|-------|---------------------------------|
//! | 0     | head (world)              | 0      | 18    | pos3, vel3, rot6, angvel6       |
//! | 1     | left hand (world)         | 18     | 18    | pos3, vel3, rot6, angvel6       |
//! | 2     | right hand (world)        | 36     | 18    | pos3, vel3, rot6, angvel6       |
//! | 3     | pelvis IMU                | 54     | 15    | rot6, angvel6, acc3             |
//! | 4     | left lower-leg IMU        | 69     | 15    | rot6, angvel6, acc3             |
//! | 5     | right lower-leg IMU       | 84     | 15    | rot6, angvel6, acc3             |
//! | 6     | left hand in head frame   | 99     | 18    | pos3, vel3, rot6, angvel6       |
//! | 7     | right hand in head frame  | 117    | 18    | pos3, vel3, rot6, angvel6       |
//!
//! Angular velocity is the per-frame relative rotation `R_prevᵀ·R_cur` in 6D
//! form. Linear velocities of the world blocks are in the world frame. Absent
//! sensors are zero-filled and cleared in the mask.

pub mod calibration;
pub mod capture;
pub mod imu;
pub mod motion;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::{matrix_to_rot6d, relative_rotation, rot6d_to_matrix, Rot6D, RotationMatrix};

pub const INPUT_DIM: usize = 135;
pub const NUM_COMPONENTS: usize = 8;
pub const FRAME_RATE: f64 = 60.0;
pub const FRAME_DT: f64 = 1.0 / FRAME_RATE;

/// Block offsets into the 135-vector, with the total as the last entry.
pub const BLOCK_BOUNDS: [usize; NUM_COMPONENTS + 1] = [0, 18, 36, 54, 69, 84, 99, 117, 135];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Head,
    LeftHand,
    RightHand,
    Pelvis,
    LeftLeg,
    RightLeg,
    LeftHandInHead,
    RightHandInHead,
}

/// What a block carries, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Position,
    Velocity,
    Rotation,
    AngularVelocity,
    Acceleration,
}

impl Quantity {
    pub fn width(self) -> usize {
        match self {
            Quantity::Position | Quantity::Velocity | Quantity::Acceleration => 3,
            Quantity::Rotation | Quantity::AngularVelocity => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Position => "pos",
            Quantity::Velocity => "vel",
            Quantity::Rotation => "rot",
            Quantity::AngularVelocity => "angvel",
            Quantity::Acceleration => "acc",
        }
    }
}

pub const SIX_DOF_LAYOUT: [Quantity; 4] = [
    Quantity::Position,
    Quantity::Velocity,
    Quantity::Rotation,
    Quantity::AngularVelocity,
];
pub const IMU_LAYOUT: [Quantity; 3] = [
    Quantity::Rotation,
    Quantity::AngularVelocity,
    Quantity::Acceleration,
];

impl Component {
    pub const ALL: [Component; NUM_COMPONENTS] = [
        Component::Head,
        Component::LeftHand,
        Component::RightHand,
        Component::Pelvis,
        Component::LeftLeg,
        Component::RightLeg,
        Component::LeftHandInHead,
        Component::RightHandInHead,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::Head => "h",
            Component::LeftHand => "lh",
            Component::RightHand => "rh",
            Component::Pelvis => "pel",
            Component::LeftLeg => "lf",
            Component::RightLeg => "rf",
            Component::LeftHandInHead => "lh_h",
            Component::RightHandInHead => "rh_h",
        }
    }

    pub fn is_imu(self) -> bool {
        matches!(self, Component::Pelvis | Component::LeftLeg | Component::RightLeg)
    }

    pub fn layout(self) -> &'static [Quantity] {
        if self.is_imu() {
            &IMU_LAYOUT
        } else {
            &SIX_DOF_LAYOUT
        }
    }

    pub fn range(self) -> std::ops::Range<usize> {
        BLOCK_BOUNDS[self.index()]..BLOCK_BOUNDS[self.index() + 1]
    }

    /// Offset of `q` inside this component's block.
    pub fn quantity_offset(self, q: Quantity) -> Option<usize> {
        let mut off = 0;
        for &l in self.layout() {
            if l == q {
                return Some(off);
            }
            off += l.width();
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "hmd")]
    Hmd,
    #[serde(rename = "hmd2imus")]
    Hmd2Imus,
    #[serde(rename = "hmd3imus")]
    Hmd3Imus,
}

impl Scenario {
    pub fn present(self) -> [bool; NUM_COMPONENTS] {
        let (pel, legs) = match self {
            Scenario::Hmd => (false, false),
            Scenario::Hmd2Imus => (false, true),
            Scenario::Hmd3Imus => (true, true),
        };
        [true, true, true, pel, legs, legs, true, true]
    }

    pub fn tag(self) -> &'static str {
        match self {
            Scenario::Hmd => "hmd",
            Scenario::Hmd2Imus => "hmd2imus",
            Scenario::Hmd3Imus => "hmd3imus",
        }
    }

    pub fn from_mask(mask: &[bool; NUM_COMPONENTS]) -> Option<Self> {
        [Scenario::Hmd, Scenario::Hmd2Imus, Scenario::Hmd3Imus]
            .into_iter()
            .find(|s| s.present() == *mask)
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hmd" => Ok(Scenario::Hmd),
            "hmd2imus" => Ok(Scenario::Hmd2Imus),
            "hmd3imus" => Ok(Scenario::Hmd3Imus),
            other => Err(Error::Parse(format!("unknown scenario `{other}`"))),
        }
    }
}

/// A 6DOF tracked device sample (headset or controller).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevicePose {
    pub position: Vector3<f64>,
    pub rotation: RotationMatrix,
    pub timestamp: f64,
}

/// A calibrated inertial sample: orientation in the body-centric frame and
/// free acceleration (gravity removed) in the same frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub rotation: RotationMatrix,
    pub acceleration: Vector3<f64>,
    pub timestamp: f64,
}

/// Everything the devices report at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFrame {
    pub head: DevicePose,
    pub left_hand: DevicePose,
    pub right_hand: DevicePose,
    pub pelvis: Option<ImuSample>,
    pub left_leg: Option<ImuSample>,
    pub right_leg: Option<ImuSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub x: [f64; INPUT_DIM],
    pub mask: [bool; NUM_COMPONENTS],
    pub frame_index: u64,
    pub dt: f64,
}

impl FrameInput {
    /// Builds and validates a frame from raw parts (e.g. across the C ABI).
    pub fn new(x: [f64; INPUT_DIM], mask: [bool; NUM_COMPONENTS], frame_index: u64, dt: f64) -> Result<Self> {
        let f = FrameInput {
            x,
            mask,
            frame_index,
            dt,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn block(&self, c: Component) -> &[f64] {
        &self.x[c.range()]
    }

    pub fn head_position(&self) -> Vector3<f64> {
        Vector3::new(self.x[0], self.x[1], self.x[2])
    }

    /// Checks the padding, finiteness and rotation-slot invariants.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidFrame(format!("non-finite value at index {i}")));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidFrame(format!("dt must be positive, got {}", self.dt)));
        }
        for c in Component::ALL {
            let present = self.mask[c.index()];
            if !c.is_imu() && !present {
                return Err(Error::InvalidFrame(format!(
                    "component `{}` is always required",
                    c.name()
                )));
            }
            let block = self.block(c);
            if !present {
                if block.iter().any(|&v| v != 0.0) {
                    return Err(Error::InvalidFrame(format!(
                        "absent component `{}` is not zero-padded",
                        c.name()
                    )));
                }
                continue;
            }
            for q in [Quantity::Rotation, Quantity::AngularVelocity] {
                let off = c.quantity_offset(q).unwrap();
                let mut v = [0.0; 6];
                v.copy_from_slice(&block[off..off + 6]);
                rot6d_to_matrix(&Rot6D(v)).map_err(|e| {
                    Error::InvalidFrame(format!("component `{}` {}: {e}", c.name(), q.name()))
                })?;
            }
        }
        Ok(())
    }

    /// Same frame with the given components zeroed and unmasked.
    pub fn with_components_removed(&self, remove: &[Component]) -> FrameInput {
        let mut out = self.clone();
        for &c in remove {
            out.x[c.range()].fill(0.0);
            out.mask[c.index()] = false;
        }
        out
    }
}

/// Finite-difference velocity and relative-rotation angular velocity.
pub fn velocity_and_angular(prev: &DevicePose, cur: &DevicePose) -> Result<(Vector3<f64>, Rot6D)> {
    let dt = cur.timestamp - prev.timestamp;
    if !(dt > 0.0) {
        return Err(Error::NonMonotonicTime {
            prev: prev.timestamp,
            cur: cur.timestamp,
        });
    }
    let vel = (cur.position - prev.position) / dt;
    let ang = matrix_to_rot6d(&relative_rotation(&prev.rotation, &cur.rotation));
    Ok((vel, ang))
}

/// Hand pose in the head frame plus its frame-to-frame velocity and
/// angular velocity, packed as `[pos, vel, rot6, angvel6]`.
pub fn relative_hand_in_head(
    head: &DevicePose,
    hand: &DevicePose,
    prev_head: &DevicePose,
    prev_hand: &DevicePose,
) -> Result<[f64; 18]> {
    let rel = hand_in_head(head, hand);
    let prev_rel = hand_in_head(prev_head, prev_hand);
    let (vel, ang) = velocity_and_angular(&prev_rel, &rel)?;
    Ok(pack_six_dof(&rel.position, &vel, &rel.rotation, &ang))
}

fn hand_in_head(head: &DevicePose, hand: &DevicePose) -> DevicePose {
    let rt = head.rotation.transpose();
    DevicePose {
        position: rt.rotate(&(hand.position - head.position)),
        rotation: relative_rotation(&head.rotation, &hand.rotation),
        timestamp: head.timestamp,
    }
}

fn pack_six_dof(pos: &Vector3<f64>, vel: &Vector3<f64>, rot: &RotationMatrix, ang: &Rot6D) -> [f64; 18] {
    let mut out = [0.0; 18];
    out[0..3].copy_from_slice(pos.as_slice());
    out[3..6].copy_from_slice(vel.as_slice());
    out[6..12].copy_from_slice(&matrix_to_rot6d(rot).0);
    out[12..18].copy_from_slice(&ang.0);
    out
}

fn pack_imu(rot: &RotationMatrix, ang: &Rot6D, acc: &Vector3<f64>) -> [f64; 15] {
    let mut out = [0.0; 15];
    out[0..6].copy_from_slice(&matrix_to_rot6d(rot).0);
    out[6..12].copy_from_slice(&ang.0);
    out[12..15].copy_from_slice(acc.as_slice());
    out
}

fn check_time(prev: f64, cur: f64) -> Result<()> {
    if cur > prev {
        Ok(())
    } else {
        Err(Error::NonMonotonicTime { prev, cur })
    }
}

/// Assembles the model input for the current frame.
///
/// `prev` is the previous frame of the same stream; without it (stream
/// start) every velocity, angular velocity and acceleration slot is the
/// at-rest value: zero vectors and the identity 6D rotation.
pub fn assemble_input(
    prev: Option<&SensorFrame>,
    cur: &SensorFrame,
    scenario: Scenario,
    frame_index: u64,
) -> Result<FrameInput> {
    let present = scenario.present();
    let imu = |c: Component, s: Option<&ImuSample>| -> Result<Option<ImuSample>> {
        if !present[c.index()] {
            return Ok(None);
        }
        s.copied().map(Some).ok_or(Error::MissingStream(c.name()))
    };
    let pelvis = imu(Component::Pelvis, cur.pelvis.as_ref())?;
    let left_leg = imu(Component::LeftLeg, cur.left_leg.as_ref())?;
    let right_leg = imu(Component::RightLeg, cur.right_leg.as_ref())?;

    let mut x = [0.0; INPUT_DIM];
    let mut put = |c: Component, block: &[f64]| x[c.range()].copy_from_slice(block);

    let dt;
    match prev {
        Some(p) => {
            check_time(p.head.timestamp, cur.head.timestamp)?;
            check_time(p.left_hand.timestamp, cur.left_hand.timestamp)?;
            check_time(p.right_hand.timestamp, cur.right_hand.timestamp)?;
            dt = cur.head.timestamp - p.head.timestamp;
            for (c, d, pd) in [
                (Component::Head, &cur.head, &p.head),
                (Component::LeftHand, &cur.left_hand, &p.left_hand),
                (Component::RightHand, &cur.right_hand, &p.right_hand),
            ] {
                let (vel, ang) = velocity_and_angular(pd, d)?;
                put(c, &pack_six_dof(&d.position, &vel, &d.rotation, &ang));
            }
            put(
                Component::LeftHandInHead,
                &relative_hand_in_head(&cur.head, &cur.left_hand, &p.head, &p.left_hand)?,
            );
            put(
                Component::RightHandInHead,
                &relative_hand_in_head(&cur.head, &cur.right_hand, &p.head, &p.right_hand)?,
            );
            for (c, s, ps) in [
                (Component::Pelvis, pelvis, p.pelvis),
                (Component::LeftLeg, left_leg, p.left_leg),
                (Component::RightLeg, right_leg, p.right_leg),
            ] {
                let Some(s) = s else { continue };
                let ang = match ps {
                    Some(ps) => {
                        check_time(ps.timestamp, s.timestamp)?;
                        matrix_to_rot6d(&relative_rotation(&ps.rotation, &s.rotation))
                    }
                    None => Rot6D::IDENTITY,
                };
                put(c, &pack_imu(&s.rotation, &ang, &s.acceleration));
            }
        }
        None => {
            dt = FRAME_DT;
            let zero = Vector3::zeros();
            for (c, d) in [
                (Component::Head, &cur.head),
                (Component::LeftHand, &cur.left_hand),
                (Component::RightHand, &cur.right_hand),
            ] {
                put(c, &pack_six_dof(&d.position, &zero, &d.rotation, &Rot6D::IDENTITY));
            }
            for (c, hand) in [
                (Component::LeftHandInHead, &cur.left_hand),
                (Component::RightHandInHead, &cur.right_hand),
            ] {
                let rel = hand_in_head(&cur.head, hand);
                put(c, &pack_six_dof(&rel.position, &zero, &rel.rotation, &Rot6D::IDENTITY));
            }
            for (c, s) in [
                (Component::Pelvis, pelvis),
                (Component::LeftLeg, left_leg),
                (Component::RightLeg, right_leg),
            ] {
                if let Some(s) = s {
                    put(c, &pack_imu(&s.rotation, &Rot6D::IDENTITY, &zero));
                }
            }
        }
    }

    Ok(FrameInput {
        x,
        mask: present,
        frame_index,
        dt,
    })
}

/// Stateful wrapper over [`assemble_input`] for a live stream.
#[derive(Debug, Clone)]
pub struct InputAssembler {
    scenario: Scenario,
    prev: Option<SensorFrame>,
    next_index: u64,
}

impl InputAssembler {
    pub fn new(scenario: Scenario) -> Self {
        InputAssembler {
            scenario,
            prev: None,
            next_index: 0,
        }
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn push(&mut self, frame: &SensorFrame) -> Result<FrameInput> {
        let out = assemble_input(self.prev.as_ref(), frame, self.scenario, self.next_index)?;
        self.prev = Some(*frame);
        self.next_index += 1;
        Ok(out)
    }

    pub fn reset(&mut self) {
        self.prev = None;
        self.next_index = 0;
    }
}
