//! Synthetic device signals from ground-truth motion.

use nalgebra::Vector3;

use super::motion::MotionSequence;
use super::{DevicePose, ImuSample, SensorFrame};
use crate::body_model::{BodyState, Skeleton, LEFT_KNEE, LEFT_WRIST, PELVIS, RIGHT_KNEE, RIGHT_WRIST};
use crate::error::{Error, Result};

/// `(p[t+1] − 2p[t] + p[t−1])·fps²` at interior frames; the two endpoints
/// copy their nearest interior value.
pub fn second_difference_acceleration(positions: &[Vector3<f64>], fps: f64) -> Result<Vec<Vector3<f64>>> {
    let n = positions.len();
    if n < 3 {
        return Err(Error::TooShort { needed: 3, got: n });
    }
    let fps2 = fps * fps;
    let mut acc = vec![Vector3::zeros(); n];
    for t in 1..n - 1 {
        acc[t] = (positions[t + 1] - 2.0 * positions[t] + positions[t - 1]) * fps2;
    }
    acc[0] = acc[1];
    acc[n - 1] = acc[n - 2];
    Ok(acc)
}

/// Free-acceleration IMU readings for a sensor rigidly attached to `joint`'s
/// bone: orientation is the bone's global rotation, acceleration the second
/// difference of the joint position. No gravity term.
pub fn synthesize_imu(motion: &MotionSequence, skel: &Skeleton, joint: usize, fps: f64) -> Result<Vec<ImuSample>> {
    if motion.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: motion.len(),
        });
    }
    let bodies = motion.bodies(skel)?;
    imu_from_bodies(&bodies, joint, fps)
}

fn imu_from_bodies(bodies: &[BodyState], joint: usize, fps: f64) -> Result<Vec<ImuSample>> {
    let positions: Vec<_> = bodies.iter().map(|b| b.joint_pos[joint]).collect();
    let acc = second_difference_acceleration(&positions, fps)?;
    Ok(bodies
        .iter()
        .zip(acc)
        .enumerate()
        .map(|(t, (b, a))| ImuSample {
            rotation: b.global_rot[joint],
            acceleration: a,
            timestamp: t as f64 / fps,
        })
        .collect())
}

/// Full device streams for a motion: headset at the head joint, controllers
/// at the wrists, IMUs on the pelvis and both lower legs.
pub fn sensor_frames_from_motion(motion: &MotionSequence, skel: &Skeleton) -> Result<Vec<SensorFrame>> {
    if motion.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: motion.len(),
        });
    }
    let fps = motion.fps;
    let bodies = motion.bodies(skel)?;
    let pelvis = imu_from_bodies(&bodies, PELVIS, fps)?;
    let left = imu_from_bodies(&bodies, LEFT_KNEE, fps)?;
    let right = imu_from_bodies(&bodies, RIGHT_KNEE, fps)?;
    let head = skel.head_joint();
    Ok(bodies
        .iter()
        .enumerate()
        .map(|(t, b)| {
            let ts = t as f64 / fps;
            let device = |j: usize| DevicePose {
                position: b.joint_pos[j],
                rotation: b.global_rot[j],
                timestamp: ts,
            };
            SensorFrame {
                head: device(head),
                left_hand: device(LEFT_WRIST),
                right_hand: device(RIGHT_WRIST),
                pelvis: Some(pelvis[t]),
                left_leg: Some(left[t]),
                right_leg: Some(right[t]),
            }
        })
        .collect())
}
