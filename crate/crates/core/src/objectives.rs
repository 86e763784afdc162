//! Training objective, its analytic gradient with respect to network
//! outputs, and evaluation metrics.
//!
//! The loss combines five L1 terms:
//!
//! | term | compares | normalized by |
//! |---|---|---|
//! | `l_ori` | root local 6D | `6T` |
//! | `l_lrot` | all local 6D | `6JT` |
//! | `l_grot` | 6D of global rotations | `6JT` |
//! | `l_joint` | joint positions, m | `3JT` |
//! | `l_smooth` | second differences of joint positions | `3J(T−2)` |
//!
//! and `total = Σ αᵢ · termᵢ`. The smooth term sums over the `T − 2`
//! interior frames where `aᵗ = pᵗ⁺¹ − 2pᵗ + pᵗ⁻¹` exists.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyState, LocalPose, ShapeParams, Skeleton, NUM_JOINTS, NUM_SHAPE};
use crate::error::{Error, Result};
use crate::net::PoseOutput;
use crate::rotmath::{geodesic_angle, matrix_to_rot6d, RotationMatrix};
use crate::sensing::motion::MotionSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ori: f64,
    pub lrot: f64,
    pub grot: f64,
    pub joint: f64,
    pub smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            ori: 1.0,
            lrot: 5.0,
            grot: 1.0,
            joint: 1.0,
            smooth: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_ori: f64,
    pub l_lrot: f64,
    pub l_grot: f64,
    pub l_joint: f64,
    pub l_smooth: f64,
    pub total: f64,
}

/// What the loss compares on one frame, for any joint count. Joint 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTargets {
    pub local6d: Vec<[f64; 6]>,
    pub global6d: Vec<[f64; 6]>,
    pub joints: Vec<Vector3<f64>>,
}

impl LossTargets {
    pub fn new(theta: &LocalPose, body: &BodyState) -> Self {
        LossTargets {
            local6d: theta.0.iter().map(|r| r.0).collect(),
            global6d: body.global_rot.iter().map(|r| matrix_to_rot6d(r).0).collect(),
            joints: body.joint_pos.to_vec(),
        }
    }
}

fn second_difference(p: &[LossTargets], t: usize, j: usize) -> Vector3<f64> {
    p[t + 1].joints[j] - 2.0 * p[t].joints[j] + p[t - 1].joints[j]
}

fn check_lengths(pred: usize, gt: usize) -> Result<()> {
    if pred != gt {
        return Err(Error::LengthMismatch { pred, gt });
    }
    if pred == 0 {
        return Err(Error::Empty);
    }
    Ok(())
}

pub fn loss_from_targets(pred: &[LossTargets], gt: &[LossTargets], w: &LossWeights) -> Result<LossReport> {
    check_lengths(pred.len(), gt.len())?;
    let t_len = pred.len() as f64;
    let j_len = gt[0].joints.len();
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();

    let mut ori = 0.0;
    let mut lrot = 0.0;
    let mut grot = 0.0;
    let mut joint = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        if p.joints.len() != j_len || g.joints.len() != j_len {
            return Err(Error::Dimension {
                what: "joints per frame".into(),
                expected: j_len,
                got: p.joints.len().max(g.joints.len()),
            });
        }
        ori += l1(&p.local6d[0], &g.local6d[0]);
        for j in 0..j_len {
            lrot += l1(&p.local6d[j], &g.local6d[j]);
            grot += l1(&p.global6d[j], &g.global6d[j]);
            joint += l1(p.joints[j].as_slice(), g.joints[j].as_slice());
        }
    }
    let mut smooth = 0.0;
    if pred.len() >= 3 {
        for t in 1..pred.len() - 1 {
            for j in 0..j_len {
                let d = second_difference(pred, t, j) - second_difference(gt, t, j);
                smooth += d.abs().sum();
            }
        }
        smooth /= (pred.len() - 2) as f64 * 3.0 * j_len as f64;
    }
    let mut r = LossReport {
        l_ori: ori / (6.0 * t_len),
        l_lrot: lrot / (6.0 * j_len as f64 * t_len),
        l_grot: grot / (6.0 * j_len as f64 * t_len),
        l_joint: joint / (3.0 * j_len as f64 * t_len),
        l_smooth: smooth,
        total: 0.0,
    };
    r.total = w.ori * r.l_ori + w.lrot * r.l_lrot + w.grot * r.l_grot + w.joint * r.l_joint + w.smooth * r.l_smooth;
    Ok(r)
}

/// Ground truth goes through the same head-anchored placement as
/// predictions, so identical parameters give identical targets.
fn ground_truth_targets(gt: &MotionSequence, skel: &Skeleton) -> Result<Vec<LossTargets>> {
    gt.bodies(skel)?
        .iter()
        .zip(&gt.frames)
        .map(|(b, f)| {
            let body = skel.forward_kinematics_anchored(&gt.shape, &f.theta, &b.joint_pos[skel.head_joint()])?;
            Ok(LossTargets::new(&f.theta, &body))
        })
        .collect()
}

/// Loss of predicted poses against a ground-truth motion.
pub fn loss_terms(pred: &[PoseOutput], gt: &MotionSequence, skel: &Skeleton, w: &LossWeights) -> Result<LossReport> {
    check_lengths(pred.len(), gt.len())?;
    let p: Vec<LossTargets> = pred.iter().map(|o| LossTargets::new(&o.theta, &o.body)).collect();
    loss_from_targets(&p, &ground_truth_targets(gt, skel)?, w)
}

/// Bodies for raw predictions, each anchored at the ground-truth head position.
pub fn anchored_predictions(
    theta: &[LocalPose],
    beta: &[ShapeParams],
    gt: &MotionSequence,
    skel: &Skeleton,
) -> Result<Vec<PoseOutput>> {
    check_lengths(theta.len(), gt.len())?;
    check_lengths(beta.len(), gt.len())?;
    let gt_bodies = gt.bodies(skel)?;
    theta
        .iter()
        .zip(beta)
        .zip(&gt_bodies)
        .map(|((th, b), g)| {
            let body = skel.forward_kinematics_anchored(b, th, &g.joint_pos[skel.head_joint()])?;
            Ok(PoseOutput {
                theta: *th,
                beta: *b,
                body,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub report: LossReport,
    /// Per frame, `∂L/∂θ` in joint-major 6D order.
    pub d_theta: Vec<[f64; 6 * NUM_JOINTS]>,
    pub d_beta: Vec<[f64; NUM_SHAPE]>,
}

/// `sign(x)` with 0 at exactly 0.
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Total loss and its gradient with respect to raw network outputs, with
/// predicted bodies anchored at the ground-truth head positions.
pub fn loss_gradient(
    theta: &[LocalPose],
    beta: &[ShapeParams],
    gt: &MotionSequence,
    skel: &Skeleton,
    w: &LossWeights,
) -> Result<LossGradient> {
    let pred = anchored_predictions(theta, beta, gt, skel)?;
    let p: Vec<LossTargets> = pred.iter().map(|o| LossTargets::new(&o.theta, &o.body)).collect();
    let g = ground_truth_targets(gt, skel)?;
    let report = loss_from_targets(&p, &g, w)?;

    let n = pred.len();
    let nj = NUM_JOINTS;
    let tf = n as f64;
    let head = skel.head_joint();

    // ∂L/∂(anchored joint positions), per frame
    let mut d_pos = vec![DVector::<f64>::zeros(3 * nj); n];
    for t in 0..n {
        for j in 0..nj {
            for a in 0..3 {
                d_pos[t][3 * j + a] += w.joint * sgn(p[t].joints[j][a] - g[t].joints[j][a]) / (3.0 * nj as f64 * tf);
            }
        }
    }
    if n >= 3 {
        let norm = w.smooth / ((n - 2) as f64 * 3.0 * nj as f64);
        for t in 1..n - 1 {
            for j in 0..nj {
                let d = second_difference(&p, t, j) - second_difference(&g, t, j);
                for a in 0..3 {
                    let s = sgn(d[a]) * norm;
                    d_pos[t + 1][3 * j + a] += s;
                    d_pos[t][3 * j + a] -= 2.0 * s;
                    d_pos[t - 1][3 * j + a] += s;
                }
            }
        }
    }

    let mut d_theta = Vec::with_capacity(n);
    let mut d_beta = Vec::with_capacity(n);
    for t in 0..n {
        let lin = skel.linearize(&beta[t], &theta[t])?;
        let jp = lin.position_jacobian(skel);
        let js = lin.shape_jacobian(skel);
        let jg = lin.global_rot6d_jacobian(skel);

        // anchoring: p_j − p_head + head_gt, so each joint row loses the head row
        let mut head_grad = [0.0; 3];
        for j in 0..nj {
            for a in 0..3 {
                head_grad[a] += d_pos[t][3 * j + a];
            }
        }
        let mut eff = d_pos[t].clone();
        for a in 0..3 {
            eff[3 * head + a] -= head_grad[a];
        }

        let mut d_glob = DVector::<f64>::zeros(6 * nj);
        for j in 0..nj {
            for c in 0..6 {
                d_glob[6 * j + c] = w.grot * sgn(p[t].global6d[j][c] - g[t].global6d[j][c]) / (6.0 * nj as f64 * tf);
            }
        }
        let gt_theta = jp.transpose() * &eff + jg.transpose() * &d_glob;
        let gb = js.transpose() * &eff;

        let mut dt = [0.0; 6 * NUM_JOINTS];
        for j in 0..nj {
            for c in 0..6 {
                let i = 6 * j + c;
                dt[i] = gt_theta[i] + w.lrot * sgn(p[t].local6d[j][c] - g[t].local6d[j][c]) / (6.0 * nj as f64 * tf);
            }
        }
        for c in 0..6 {
            dt[c] += w.ori * sgn(p[t].local6d[0][c] - g[t].local6d[0][c]) / (6.0 * tf);
        }
        let mut db = [0.0; NUM_SHAPE];
        db.copy_from_slice(gb.as_slice());
        d_theta.push(dt);
        d_beta.push(db);
    }
    Ok(LossGradient {
        report,
        d_theta,
        d_beta,
    })
}

// ---------------------------------------------------------------------------
// Metrics

/// Joint index sets for the subset position errors.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSets {
    pub hands: Vec<usize>,
    pub upper: Vec<usize>,
    pub lower: Vec<usize>,
    pub root: Vec<usize>,
}

impl JointSets {
    pub fn from_skeleton(skel: &Skeleton) -> Result<Self> {
        let get = |name: &str| {
            skel.joint_set(name)
                .map(<[usize]>::to_vec)
                .ok_or_else(|| Error::Parse(format!("skeleton has no `{name}` joint set")))
        };
        Ok(JointSets {
            hands: get("hands")?,
            upper: get("upper")?,
            lower: get("lower")?,
            root: get("root")?,
        })
    }
}

/// Global joint rotations and positions on one frame, for any joint count.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricFrame {
    pub global_rot: Vec<RotationMatrix>,
    pub joints: Vec<Vector3<f64>>,
}

impl From<&BodyState> for MetricFrame {
    fn from(b: &BodyState) -> Self {
        MetricFrame {
            global_rot: b.global_rot.to_vec(),
            joints: b.joint_pos.to_vec(),
        }
    }
}

pub const MPJRE_CONVENTION: &str = "geodesic angle of global joint rotations";
pub const ROTATION_LOSS_CONVENTION: &str = "L1 on column-major 6D";
pub const JITTER_CONVENTION: &str = "third difference of predicted positions only";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    /// degrees
    pub mpjre: f64,
    /// cm
    pub mpjpe: f64,
    /// cm/s; absent below two frames
    pub mpjve: Option<f64>,
    /// 10² m/s³; absent below four frames
    pub jitter: Option<f64>,
    pub h_pe: f64,
    pub u_pe: f64,
    pub l_pe: f64,
    pub r_pe: f64,
    /// Inference throughput, Hz, when measured.
    pub fps: Option<f64>,
    pub frames: usize,
}

impl MetricReport {
    pub fn units() -> serde_json::Value {
        serde_json::json!({
            "mpjre": "deg",
            "mpjpe": "cm",
            "mpjve": "cm/s",
            "jitter": "1e2 m/s^3",
            "h_pe": "cm",
            "u_pe": "cm",
            "l_pe": "cm",
            "r_pe": "cm",
            "fps": "Hz",
        })
    }

    pub fn conventions() -> serde_json::Value {
        serde_json::json!({
            "mpjre": MPJRE_CONVENTION,
            "rotation_loss": ROTATION_LOSS_CONVENTION,
            "jitter": JITTER_CONVENTION,
            "rot6d_layout": "column-major (first two columns)",
        })
    }

    /// The report with its unit and convention tags.
    pub fn to_tagged_json(&self) -> serde_json::Value {
        serde_json::json!({
            "metrics": self,
            "units": Self::units(),
            "conventions": Self::conventions(),
        })
    }

    pub fn is_finite(&self) -> bool {
        [self.mpjre, self.mpjpe, self.h_pe, self.u_pe, self.l_pe, self.r_pe]
            .iter()
            .chain(self.mpjve.iter())
            .chain(self.jitter.iter())
            .chain(self.fps.iter())
            .all(|v| v.is_finite())
    }
}

fn mean_position_error(pred: &[MetricFrame], gt: &[MetricFrame], set: &[usize]) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        for &j in set {
            sum += (p.joints[j] - g.joints[j]).norm();
        }
    }
    sum / (pred.len() * set.len()) as f64
}

pub fn metrics_from_frames(pred: &[MetricFrame], gt: &[MetricFrame], sets: &JointSets, fps: f64) -> Result<MetricReport> {
    check_lengths(pred.len(), gt.len())?;
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::InvalidConfig(format!("fps must be positive, got {fps}")));
    }
    let n = pred.len();
    let nj = gt[0].joints.len();
    for f in pred.iter().chain(gt) {
        if f.joints.len() != nj || f.global_rot.len() != nj {
            return Err(Error::Dimension {
                what: "joints per frame".into(),
                expected: nj,
                got: f.joints.len(),
            });
        }
    }
    if let Some(&bad) = [&sets.hands, &sets.upper, &sets.lower, &sets.root]
        .iter()
        .flat_map(|s| s.iter())
        .find(|&&j| j >= nj)
    {
        return Err(Error::Dimension {
            what: "joint set index".into(),
            expected: nj,
            got: bad,
        });
    }
    let all: Vec<usize> = (0..nj).collect();

    let mut rot = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        for j in 0..nj {
            rot += geodesic_angle(&p.global_rot[j], &g.global_rot[j]);
        }
    }
    let mpjre = (rot / (n * nj) as f64).to_degrees();

    let mpjve = (n >= 2).then(|| {
        let mut s = 0.0;
        for t in 1..n {
            for j in 0..nj {
                let vp = (pred[t].joints[j] - pred[t - 1].joints[j]) * fps;
                let vg = (gt[t].joints[j] - gt[t - 1].joints[j]) * fps;
                s += (vp - vg).norm();
            }
        }
        100.0 * s / ((n - 1) * nj) as f64
    });

    let jitter = (n >= 4).then(|| {
        let fps3 = fps * fps * fps;
        let mut s = 0.0;
        for t in 2..n - 1 {
            for j in 0..nj {
                let p = |k: usize| pred[k].joints[j];
                s += (p(t + 1) - 3.0 * p(t) + 3.0 * p(t - 1) - p(t - 2)).norm() * fps3;
            }
        }
        s / ((n - 3) * nj) as f64 / 100.0
    });

    Ok(MetricReport {
        mpjre,
        mpjpe: 100.0 * mean_position_error(pred, gt, &all),
        mpjve,
        jitter,
        h_pe: 100.0 * mean_position_error(pred, gt, &sets.hands),
        u_pe: 100.0 * mean_position_error(pred, gt, &sets.upper),
        l_pe: 100.0 * mean_position_error(pred, gt, &sets.lower),
        r_pe: 100.0 * mean_position_error(pred, gt, &sets.root),
        fps: None,
        frames: n,
    })
}

pub fn metrics(pred: &[BodyState], gt: &[BodyState], skel: &Skeleton, fps: f64) -> Result<MetricReport> {
    let p: Vec<MetricFrame> = pred.iter().map(MetricFrame::from).collect();
    let g: Vec<MetricFrame> = gt.iter().map(MetricFrame::from).collect();
    metrics_from_frames(&p, &g, &JointSets::from_skeleton(skel)?, fps)
}

/// Frame-weighted mean of per-sequence reports. Optional fields average
/// over the reports that have them.
pub fn aggregate_reports(reports: &[MetricReport]) -> Result<MetricReport> {
    let total: usize = reports.iter().map(|r| r.frames).sum();
    if reports.is_empty() || total == 0 {
        return Err(Error::Empty);
    }
    let mean = |f: &dyn Fn(&MetricReport) -> f64| {
        reports.iter().map(|r| f(r) * r.frames as f64).sum::<f64>() / total as f64
    };
    let mean_opt = |f: &dyn Fn(&MetricReport) -> Option<f64>| {
        let (s, w) = reports
            .iter()
            .filter_map(|r| f(r).map(|v| (v * r.frames as f64, r.frames as f64)))
            .fold((0.0, 0.0), |(a, b), (v, w)| (a + v, b + w));
        (w > 0.0).then(|| s / w)
    };
    Ok(MetricReport {
        mpjre: mean(&|r| r.mpjre),
        mpjpe: mean(&|r| r.mpjpe),
        mpjve: mean_opt(&|r| r.mpjve),
        jitter: mean_opt(&|r| r.jitter),
        h_pe: mean(&|r| r.h_pe),
        u_pe: mean(&|r| r.u_pe),
        l_pe: mean(&|r| r.l_pe),
        r_pe: mean(&|r| r.r_pe),
        fps: mean_opt(&|r| r.fps),
        frames: total,
    })
}
