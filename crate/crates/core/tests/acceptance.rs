//! Acceptance suite. Each test prints one `criterion N PASS|FAIL` line to
//! stdout (uncaptured) and then asserts.
//!
//! Reference values are computed here from first principles (finite
//! differences, brute-force sums, closed forms) rather than by calling the
//! routine under test a second time.

use std::io::Write;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sparsepose::body_model::{BodyState, LocalPose, ShapeParams, Skeleton, NUM_JOINTS, NUM_SHAPE};
use sparsepose::harness::{self, procedural_motion, BenchConfig, EvalSequence};
use sparsepose::net::{forward_clip, forward_step, init_weights, ModelConfig, NetworkWeights, PoseOutput, StreamState};
use sparsepose::objectives::{
    anchored_predictions, loss_from_targets, loss_gradient, loss_terms, metrics_from_frames, JointSets, LossTargets,
    LossWeights, MetricFrame,
};
use sparsepose::rotmath::{matrix_to_rot6d, random_rotation, rot6d_to_matrix, Rot6D, RotationMatrix};
use sparsepose::sensing::calibration::{calibrate, ScriptedCapture};
use sparsepose::sensing::imu::{second_difference_acceleration, synthesize_imu};
use sparsepose::sensing::motion::{MotionFrame, MotionSequence};
use sparsepose::sensing::{Component, FrameInput, Scenario, BLOCK_BOUNDS, INPUT_DIM};
use sparsepose::Error;

// Timing-sensitive criteria must not share the CPU with other tests.
static SERIAL: Mutex<()> = Mutex::new(());

fn criterion(n: u32, title: &str, check: impl FnOnce() -> Result<String, String>) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let outcome = check();
    let secs = start.elapsed().as_secs_f64();
    let line = match &outcome {
        Ok(detail) => format!("criterion {n:>2} PASS  {title} [{detail}; {secs:.2} s]"),
        Err(why) => format!("criterion {n:>2} FAIL  {title} [{why}; {secs:.2} s]"),
    };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
    drop(out);
    if let Err(why) = outcome {
        panic!("criterion {n}: {why}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn full_weights() -> &'static NetworkWeights {
    static W: OnceLock<NetworkWeights> = OnceLock::new();
    W.get_or_init(|| init_weights(&ModelConfig::default(), 2024).unwrap())
}

fn raw_pose(rng: &mut ChaCha8Rng) -> LocalPose {
    let mut theta = LocalPose::identity();
    for r in theta.0.iter_mut() {
        let mut v = matrix_to_rot6d(&random_rotation(rng)).0;
        for x in v.iter_mut() {
            *x = *x * rng.random_range(0.7..1.3) + rng.random_range(-0.2..0.2);
        }
        *r = Rot6D(v);
    }
    theta
}

fn random_shape(rng: &mut ChaCha8Rng, range: f64) -> ShapeParams {
    let mut b = ShapeParams::zero();
    b.0.iter_mut().for_each(|v| *v = rng.random_range(-range..range));
    b
}

fn max_abs(m: &Matrix3<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Norm-wise relative error `max|a − b| / max|b|`.
fn relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = analytic.iter().zip(reference).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    err / scale
}

#[test]
fn c01_rotation_roundtrip() {
    criterion(1, "rotation matrix <-> 6D roundtrip and Gram-Schmidt", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst_roundtrip = 0.0f64;
        let mut worst_ortho = 0.0f64;
        for _ in 0..10_000 {
            let r = random_rotation(&mut rng);
            let back = rot6d_to_matrix(&matrix_to_rot6d(&r)).map_err(|e| e.to_string())?;
            worst_roundtrip = worst_roundtrip.max(max_abs(&(back.matrix() - r.matrix())));

            let v: [f64; 6] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
            let g = match rot6d_to_matrix(&Rot6D(v)) {
                Ok(g) => *g.matrix(),
                Err(_) => continue,
            };
            worst_ortho = worst_ortho.max(max_abs(&(g.transpose() * g - Matrix3::identity())));
            worst_ortho = worst_ortho.max((g.determinant() - 1.0).abs());
            // first column is the normalized first input column
            let a1 = Vector3::new(v[0], v[1], v[2]).normalize();
            worst_ortho = worst_ortho.max((g.column(0) - a1).abs().max());
        }
        let elapsed = start.elapsed().as_secs_f64();
        ensure(worst_roundtrip <= 1e-9, || format!("roundtrip error {worst_roundtrip:e}"))?;
        ensure(worst_ortho <= 1e-9, || format!("orthonormality error {worst_ortho:e}"))?;
        ensure(elapsed < 1.0, || format!("took {elapsed:.2} s"))?;
        Ok(format!("roundtrip {worst_roundtrip:.1e}, orthonormality {worst_ortho:.1e}"))
    });
}

#[test]
fn c02_fk_jacobian() {
    criterion(2, "FK Jacobians vs central differences, chain sparsity", || {
        let start = Instant::now();
        let skel = Skeleton::default_skeleton();
        let mut ancestors = [[false; NUM_JOINTS]; NUM_JOINTS];
        for (j, row) in ancestors.iter_mut().enumerate() {
            let mut k = j;
            while let Some(p) = skel.parent(k) {
                row[p] = true;
                k = p;
            }
        }
        let h = 1e-6;
        let zero = Vector3::zeros();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut worst_theta, mut worst_beta) = (0.0f64, 0.0f64);
        for _ in 0..100 {
            let theta = raw_pose(&mut rng);
            let beta = random_shape(&mut rng, 3.0);
            let jp = skel.position_jacobian(&beta, &theta).map_err(|e| e.to_string())?;
            let js = skel.shape_jacobian(&beta, &theta).map_err(|e| e.to_string())?;
            let pos = |b: &ShapeParams, t: &LocalPose| -> Vec<f64> {
                let body = skel.forward_kinematics(b, t, &zero).unwrap();
                body.joint_pos.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
            };

            let flat = theta.to_flat();
            let (mut ana, mut num) = (Vec::new(), Vec::new());
            for i in 0..6 * NUM_JOINTS {
                let mut up = flat.clone();
                up[i] += h;
                let mut dn = flat.clone();
                dn[i] -= h;
                let pu = pos(&beta, &LocalPose::from_flat(&up).unwrap());
                let pd = pos(&beta, &LocalPose::from_flat(&dn).unwrap());
                for r in 0..3 * NUM_JOINTS {
                    let fd = (pu[r] - pd[r]) / (2.0 * h);
                    let a = jp[(r, i)];
                    let (j, k) = (r / 3, i / 6);
                    if !ancestors[j][k] {
                        ensure(a == 0.0 && pu[r] == pd[r], || format!("joint {j} depends on θ_{k}"))?;
                    }
                    ana.push(a);
                    num.push(fd);
                }
            }
            for j in 0..NUM_JOINTS {
                for k in 0..NUM_JOINTS {
                    if ancestors[j][k] {
                        let block_nonzero = (0..3).any(|a| (0..6).any(|b| jp[(3 * j + a, 6 * k + b)] != 0.0));
                        ensure(block_nonzero, || format!("ancestor block ({j}, {k}) is zero"))?;
                    }
                }
            }
            worst_theta = worst_theta.max(relative_error(&ana, &num));

            let (mut ana, mut num) = (Vec::new(), Vec::new());
            for k in 0..NUM_SHAPE {
                let mut up = beta;
                up.0[k] += h;
                let mut dn = beta;
                dn.0[k] -= h;
                let (pu, pd) = (pos(&up, &theta), pos(&dn, &theta));
                for r in 0..3 * NUM_JOINTS {
                    ana.push(js[(r, k)]);
                    num.push((pu[r] - pd[r]) / (2.0 * h));
                }
            }
            worst_beta = worst_beta.max(relative_error(&ana, &num));
        }
        let elapsed = start.elapsed().as_secs_f64();
        ensure(worst_theta <= 1e-6, || format!("θ relative error {worst_theta:e}"))?;
        ensure(worst_beta <= 1e-6, || format!("β relative error {worst_beta:e}"))?;
        ensure(elapsed < 10.0, || format!("took {elapsed:.2} s"))?;
        Ok(format!("θ {worst_theta:.1e}, β {worst_beta:.1e}, 100 configs"))
    });
}

#[test]
fn c03_head_anchoring() {
    criterion(3, "head anchoring closure", || {
        let skel = Skeleton::default_skeleton();
        let head = 15;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let theta = raw_pose(&mut rng);
            let beta = random_shape(&mut rng, 4.0);
            let target = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(0.0..2.5), rng.random_range(-5.0..5.0));
            let body = skel.forward_kinematics_anchored(&beta, &theta, &target).map_err(|e| e.to_string())?;
            worst = worst.max((body.joint_pos[head] - target).abs().max());
            let root = skel.anchor_root_from_head(&beta, &theta, &target).map_err(|e| e.to_string())?;
            let body = skel.forward_kinematics(&beta, &theta, &root).map_err(|e| e.to_string())?;
            worst = worst.max((body.joint_pos[head] - target).abs().max());
        }
        ensure(worst <= 1e-12, || format!("double path error {worst:e}"))?;

        let mut worst_net = 0.0f64;
        let mut n = 0;
        for seed in 0..10u64 {
            let w = init_weights(&ModelConfig::small(), seed).unwrap();
            let mut state = StreamState::new(&w.config);
            for x in random_inputs(&mut rng, 100) {
                let y = forward_step(&mut state, &x, &w, &skel).map_err(|e| e.to_string())?;
                worst_net = worst_net.max((y.body.joint_pos[head] - x.head_position()).abs().max());
                n += 1;
            }
        }
        ensure(worst_net <= 1e-6, || format!("network path error {worst_net:e}"))?;
        Ok(format!("double {worst:.1e}, network {worst_net:.1e} over {n} frames"))
    });
}

/// Structurally valid frames with random content and a random sensor set.
fn random_inputs(rng: &mut ChaCha8Rng, n: usize) -> Vec<FrameInput> {
    let scenarios = [Scenario::Hmd, Scenario::Hmd2Imus, Scenario::Hmd3Imus];
    (0..n)
        .map(|i| {
            let s = scenarios[rng.random_range(0..3)];
            let mask = s.present();
            let mut x = [0.0; INPUT_DIM];
            for c in Component::ALL {
                if !mask[c.index()] {
                    continue;
                }
                let r = c.range();
                let mut k = r.start;
                for q in c.layout() {
                    if q.width() == 6 {
                        let v = matrix_to_rot6d(&random_rotation(rng)).0;
                        x[k..k + 6].copy_from_slice(&v);
                    } else {
                        for v in &mut x[k..k + 3] {
                            *v = rng.random_range(-3.0..3.0);
                        }
                    }
                    k += q.width();
                }
            }
            FrameInput::new(x, mask, i as u64, 1.0 / 60.0).unwrap()
        })
        .collect()
}

#[test]
fn c04_input_layout() {
    criterion(4, "input layout conformance and validator", || {
        let skel = Skeleton::default_skeleton();
        ensure(BLOCK_BOUNDS == [0, 18, 36, 54, 69, 84, 99, 117, 135], || "block bounds".into())?;
        let widths: Vec<usize> = Component::ALL.iter().map(|c| c.range().len()).collect();
        ensure(widths == [18, 18, 18, 15, 15, 15, 18, 18], || format!("widths {widths:?}"))?;
        ensure(INPUT_DIM == 135, || "input dim".into())?;

        let motion = procedural_motion(4, 30, 60.0);
        let bodies = motion.bodies(&skel).unwrap();
        let full = EvalSequence::from_motion("m", &motion, &skel, Scenario::Hmd3Imus).map_err(|e| e.to_string())?;
        let hmd = EvalSequence::from_motion("m", &motion, &skel, Scenario::Hmd).map_err(|e| e.to_string())?;
        for ((f, h), b) in full.inputs.iter().zip(&hmd.inputs).zip(&bodies) {
            ensure(f.x.len() == 135, || "length".into())?;
            ensure(h.x[54..99].iter().all(|&v| v == 0.0), || "HMD padding not zero".into())?;
            ensure(f.x[54..99].iter().any(|&v| v != 0.0), || "IMU blocks empty with IMUs".into())?;
            ensure(h.mask == [true, true, true, false, false, false, true, true], || "HMD mask".into())?;
            ensure(h.x[..54] == f.x[..54] && h.x[99..] == f.x[99..], || "HMD blocks differ".into())?;
            let head = b.joint_pos[15];
            ensure(f.x[0..3] == [head.x, head.y, head.z], || "head position slot".into())?;
        }

        let base = full.inputs[5].clone();
        let rejects = |name: &str, x: [f64; INPUT_DIM], mask: [bool; 8], dt: f64| -> Result<(), String> {
            match FrameInput::new(x, mask, 0, dt) {
                Err(_) => Ok(()),
                Ok(_) => Err(format!("validator accepted {name}")),
            }
        };
        let mut hmd_mask = base.mask;
        hmd_mask[3..6].copy_from_slice(&[false; 3]);
        rejects("unpadded absent block", base.x, hmd_mask, base.dt)?;
        let mut x = base.x;
        x[40] = f64::NAN;
        rejects("NaN", x, base.mask, base.dt)?;
        let mut no_head = base.mask;
        no_head[0] = false;
        rejects("missing head", base.x, no_head, base.dt)?;
        let mut x = base.x;
        x[6..12].fill(0.0);
        rejects("degenerate rotation", x, base.mask, base.dt)?;
        rejects("zero dt", base.x, base.mask, 0.0)?;
        let mut buf = Vec::new();
        harness::dataset::write_dataset(std::slice::from_ref(&full), &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let short = line.replacen("\"x\":[", "\"x\":[0.0,", 1);
        let code = harness::dataset::read_dataset(short.as_bytes()).err().map(|e| e.exit_code());
        ensure(code == Some(2), || format!("136-long vector gave {code:?}, expected a parse failure"))?;
        Ok("bounds, HMD zeroing and 6 rejection cases".into())
    });
}

fn outputs_equal(a: &[PoseOutput], b: &[PoseOutput]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            let bits = |p: &PoseOutput| -> Vec<u64> {
                p.theta.0.iter().flat_map(|r| r.0).chain(p.beta.0).map(f64::to_bits).collect()
            };
            bits(x) == bits(y) && x.body == y.body
        })
}

#[test]
fn c05_mask_invariance() {
    criterion(5, "outputs ignore masked-absent components", || {
        let skel = Skeleton::default_skeleton();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let motion = procedural_motion(5, 12, 60.0);
        let seq = EvalSequence::from_motion("m", &motion, &skel, Scenario::Hmd3Imus).unwrap();
        let run = |w: &NetworkWeights, xs: &[FrameInput]| -> Vec<PoseOutput> {
            let mut state = StreamState::new(&w.config);
            xs.iter().map(|x| forward_step(&mut state, x, w, &skel).unwrap()).collect()
        };
        let mut pairs = 0;
        let mut check = |w: &NetworkWeights, rng: &mut ChaCha8Rng| -> Result<(), String> {
            let drop: Vec<Component> = match rng.random_range(0..3) {
                0 => vec![Component::Pelvis, Component::LeftLeg, Component::RightLeg],
                1 => vec![Component::Pelvis],
                _ => vec![Component::LeftLeg],
            };
            let clean: Vec<FrameInput> = seq.inputs.iter().map(|x| x.with_components_removed(&drop)).collect();
            let noisy: Vec<FrameInput> = clean
                .iter()
                .map(|x| {
                    let mut y = x.clone();
                    for c in &drop {
                        for v in &mut y.x[c.range()] {
                            *v = if rng.random_bool(0.05) { f64::NAN } else { rng.random_range(-50.0..50.0) };
                        }
                    }
                    y
                })
                .collect();
            pairs += 1;
            ensure(outputs_equal(&run(w, &clean), &run(w, &noisy)), || format!("pair {pairs} differs"))
        };
        for seed in 0..100u64 {
            check(&init_weights(&ModelConfig::small(), 1000 + seed).unwrap(), &mut rng)?;
        }
        for _ in 0..3 {
            check(full_weights(), &mut rng)?;
        }
        Ok(format!("{pairs} pairs bit-identical (100 reduced-width, 3 reference-width)"))
    });
}

#[test]
fn c06_streaming_equivalence() {
    criterion(6, "clip == iterated steps, causal prefixes", || {
        let skel = Skeleton::default_skeleton();
        let w = full_weights();
        let motion = procedural_motion(6, 80, 60.0);
        let inputs = EvalSequence::from_motion("m", &motion, &skel, Scenario::Hmd2Imus).unwrap().inputs;
        let whole = forward_clip(w, &inputs, &skel).map_err(|e| e.to_string())?;
        let mut state = StreamState::new(&w.config);
        let stepped: Vec<PoseOutput> = inputs.iter().map(|x| forward_step(&mut state, x, w, &skel).unwrap()).collect();
        ensure(outputs_equal(&whole, &stepped), || "clip differs from stepping".into())?;
        for len in [1, 17, 40] {
            let prefix = forward_clip(w, &inputs[..len], &skel).unwrap();
            ensure(outputs_equal(&prefix, &whole[..len]), || format!("prefix {len} differs"))?;
        }
        let second = forward_clip(w, &inputs[40..], &skel).unwrap();
        let mut fresh = StreamState::new(&w.config);
        let restarted: Vec<PoseOutput> = inputs[40..].iter().map(|x| forward_step(&mut fresh, x, w, &skel).unwrap()).collect();
        ensure(outputs_equal(&second, &restarted), || "second 40-frame clip differs".into())?;
        Ok("80 frames, prefixes 1/17/40, two 40-frame clips".into())
    });
}

fn id6() -> [f64; 6] {
    [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
}

#[test]
fn c07_loss_correctness() {
    criterion(7, "loss terms, composition and smoothness normalizer", || {
        let w = LossWeights::default();
        ensure(
            (w.ori, w.lrot, w.grot, w.joint, w.smooth) == (1.0, 5.0, 1.0, 1.0, 0.5),
            || format!("default weights {w:?}"),
        )?;

        // two joints, three frames; one perturbation per term
        let gt: Vec<LossTargets> = (0..3)
            .map(|_| LossTargets {
                local6d: vec![id6(), id6()],
                global6d: vec![id6(), id6()],
                joints: vec![Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0)],
            })
            .collect();
        let mut pred = gt.clone();
        pred[0].local6d[0][0] += 0.3;
        pred[1].local6d[1][4] -= 0.6;
        pred[1].global6d[1][2] += 1.2;
        pred[1].joints[1].x += 0.3;
        pred[2].joints[0].z -= 0.9;
        let r = loss_from_targets(&pred, &gt, &w).map_err(|e| e.to_string())?;
        // l_ori = 0.3/(6·3); l_lrot = 0.9/(6·2·3); l_grot = 1.2/36; l_joint = 1.2/(3·2·3);
        // l_smooth = (0.9 + 2·0.3)/(1·3·2); total = 11/30
        let want = [1.0 / 60.0, 0.025, 1.0 / 30.0, 1.0 / 15.0, 0.25, 11.0 / 30.0];
        let got = [r.l_ori, r.l_lrot, r.l_grot, r.l_joint, r.l_smooth, r.total];
        for (g, e) in got.iter().zip(&want) {
            ensure((g - e).abs() <= 1e-12, || format!("got {got:?}, want {want:?}"))?;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let random_targets = |rng: &mut ChaCha8Rng| -> Vec<LossTargets> {
            (0..5)
                .map(|_| LossTargets {
                    local6d: (0..NUM_JOINTS).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(),
                    global6d: (0..NUM_JOINTS).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(),
                    joints: (0..NUM_JOINTS).map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect(),
                })
                .collect()
        };
        let (p, g) = (random_targets(&mut rng), random_targets(&mut rng));
        let r = loss_from_targets(&p, &g, &w).unwrap();
        let composed = 1.0 * r.l_ori + 5.0 * r.l_lrot + 1.0 * r.l_grot + 1.0 * r.l_joint + 0.5 * r.l_smooth;
        ensure(r.total == composed, || format!("total {} != composition {composed}", r.total))?;

        let mut brute = 0.0;
        let mut count = 0usize;
        for t in 1..4 {
            for j in 0..NUM_JOINTS {
                for a in 0..3 {
                    let acc = |s: &[LossTargets]| s[t + 1].joints[j][a] - 2.0 * s[t].joints[j][a] + s[t - 1].joints[j][a];
                    brute += (acc(&p) - acc(&g)).abs();
                    count += 1;
                }
            }
        }
        ensure(count == 3 * 3 * NUM_JOINTS, || "term count".into())?;
        let brute = brute / count as f64;
        ensure((r.l_smooth - brute).abs() <= 1e-12, || format!("smooth {} vs brute force {brute}", r.l_smooth))?;
        Ok(format!("toy total {:.6}, smooth normalizer (T-2)·3J = {count}", 11.0 / 30.0))
    });
}

fn random_motion(rng: &mut ChaCha8Rng, n: usize) -> MotionSequence {
    MotionSequence {
        fps: 60.0,
        shape: random_shape(rng, 2.0),
        frames: (0..n)
            .map(|_| MotionFrame {
                root_translation: Vector3::new(rng.random(), rng.random(), rng.random()),
                theta: LocalPose(std::array::from_fn(|_| matrix_to_rot6d(&random_rotation(rng)))),
            })
            .collect(),
    }
}

fn total_loss(theta: &[LocalPose], beta: &[ShapeParams], gt: &MotionSequence, skel: &Skeleton) -> f64 {
    let pred = anchored_predictions(theta, beta, gt, skel).unwrap();
    loss_terms(&pred, gt, skel, &LossWeights::default()).unwrap().total
}

/// Smallest |argument| of any L1 term that moves with the parameters. The
/// anchored head joint sits on its target by construction and is skipped.
fn min_residual(theta: &[LocalPose], beta: &[ShapeParams], gt: &MotionSequence, skel: &Skeleton) -> f64 {
    let pred = anchored_predictions(theta, beta, gt, skel).unwrap();
    let gt_bodies: Vec<BodyState> = gt.bodies(skel).unwrap();
    let targets = |th: &LocalPose, b: &BodyState| LossTargets::new(th, b);
    let p: Vec<LossTargets> = pred.iter().map(|o| targets(&o.theta, &o.body)).collect();
    let g: Vec<LossTargets> = gt.frames.iter().zip(&gt_bodies).map(|(f, b)| targets(&f.theta, b)).collect();
    let mut m = f64::INFINITY;
    for t in 0..p.len() {
        for j in 0..NUM_JOINTS {
            for c in 0..6 {
                m = m.min((p[t].local6d[j][c] - g[t].local6d[j][c]).abs());
                m = m.min((p[t].global6d[j][c] - g[t].global6d[j][c]).abs());
            }
            if j == skel.head_joint() {
                continue;
            }
            m = m.min((p[t].joints[j] - g[t].joints[j]).abs().min());
            if t >= 1 && t + 1 < p.len() {
                let acc = |s: &[LossTargets]| s[t + 1].joints[j] - 2.0 * s[t].joints[j] + s[t - 1].joints[j];
                m = m.min((acc(&p) - acc(&g)).abs().min());
            }
        }
    }
    m
}

#[test]
fn c08_loss_gradients() {
    criterion(8, "loss gradients vs central differences", || {
        let start = Instant::now();
        let skel = Skeleton::default_skeleton();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-6;
        let t_len = 4;
        let (mut worst_theta, mut worst_beta) = (0.0f64, 0.0f64);
        let (mut accepted, mut skipped) = (0, 0);
        while accepted < 50 {
            let gt = random_motion(&mut rng, t_len);
            let mut theta: Vec<LocalPose> = (0..t_len).map(|_| raw_pose(&mut rng)).collect();
            let mut beta: Vec<ShapeParams> = (0..t_len).map(|_| random_shape(&mut rng, 2.0)).collect();
            if min_residual(&theta, &beta, &gt, &skel) < 1e-4 {
                skipped += 1;
                continue;
            }
            accepted += 1;
            let g = loss_gradient(&theta, &beta, &gt, &skel, &LossWeights::default()).map_err(|e| e.to_string())?;
            let (mut ana, mut num) = (Vec::new(), Vec::new());
            for t in 0..t_len {
                for i in 0..6 * NUM_JOINTS {
                    let orig = theta[t].0[i / 6].0[i % 6];
                    theta[t].0[i / 6].0[i % 6] = orig + h;
                    let up = total_loss(&theta, &beta, &gt, &skel);
                    theta[t].0[i / 6].0[i % 6] = orig - h;
                    let dn = total_loss(&theta, &beta, &gt, &skel);
                    theta[t].0[i / 6].0[i % 6] = orig;
                    num.push((up - dn) / (2.0 * h));
                    ana.push(g.d_theta[t][i]);
                }
            }
            worst_theta = worst_theta.max(relative_error(&ana, &num));
            let (mut ana, mut num) = (Vec::new(), Vec::new());
            for t in 0..t_len {
                for k in 0..NUM_SHAPE {
                    let orig = beta[t].0[k];
                    beta[t].0[k] = orig + h;
                    let up = total_loss(&theta, &beta, &gt, &skel);
                    beta[t].0[k] = orig - h;
                    let dn = total_loss(&theta, &beta, &gt, &skel);
                    beta[t].0[k] = orig;
                    num.push((up - dn) / (2.0 * h));
                    ana.push(g.d_beta[t][k]);
                }
            }
            worst_beta = worst_beta.max(relative_error(&ana, &num));
        }
        let elapsed = start.elapsed().as_secs_f64();
        ensure(worst_theta <= 1e-6, || format!("θ relative error {worst_theta:e}"))?;
        ensure(worst_beta <= 1e-6, || format!("β relative error {worst_beta:e}"))?;
        ensure(elapsed < 30.0, || format!("took {elapsed:.2} s"))?;
        Ok(format!("θ {worst_theta:.1e}, β {worst_beta:.1e}; 50 configs, {skipped} near-kink draws skipped"))
    });
}

/// Rotation angle from chord lengths, well conditioned on both ends.
fn oracle_angle(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let r = a.matrix().transpose() * b.matrix();
    let minus = (r - Matrix3::identity()).norm();
    // ‖R − I‖² = 8 sin²(θ/2) and ‖R + I‖² − 4 = 8 cos²(θ/2)
    let plus = ((r + Matrix3::identity()).norm_squared() - 4.0).max(0.0).sqrt();
    let s = 2.0 * std::f64::consts::SQRT_2;
    let theta = 2.0 * (minus / s).min(1.0).asin();
    if theta < std::f64::consts::FRAC_PI_2 {
        theta
    } else {
        2.0 * (plus / s).min(1.0).acos()
    }
}

#[test]
fn c09_metric_oracles() {
    criterion(9, "metrics vs brute-force oracles, jitter closed forms", || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sets = JointSets {
            hands: vec![2],
            upper: vec![1, 2],
            lower: vec![0],
            root: vec![0],
        };
        let frames = |rng: &mut ChaCha8Rng| -> Vec<MetricFrame> {
            (0..5)
                .map(|_| MetricFrame {
                    global_rot: (0..3).map(|_| random_rotation(rng)).collect(),
                    joints: (0..3).map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect(),
                })
                .collect()
        };
        let fps = 60.0;
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let (p, g) = (frames(&mut rng), frames(&mut rng));
            let m = metrics_from_frames(&p, &g, &sets, fps).map_err(|e| e.to_string())?;
            let pe = |set: &[usize]| {
                let mut s = 0.0;
                for t in 0..5 {
                    for &j in set {
                        s += ((p[t].joints[j] - g[t].joints[j]).norm_squared()).sqrt();
                    }
                }
                100.0 * s / (5 * set.len()) as f64
            };
            let mut rot = 0.0;
            let mut vel = 0.0;
            let mut jerk = 0.0;
            for j in 0..3 {
                for t in 0..5 {
                    rot += oracle_angle(&p[t].global_rot[j], &g[t].global_rot[j]);
                    if t >= 1 {
                        let dv = (p[t].joints[j] - p[t - 1].joints[j]) - (g[t].joints[j] - g[t - 1].joints[j]);
                        vel += dv.norm() * fps;
                    }
                    if t >= 3 {
                        let d3 = p[t].joints[j] - 3.0 * p[t - 1].joints[j] + 3.0 * p[t - 2].joints[j] - p[t - 3].joints[j];
                        jerk += d3.norm() * fps.powi(3);
                    }
                }
            }
            let want = [
                rot.to_degrees() / 15.0,
                pe(&[0, 1, 2]),
                100.0 * vel / 12.0,
                jerk / 6.0 / 100.0,
                pe(&sets.hands),
                pe(&sets.upper),
                pe(&sets.lower),
                pe(&sets.root),
            ];
            let got = [m.mpjre, m.mpjpe, m.mpjve.unwrap(), m.jitter.unwrap(), m.h_pe, m.u_pe, m.l_pe, m.r_pe];
            for (a, b) in got.iter().zip(&want) {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
        }
        ensure(worst <= 1e-10, || format!("metric mismatch {worst:e}"))?;

        let still = |pos: &dyn Fn(f64) -> Vector3<f64>, fps: f64| -> Vec<MetricFrame> {
            (0..5)
                .map(|k| MetricFrame {
                    global_rot: vec![RotationMatrix::identity(); 3],
                    joints: (0..3).map(|j| pos(k as f64 / fps) + Vector3::new(j as f64, 0.0, 0.0)).collect(),
                })
                .collect()
        };
        // p(t) = t³ m: jerk 6 m/s³ = 0.06 in 10² m/s³
        let cubic = still(&|t| Vector3::new(t * t * t, 0.0, 0.0), 60.0);
        let j3 = metrics_from_frames(&cubic, &cubic, &sets, 60.0).unwrap().jitter.unwrap();
        ensure((j3 - 0.06).abs() <= 1e-9, || format!("cubic jitter {j3}"))?;
        let linear = still(&|t| Vector3::new(1.5 * t, -0.5 * t, 2.0 * t), 32.0);
        let j1 = metrics_from_frames(&linear, &linear, &sets, 32.0).unwrap().jitter.unwrap();
        ensure(j1 == 0.0, || format!("constant-velocity jitter {j1}"))?;
        Ok(format!("max deviation {worst:.1e}, cubic jitter {j3:.12}"))
    });
}

#[test]
fn c10_synthesized_imu_and_calibration() {
    criterion(10, "IMU second differences and calibration closed loop", || {
        let fps = 60.0;
        let a = Vector3::new(0.7, -9.0, 2.5);
        let v = Vector3::new(1.0, 0.3, -2.0);
        let quad: Vec<Vector3<f64>> = (0..50)
            .map(|k| {
                let t = k as f64 / fps;
                Vector3::new(0.1, 1.0, -0.4) + v * t + a * (0.5 * t * t)
            })
            .collect();
        let acc = second_difference_acceleration(&quad, fps).map_err(|e| e.to_string())?;
        let q_err = acc.iter().map(|x| (x - a).abs().max()).fold(0.0, f64::max);
        ensure(q_err <= 1e-10, || format!("quadratic error {q_err:e}"))?;
        // dyadic coefficients keep every sample exactly representable
        let slope = Vector3::new(1.0, 0.25, -2.0);
        let affine: Vec<Vector3<f64>> = (0..50).map(|k| Vector3::new(0.25, -1.5, 3.0) + slope * (k as f64 / 32.0)).collect();
        let acc = second_difference_acceleration(&affine, 32.0).unwrap();
        ensure(acc.iter().all(|x| *x == Vector3::zeros()), || "affine acceleration not zero".into())?;

        let skel = Skeleton::default_skeleton();
        let motion = MotionSequence {
            fps,
            shape: ShapeParams::zero(),
            frames: (0..40)
                .map(|k| {
                    let t = k as f64 / fps;
                    MotionFrame {
                        root_translation: v * t + a * (0.5 * t * t),
                        theta: LocalPose::identity(),
                    }
                })
                .collect(),
        };
        let imu = synthesize_imu(&motion, &skel, 0, fps).map_err(|e| e.to_string())?;
        let i_err = imu.iter().map(|s| (s.acceleration - a).abs().max()).fold(0.0, f64::max);
        ensure(i_err <= 1e-10, || format!("pelvis IMU error {i_err:e}"))?;

        let mut worst_deg = 0.0f64;
        for (i, yaw) in [0.0, 0.7, -2.1, 3.0].into_iter().enumerate() {
            let script = ScriptedCapture::standard(yaw, 100 + i as u64);
            let (capture, _) = script.generate();
            let calib = calibrate(&capture).map_err(|e| e.to_string())?;
            for (id, limb, mount) in &script.sensors {
                let s = &calib.sensors[id];
                ensure(s.limb == *limb, || format!("{id} assigned {:?}, expected {limb:?}", s.limb))?;
                worst_deg = worst_deg.max(oracle_angle(&s.offset, &mount.transpose()).to_degrees());
            }
        }
        ensure(worst_deg <= 0.5, || format!("offset error {worst_deg:.3} deg"))?;
        Ok(format!("quadratic {q_err:.1e}, offsets within {worst_deg:.3} deg, limbs correct"))
    });
}

fn expected_parameter_count(c: &ModelConfig) -> usize {
    let lin = |i: usize, o: usize| i * o + o;
    let d = c.d_model;
    let six_dof_in = [3, 3, 6, 6];
    let imu_in = [6, 6, 3];
    let embed_6dof: usize = six_dof_in.iter().zip(&c.six_dof_embed_widths).map(|(i, o)| lin(*i, *o)).sum();
    let embed_imu: usize = imu_in.iter().zip(&c.imu_embed_widths).map(|(i, o)| lin(*i, *o)).sum();
    let embed = 5 * embed_6dof + 3 * embed_imu + 8 * d;
    let lstm = 4 * d * d * 2 + 4 * d * 2;
    let encoder = lin(d, 3 * d) + lin(d, d) + lin(d, c.feedforward_dim) + lin(c.feedforward_dim, d) + 4 * d;
    let blocks = c.n_blocks * (8 * lstm + c.transformer_layers_per_block * encoder);
    let heads = lin(8 * d, c.head_hidden) * 2 + lin(c.head_hidden, 132) + lin(c.head_hidden, 16);
    embed + blocks + heads
}

#[test]
fn c11_weight_initialization() {
    criterion(11, "orthogonal recurrent init, save/load, parameter count and output dims", || {
        let w = full_weights();
        let h = w.config.d_model;
        let mut worst = 0.0f64;
        for block in &w.blocks {
            for lstm in &block.lstm {
                for gate in 0..4 {
                    let m = &lstm.weight_hh[gate * h * h..(gate + 1) * h * h];
                    for r in 0..h {
                        for s in r..h {
                            let dot: f64 = (0..h).map(|k| m[r * h + k] as f64 * m[s * h + k] as f64).sum();
                            let want = if r == s { 1.0 } else { 0.0 };
                            worst = worst.max((dot - want).abs());
                        }
                    }
                }
            }
        }
        ensure(worst <= 1e-5, || format!("orthogonality error {worst:e}"))?;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        w.save(&path).map_err(|e| e.to_string())?;
        let back = NetworkWeights::load(&path).map_err(|e| e.to_string())?;
        ensure(&back == w, || "loaded weights differ".into())?;
        ensure(back.to_bytes() == std::fs::read(&path).unwrap(), || "bytes differ".into())?;
        ensure(back.checksum() == w.checksum(), || "checksum differs".into())?;

        let expected = expected_parameter_count(&w.config);
        ensure(w.parameter_count() == expected, || format!("{} parameters, expected {expected}", w.parameter_count()))?;
        ensure(w.config.n_blocks == 2 && w.config.d_model == 256, || "reference configuration".into())?;
        ensure(w.pose_head[1].out_dim == 132 && w.shape_head[1].out_dim == 16, || "head widths".into())?;
        ensure(w.pose_head[0].out_dim == 256 && w.shape_head[0].out_dim == 256, || "head hidden width".into())?;

        let skel = Skeleton::default_skeleton();
        let x = random_inputs(&mut ChaCha8Rng::seed_from_u64(11), 1).remove(0);
        let y = forward_step(&mut StreamState::new(&w.config), &x, &back, &skel).map_err(|e| e.to_string())?;
        ensure(y.theta.to_flat().len() == 132 && y.beta.0.len() == 16, || "output dims".into())?;
        Ok(format!("orthogonality {worst:.1e}, {expected} parameters, outputs 132/16"))
    });
}

#[test]
fn c12_realtime_throughput() {
    criterion(12, "single-thread throughput >= 60 steps/s, constant per-step cost", || {
        let start = Instant::now();
        let skel = Skeleton::default_skeleton();
        let report = harness::run_bench(&BenchConfig::default(), full_weights(), &skel).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed().as_secs_f64();
        let detail = format!(
            "{:.1} steps/s, mean {:.3} ms, p99 {:.3} ms, late/early {:.3}",
            report.steps_per_second, report.latency.mean_ms, report.latency.p99_ms, report.constancy.ratio
        );
        ensure(report.steps_per_second >= 60.0, || format!("too slow: {detail}"))?;
        ensure(report.constancy.pass, || format!("per-step cost drifts: {detail}"))?;
        ensure(elapsed <= 300.0, || format!("benchmark took {elapsed:.0} s"))?;
        Ok(detail)
    });
}

#[test]
fn c13_numerical_health() {
    criterion(13, "10,000 random streaming steps stay finite", || {
        let skel = Skeleton::default_skeleton();
        let w = full_weights();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut state = StreamState::new(&w.config);
        let inputs = random_inputs(&mut rng, 10_000);
        for (i, x) in inputs.iter().enumerate() {
            let y = match forward_step(&mut state, x, w, &skel) {
                Ok(y) => y,
                Err(Error::DegenerateInput(m)) => return Err(format!("step {i}: degenerate output {m}")),
                Err(e) => return Err(format!("step {i}: {e}")),
            };
            let rot_ok = y.body.global_rot.iter().all(|r| r.matrix().iter().all(|v| v.is_finite()));
            ensure(y.is_finite() && rot_ok, || format!("non-finite output at step {i}"))?;
        }
        ensure(state.is_finite(), || "non-finite recurrent state".into())?;
        Ok("10000 steps, mixed sensor sets".into())
    });
}
