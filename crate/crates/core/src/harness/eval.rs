//! Dataset evaluation: stream every sequence through the network, score it
//! against ground truth and write a JSON report.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::dataset::{load_dataset, EvalSequence};
use super::{load_skeleton, worker_count};
use crate::body_model::{BodyState, ShapeParams, Skeleton};
use crate::error::{Error, Result};
use crate::net::{forward_step, init_weights, ModelConfig, NetworkWeights, StreamState};
use crate::objectives::{aggregate_reports, metrics, MetricReport};
use crate::sensing::{Component, Scenario};

pub const EVAL_REPORT_FORMAT: &str = "sparsepose-eval-report";
pub const EVAL_REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Sensor set to evaluate with. `None` keeps each sequence's own set;
    /// otherwise components outside the scenario are masked out.
    pub scenario: Option<Scenario>,
    /// Weight file. Without one the network is initialized from `seed`.
    pub weights: Option<PathBuf>,
    /// Architecture used when initializing from `seed`.
    pub model_config: Option<ModelConfig>,
    pub skeleton: Option<PathBuf>,
    pub datasets: Vec<PathBuf>,
    pub fps: f64,
    pub clip_length: usize,
    pub reset_between_clips: bool,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Exponential smoothing factor for predicted shape, in `[0, 1)`.
    pub ema_beta_smoothing: Option<f64>,
    /// Replay ground truth as predictions to exercise the metric path.
    pub bypass_oracle: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: None,
            weights: None,
            model_config: None,
            skeleton: None,
            datasets: Vec::new(),
            fps: 60.0,
            clip_length: 40,
            reset_between_clips: false,
            seed: 0,
            out: None,
            ema_beta_smoothing: None,
            bypass_oracle: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidConfig(format!("fps must be positive, got {}", self.fps)));
        }
        if self.clip_length == 0 {
            return Err(Error::InvalidConfig("clip_length must be at least 1".into()));
        }
        if let Some(a) = self.ema_beta_smoothing {
            if !(0.0..1.0).contains(&a) {
                return Err(Error::InvalidConfig(format!("ema_beta_smoothing must be in [0, 1), got {a}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub name: String,
    pub scenario: Scenario,
    pub frames: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
}

impl SequenceResult {
    pub fn is_ok(&self) -> bool {
        self.metrics.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTiming {
    pub wall_seconds: f64,
    pub frames: usize,
    pub steps_per_second: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub bypass_oracle: bool,
    pub weights_checksum: Option<String>,
    pub model_config: Option<ModelConfig>,
    pub units: Value,
    pub conventions: Value,
    pub aggregate: Option<MetricReport>,
    pub sequences: Vec<SequenceResult>,
    pub timing: EvalTiming,
}

impl EvalReport {
    pub fn all_failed(&self) -> bool {
        !self.sequences.iter().any(SequenceResult::is_ok)
    }

    /// Exit code for the run: 0 unless every sequence failed, in which case
    /// the first failure's code.
    pub fn exit_code(&self) -> i32 {
        if !self.all_failed() {
            return 0;
        }
        self.sequences.iter().find_map(|s| s.exit_code).unwrap_or(2)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// Removes every wall-clock field so two runs can be compared.
pub fn strip_wall_clock(report: &mut Value) {
    if let Some(o) = report.as_object_mut() {
        o.remove("timing");
    }
    let clear = |m: &mut Value| {
        if let Some(o) = m.as_object_mut() {
            o.insert("fps".into(), Value::Null);
        }
    };
    if let Some(a) = report.get_mut("aggregate") {
        clear(a);
    }
    if let Some(Value::Array(seqs)) = report.get_mut("sequences") {
        for s in seqs {
            if let Some(m) = s.get_mut("metrics") {
                clear(m);
            }
        }
    }
}

fn components_outside(s: Scenario) -> Vec<Component> {
    let present = s.present();
    Component::ALL.into_iter().filter(|c| !present[c.index()]).collect()
}

/// Streams one sequence and returns predicted bodies.
fn predict(seq: &EvalSequence, cfg: &RunConfig, w: &NetworkWeights, skel: &Skeleton) -> Result<Vec<BodyState>> {
    let mut state = StreamState::new(&w.config);
    let mut smoothed: Option<ShapeParams> = None;
    let mut out = Vec::with_capacity(seq.len());
    for (i, x) in seq.inputs.iter().enumerate() {
        if cfg.reset_between_clips && i > 0 && i % cfg.clip_length == 0 {
            state.reset();
            smoothed = None;
        }
        let y = forward_step(&mut state, x, w, skel)?;
        match cfg.ema_beta_smoothing {
            None => out.push(y.body),
            Some(a) => {
                let beta = match smoothed {
                    None => y.beta,
                    Some(prev) => {
                        let mut b = ShapeParams::zero();
                        for k in 0..b.0.len() {
                            b.0[k] = a * prev.0[k] + (1.0 - a) * y.beta.0[k];
                        }
                        b
                    }
                };
                smoothed = Some(beta);
                out.push(skel.forward_kinematics_anchored(&beta, &y.theta, &x.head_position())?);
            }
        }
    }
    Ok(out)
}

fn evaluate_sequence(
    seq: &EvalSequence,
    cfg: &RunConfig,
    w: Option<&NetworkWeights>,
    skel: &Skeleton,
) -> Result<(MetricReport, Scenario)> {
    if (seq.ground_truth.fps - cfg.fps).abs() > 1e-9 {
        return Err(Error::UnsupportedRate(format!(
            "sequence `{}` is {} Hz, run expects {} Hz",
            seq.name, seq.ground_truth.fps, cfg.fps
        )));
    }
    if seq.inputs.len() != seq.ground_truth.len() {
        return Err(Error::LengthMismatch {
            pred: seq.inputs.len(),
            gt: seq.ground_truth.len(),
        });
    }
    let scenario = match cfg.scenario {
        None => seq.scenario,
        Some(s) => {
            let have = seq.scenario.present();
            if s.present().iter().zip(&have).any(|(want, has)| *want && !has) {
                return Err(Error::InvalidConfig(format!(
                    "sequence `{}` was recorded as {} and cannot be evaluated as {}",
                    seq.name,
                    seq.scenario.tag(),
                    s.tag()
                )));
            }
            s
        }
    };
    let gt = seq.ground_truth.bodies(skel)?;
    let start = Instant::now();
    let (pred, fps) = if cfg.bypass_oracle {
        (gt.clone(), None)
    } else {
        let w = w.ok_or_else(|| Error::InvalidConfig("no weights loaded".into()))?;
        let pred = if scenario == seq.scenario {
            predict(seq, cfg, w, skel)?
        } else {
            let drop = components_outside(scenario);
            let mut masked = seq.clone();
            for x in masked.inputs.iter_mut() {
                *x = x.with_components_removed(&drop);
            }
            predict(&masked, cfg, w, skel)?
        };
        let secs = start.elapsed().as_secs_f64();
        (pred, Some(seq.len() as f64 / secs.max(1e-12)))
    };
    let mut m = metrics(&pred, &gt, skel, cfg.fps)?;
    m.fps = fps;
    Ok((m, scenario))
}

/// Evaluates in-memory sequences. `weights` may be `None` only in bypass mode.
pub fn evaluate(
    cfg: &RunConfig,
    weights: Option<&NetworkWeights>,
    skel: &Skeleton,
    sequences: &[EvalSequence],
) -> Result<EvalReport> {
    cfg.validate()?;
    if weights.is_none() && !cfg.bypass_oracle {
        return Err(Error::InvalidConfig("weights are required unless bypassing the network".into()));
    }
    let workers = worker_count();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let start = Instant::now();
    let results: Vec<SequenceResult> = pool.install(|| {
        sequences
            .par_iter()
            .map(|seq| match evaluate_sequence(seq, cfg, weights, skel) {
                Ok((m, scenario)) => SequenceResult {
                    name: seq.name.clone(),
                    scenario,
                    frames: seq.len(),
                    metrics: Some(m),
                    error: None,
                    exit_code: None,
                },
                Err(e) => SequenceResult {
                    name: seq.name.clone(),
                    scenario: cfg.scenario.unwrap_or(seq.scenario),
                    frames: seq.len(),
                    metrics: None,
                    exit_code: Some(e.exit_code()),
                    error: Some(e.to_string()),
                },
            })
            .collect()
    });
    let wall = start.elapsed().as_secs_f64();
    let ok: Vec<MetricReport> = results.iter().filter_map(|r| r.metrics).collect();
    let frames: usize = ok.iter().map(|m| m.frames).sum();
    Ok(EvalReport {
        format: EVAL_REPORT_FORMAT.into(),
        version: EVAL_REPORT_VERSION,
        config: cfg.clone(),
        bypass_oracle: cfg.bypass_oracle,
        weights_checksum: weights.filter(|_| !cfg.bypass_oracle).map(|w| w.checksum()),
        model_config: weights.filter(|_| !cfg.bypass_oracle).map(|w| w.config.clone()),
        units: MetricReport::units(),
        conventions: MetricReport::conventions(),
        aggregate: aggregate_reports(&ok).ok(),
        sequences: results,
        timing: EvalTiming {
            wall_seconds: wall,
            frames,
            steps_per_second: frames as f64 / wall.max(1e-12),
            workers,
        },
    })
}

/// Loads everything named in `cfg`, evaluates and writes the report.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if cfg.datasets.is_empty() {
        return Err(Error::InvalidConfig("no dataset given".into()));
    }
    let skel = load_skeleton(cfg.skeleton.as_deref())?;
    let mut sequences = Vec::new();
    for p in &cfg.datasets {
        sequences.extend(load_dataset(p)?);
    }
    let weights = match (&cfg.weights, cfg.bypass_oracle) {
        (_, true) => None,
        (Some(p), false) => Some(NetworkWeights::load(p)?),
        (None, false) => Some(init_weights(&cfg.model_config.clone().unwrap_or_default(), cfg.seed)?),
    };
    let report = evaluate(cfg, weights.as_ref(), &skel, &sequences)?;
    let value = report.to_json();
    validate_eval_report(&value)?;
    if let Some(out) = &cfg.out {
        std::fs::write(out, serde_json::to_string_pretty(&value)? + "\n")?;
    }
    Ok(report)
}

fn require<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key).ok_or_else(|| Error::Parse(format!("report is missing `{key}`")))
}

fn require_number(v: &Value, key: &str) -> Result<f64> {
    require(v, key)?
        .as_f64()
        .ok_or_else(|| Error::Parse(format!("`{key}` must be a number")))
}

fn check_metrics(m: &Value) -> Result<()> {
    for k in ["mpjre", "mpjpe", "h_pe", "u_pe", "l_pe", "r_pe"] {
        let v = require_number(m, k)?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Parse(format!("metric `{k}` must be finite and non-negative")));
        }
    }
    for k in ["mpjve", "jitter", "fps"] {
        let v = require(m, k)?;
        if !(v.is_null() || v.as_f64().is_some_and(|x| x.is_finite() && x >= 0.0)) {
            return Err(Error::Parse(format!("metric `{k}` must be null or a non-negative number")));
        }
    }
    require(m, "frames")?
        .as_u64()
        .ok_or_else(|| Error::Parse("`frames` must be a non-negative integer".into()))?;
    Ok(())
}

/// Structural check of an evaluation report.
pub fn validate_eval_report(v: &Value) -> Result<()> {
    if require(v, "format")?.as_str() != Some(EVAL_REPORT_FORMAT) {
        return Err(Error::Parse("unexpected report format".into()));
    }
    let version = require(v, "version")?.as_u64().unwrap_or(0) as u32;
    if version != EVAL_REPORT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: EVAL_REPORT_VERSION,
        });
    }
    serde_json::from_value::<RunConfig>(require(v, "config")?.clone())?;
    let bypass = require(v, "bypass_oracle")?
        .as_bool()
        .ok_or_else(|| Error::Parse("`bypass_oracle` must be a boolean".into()))?;
    let checksum = require(v, "weights_checksum")?;
    match checksum.as_str() {
        Some(s) if s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit()) => {}
        None if checksum.is_null() && bypass => {}
        _ => return Err(Error::Parse("`weights_checksum` must be a sha256 hex digest".into())),
    }
    let mc = require(v, "model_config")?;
    if !mc.is_null() {
        serde_json::from_value::<ModelConfig>(mc.clone())?;
    }
    for k in ["units", "conventions"] {
        if !require(v, k)?.is_object() {
            return Err(Error::Parse(format!("`{k}` must be an object")));
        }
    }
    let seqs = require(v, "sequences")?
        .as_array()
        .ok_or_else(|| Error::Parse("`sequences` must be an array".into()))?;
    let mut any_ok = false;
    for s in seqs {
        require(s, "name")?.as_str().ok_or_else(|| Error::Parse("sequence name must be a string".into()))?;
        serde_json::from_value::<Scenario>(require(s, "scenario")?.clone())?;
        match (s.get("metrics"), s.get("error")) {
            (Some(m), None) => {
                check_metrics(m)?;
                any_ok = true;
            }
            (None, Some(e)) if e.is_string() => {}
            _ => return Err(Error::Parse("each sequence needs exactly one of `metrics` or `error`".into())),
        }
    }
    let agg = require(v, "aggregate")?;
    match (agg.is_null(), any_ok) {
        (false, true) => check_metrics(agg)?,
        (true, false) => {}
        _ => return Err(Error::Parse("`aggregate` must be present exactly when some sequence succeeded".into())),
    }
    let t = require(v, "timing")?;
    for k in ["wall_seconds", "steps_per_second"] {
        require_number(t, k)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use crate::harness::dataset::{procedural_motion, stationary_motion};

    fn fixtures(skel: &Skeleton) -> Vec<EvalSequence> {
        vec![
            EvalSequence::from_motion("walk", &procedural_motion(1, 50, 60.0), skel, Scenario::Hmd3Imus).unwrap(),
            EvalSequence::from_motion("still", &stationary_motion(2, 30, 60.0), skel, Scenario::Hmd2Imus).unwrap(),
        ]
    }

    #[test]
    fn bypass_gives_zero_error() {
        let skel = Skeleton::default_skeleton();
        let cfg = RunConfig {
            bypass_oracle: true,
            ..Default::default()
        };
        let r = evaluate(&cfg, None, &skel, &fixtures(&skel)).unwrap();
        validate_eval_report(&r.to_json()).unwrap();
        let a = r.aggregate.unwrap();
        for v in [a.mpjre, a.mpjpe, a.mpjve.unwrap(), a.h_pe, a.u_pe, a.l_pe, a.r_pe] {
            assert_eq!(v, 0.0);
        }
        assert_eq!(a.frames, 80);
    }

    #[test]
    fn random_weights_are_finite_and_deterministic() {
        let skel = Skeleton::default_skeleton();
        let w = init_weights(&ModelConfig::small(), 3).unwrap();
        let cfg = RunConfig::default();
        let seqs = fixtures(&skel);
        let mut a = evaluate(&cfg, Some(&w), &skel, &seqs).unwrap().to_json();
        validate_eval_report(&a).unwrap();
        let mut b = evaluate(&cfg, Some(&w), &skel, &seqs).unwrap().to_json();
        strip_wall_clock(&mut a);
        strip_wall_clock(&mut b);
        assert_eq!(a, b);
        let agg = &a["aggregate"];
        assert!(agg["mpjpe"].as_f64().unwrap().is_finite());
    }

    #[test]
    fn unbroken_stream_matches_concatenation() {
        let skel = Skeleton::default_skeleton();
        let w = init_weights(&ModelConfig::small(), 4).unwrap();
        let seq = &fixtures(&skel)[0];
        let cfg = RunConfig {
            clip_length: 7,
            ..Default::default()
        };
        let streamed = predict(seq, &cfg, &w, &skel).unwrap();
        let direct = crate::net::forward_clip(&w, &seq.inputs, &skel).unwrap();
        for (a, b) in streamed.iter().zip(&direct) {
            assert_eq!(a, &b.body);
        }
        let clipped = predict(
            seq,
            &RunConfig {
                reset_between_clips: true,
                ..cfg.clone()
            },
            &w,
            &skel,
        )
        .unwrap();
        for (k, chunk) in seq.inputs.chunks(7).enumerate() {
            let fresh = crate::net::forward_clip(&w, chunk, &skel).unwrap();
            for (i, b) in fresh.iter().enumerate() {
                assert_eq!(clipped[7 * k + i], b.body);
            }
        }
    }

    #[test]
    fn failures_are_per_sequence() {
        let skel = Skeleton::default_skeleton();
        let w = init_weights(&ModelConfig::small(), 5).unwrap();
        let mut seqs = fixtures(&skel);
        seqs[1].ground_truth.fps = 30.0;
        let r = evaluate(&RunConfig::default(), Some(&w), &skel, &seqs).unwrap();
        validate_eval_report(&r.to_json()).unwrap();
        assert!(r.sequences[0].is_ok());
        assert!(!r.sequences[1].is_ok());
        assert_eq!(r.exit_code(), 0);
        assert_eq!(r.aggregate.unwrap().frames, 50);

        seqs[0].ground_truth.fps = 30.0;
        let r = evaluate(&RunConfig::default(), Some(&w), &skel, &seqs).unwrap();
        assert!(r.all_failed());
        assert_ne!(r.exit_code(), 0);
        assert!(r.aggregate.is_none());
        validate_eval_report(&r.to_json()).unwrap();
    }

    #[test]
    fn scenario_override_masks_and_cannot_add() {
        let skel = Skeleton::default_skeleton();
        let w = init_weights(&ModelConfig::small(), 6).unwrap();
        let seqs = fixtures(&skel);
        let r = evaluate(
            &RunConfig {
                scenario: Some(Scenario::Hmd),
                ..Default::default()
            },
            Some(&w),
            &skel,
            &seqs,
        )
        .unwrap();
        assert!(r.sequences.iter().all(|s| s.is_ok() && s.scenario == Scenario::Hmd));

        let r = evaluate(
            &RunConfig {
                scenario: Some(Scenario::Hmd3Imus),
                ..Default::default()
            },
            Some(&w),
            &skel,
            &seqs,
        )
        .unwrap();
        assert!(r.sequences[0].is_ok());
        assert!(!r.sequences[1].is_ok());
    }

    #[test]
    fn shape_smoothing_changes_only_body() {
        let skel = Skeleton::default_skeleton();
        let w = init_weights(&ModelConfig::small(), 7).unwrap();
        let seq = &fixtures(&skel)[0];
        let plain = predict(seq, &RunConfig::default(), &w, &skel).unwrap();
        let zero = predict(
            seq,
            &RunConfig {
                ema_beta_smoothing: Some(0.0),
                ..Default::default()
            },
            &w,
            &skel,
        )
        .unwrap();
        assert_eq!(plain, zero);
        assert!(RunConfig {
            ema_beta_smoothing: Some(1.0),
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn validator_rejects_broken_reports() {
        let skel = Skeleton::default_skeleton();
        let r = evaluate(
            &RunConfig {
                bypass_oracle: true,
                ..Default::default()
            },
            None,
            &skel,
            &fixtures(&skel),
        )
        .unwrap()
        .to_json();
        let mut v = r.clone();
        v.as_object_mut().unwrap().remove("aggregate");
        assert!(validate_eval_report(&v).is_err());
        let mut v = r.clone();
        v["version"] = json!(2);
        assert!(matches!(validate_eval_report(&v), Err(Error::VersionMismatch { .. })));
        let mut v = r.clone();
        v["sequences"][0]["metrics"]["mpjpe"] = json!(-1.0);
        assert!(validate_eval_report(&v).is_err());
        let mut v = r;
        v["bypass_oracle"] = json!(false);
        assert!(validate_eval_report(&v).is_err());
    }
}
