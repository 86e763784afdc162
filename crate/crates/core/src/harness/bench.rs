//! Single-stream latency benchmark.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::dataset::{procedural_motion, EvalSequence};
use crate::body_model::Skeleton;
use crate::error::{Error, Result};
use crate::net::{forward_step, forward_step_profiled, ModelConfig, NetworkWeights, StageTimes, StreamState};
use crate::sensing::{FrameInput, Scenario, FRAME_RATE};

pub const BENCH_REPORT_FORMAT: &str = "sparsepose-bench-report";
pub const BENCH_REPORT_VERSION: u32 = 1;
/// Steps per second needed to keep up with the 60 Hz input stream.
pub const REALTIME_STEPS_PER_SECOND: f64 = FRAME_RATE;
pub const CONSTANCY_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub scenario: Scenario,
    pub warmup_steps: usize,
    pub steps: usize,
    /// Steps per window for the early/late per-step cost comparison. The late
    /// window continues the measured stream; the early one is a fresh stream.
    pub window: usize,
    /// Steps in the separate per-stage profiling pass.
    pub profile_steps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            scenario: Scenario::Hmd3Imus,
            warmup_steps: 1000,
            steps: 10_000,
            window: 1000,
            profile_steps: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constancy {
    pub window: usize,
    pub early_ms: f64,
    pub late_ms: f64,
    /// `late / early`.
    pub ratio: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageBreakdown {
    pub embed_ms: f64,
    pub recurrent_ms: f64,
    pub attention_ms: f64,
    pub heads_ms: f64,
    pub kinematics_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub format: String,
    pub version: u32,
    pub config: BenchConfig,
    pub model_config: ModelConfig,
    pub weights_checksum: String,
    pub parameter_count: usize,
    pub threads: usize,
    pub latency: LatencyStats,
    pub steps_per_second: f64,
    pub realtime_threshold: f64,
    pub realtime: bool,
    pub constancy: Constancy,
    pub stages: StageBreakdown,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Mean after dropping the fastest and slowest 10 %.
fn trimmed_mean(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let cut = v.len() / 10;
    let kept = &v[cut..v.len() - cut];
    kept.iter().sum::<f64>() / kept.len() as f64
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Deterministic input stream of `n` frames.
pub fn bench_inputs(n: usize, scenario: Scenario, seed: u64, skel: &Skeleton) -> Result<Vec<FrameInput>> {
    let motion = procedural_motion(seed, n.max(3), FRAME_RATE);
    Ok(EvalSequence::from_motion("bench", &motion, skel, scenario)?.inputs)
}

pub fn run_bench(cfg: &BenchConfig, w: &NetworkWeights, skel: &Skeleton) -> Result<BenchReport> {
    if cfg.steps == 0 || cfg.window == 0 || 2 * cfg.window > cfg.steps {
        return Err(Error::InvalidConfig(format!(
            "need steps >= 2 * window > 0, got steps {} window {}",
            cfg.steps, cfg.window
        )));
    }
    let inputs = bench_inputs(cfg.warmup_steps + cfg.steps, cfg.scenario, cfg.seed, skel)?;
    let mut state = StreamState::new(&w.config);
    for x in &inputs[..cfg.warmup_steps] {
        forward_step(&mut state, x, w, skel)?;
    }

    let mut lat = Vec::with_capacity(cfg.steps);
    let total = Instant::now();
    for x in &inputs[cfg.warmup_steps..] {
        let t = Instant::now();
        let y = forward_step(&mut state, x, w, skel)?;
        lat.push(ms(t.elapsed()));
        std::hint::black_box(&y);
    }
    let total = total.elapsed().as_secs_f64();

    // Per-step cost at the start of a stream against the stream that has just
    // run warmup + steps frames, timed alternately so that drift in machine
    // speed lands on both windows alike.
    let mut fresh = StreamState::new(&w.config);
    let (mut early_lat, mut late_lat) = (Vec::with_capacity(cfg.window), Vec::with_capacity(cfg.window));
    for (i, x) in inputs.iter().cycle().take(cfg.window).enumerate() {
        let t = Instant::now();
        std::hint::black_box(forward_step(&mut fresh, x, w, skel)?);
        early_lat.push(ms(t.elapsed()));
        let t = Instant::now();
        std::hint::black_box(forward_step(&mut state, &inputs[(cfg.warmup_steps + i) % inputs.len()], w, skel)?);
        late_lat.push(ms(t.elapsed()));
    }
    let early = trimmed_mean(&early_lat);
    let late = trimmed_mean(&late_lat);
    let ratio = late / early;

    let mut sorted = lat.clone();
    sorted.sort_by(f64::total_cmp);
    let steps_per_second = cfg.steps as f64 / total;

    let mut stages = StageTimes::default();
    let mut pstate = StreamState::new(&w.config);
    let n_prof = cfg.profile_steps.max(1);
    for x in inputs.iter().cycle().take(n_prof) {
        forward_step_profiled(&mut pstate, x, w, skel, &mut stages)?;
    }
    let per = |d: Duration| ms(d) / n_prof as f64;

    Ok(BenchReport {
        format: BENCH_REPORT_FORMAT.into(),
        version: BENCH_REPORT_VERSION,
        config: cfg.clone(),
        model_config: w.config.clone(),
        weights_checksum: w.checksum(),
        parameter_count: w.parameter_count(),
        threads: 1,
        latency: LatencyStats {
            mean_ms: lat.iter().sum::<f64>() / lat.len() as f64,
            median_ms: percentile(&sorted, 50.0),
            p99_ms: percentile(&sorted, 99.0),
            min_ms: sorted[0],
            max_ms: sorted[sorted.len() - 1],
        },
        steps_per_second,
        realtime_threshold: REALTIME_STEPS_PER_SECOND,
        realtime: steps_per_second >= REALTIME_STEPS_PER_SECOND,
        constancy: Constancy {
            window: cfg.window,
            early_ms: early,
            late_ms: late,
            ratio,
            tolerance: CONSTANCY_TOLERANCE,
            pass: (ratio - 1.0).abs() <= CONSTANCY_TOLERANCE,
        },
        stages: StageBreakdown {
            embed_ms: per(stages.embed),
            recurrent_ms: per(stages.recurrent),
            attention_ms: per(stages.attention),
            heads_ms: per(stages.heads),
            kinematics_ms: per(stages.kinematics),
        },
    })
}

/// Structural check of a benchmark report.
pub fn validate_bench_report(v: &Value) -> Result<()> {
    let report: BenchReport = serde_json::from_value(v.clone())?;
    if report.format != BENCH_REPORT_FORMAT {
        return Err(Error::Parse("unexpected report format".into()));
    }
    if report.version != BENCH_REPORT_VERSION {
        return Err(Error::VersionMismatch {
            found: report.version,
            expected: BENCH_REPORT_VERSION,
        });
    }
    let l = &report.latency;
    let all = [l.mean_ms, l.median_ms, l.p99_ms, l.min_ms, l.max_ms, report.steps_per_second];
    if !all.iter().all(|x| x.is_finite() && *x >= 0.0) {
        return Err(Error::Parse("latency figures must be finite and non-negative".into()));
    }
    if !(l.min_ms <= l.median_ms && l.median_ms <= l.p99_ms && l.p99_ms <= l.max_ms) {
        return Err(Error::Parse("latency percentiles are out of order".into()));
    }
    Ok(())
}
