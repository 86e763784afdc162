//! The commands behind the `sparsepose` binary, usable as a library.

pub mod bench;
pub mod dataset;
pub mod eval;

use std::path::{Path, PathBuf};

use crate::body_model::Skeleton;
use crate::error::Result;
use crate::net::{init_weights, ModelConfig, NetworkWeights};
use crate::sensing::calibration::{calibrate, CalibrationResult, ScriptedCapture};
use crate::sensing::capture::RawCapture;
use crate::sensing::motion::MotionSequence;
use crate::sensing::Scenario;

pub use bench::{run_bench, validate_bench_report, BenchConfig, BenchReport};
pub use dataset::{load_dataset, procedural_motion, save_dataset, stationary_motion, EvalSequence};
pub use eval::{cmd_eval, evaluate, strip_wall_clock, validate_eval_report, EvalReport, RunConfig};

/// Environment variable holding the number of evaluation worker threads.
pub const WORKERS_ENV: &str = "SPARSEPOSE_WORKERS";

pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn load_skeleton(path: Option<&Path>) -> Result<Skeleton> {
    match path {
        Some(p) => Skeleton::load(p),
        None => Ok(Skeleton::default_skeleton()),
    }
}

/// Where `cmd_synth` takes its motions from.
#[derive(Debug, Clone)]
pub enum MotionSource {
    Files(Vec<PathBuf>),
    /// `count` procedural walking clips of `frames` frames, seeded from `seed`.
    Procedural { count: usize, frames: usize, seed: u64 },
}

fn sequence_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Builds an evaluation dataset from ground-truth motion and writes it to `out`.
pub fn cmd_synth(source: &MotionSource, scenario: Scenario, skel: &Skeleton, fps: f64, out: &Path) -> Result<Vec<EvalSequence>> {
    let motions: Vec<(String, MotionSequence)> = match source {
        MotionSource::Files(paths) => paths
            .iter()
            .map(|p| Ok((sequence_name(p), MotionSequence::read(p)?)))
            .collect::<Result<_>>()?,
        MotionSource::Procedural { count, frames, seed } => (0..*count)
            .map(|i| (format!("walk-{i:03}"), procedural_motion(seed.wrapping_add(i as u64), *frames, fps)))
            .collect(),
    };
    let seqs = dataset::synthesize_dataset(&motions, skel, scenario, fps)?;
    save_dataset(&seqs, out)?;
    Ok(seqs)
}

/// Writes a scripted calibration capture (stand, still, leg lifts, knee bend)
/// with a seeded heading and sensor mounting.
pub fn cmd_synth_capture(seed: u64, out: &Path) -> Result<RawCapture> {
    let yaw = (seed % 360) as f64 * std::f64::consts::PI / 180.0;
    let (capture, _) = ScriptedCapture::standard(yaw, seed).generate();
    capture.write(out)?;
    Ok(capture)
}

pub fn cmd_calibrate(capture: &Path, out: &Path) -> Result<CalibrationResult> {
    let raw = RawCapture::read(capture)?;
    let result = calibrate(&raw)?;
    result.save(out)?;
    Ok(result)
}

/// Initializes weights, saves them and returns them with their checksum.
pub fn cmd_init_weights(config: Option<&Path>, seed: u64, out: &Path) -> Result<(NetworkWeights, String)> {
    let cfg = match config {
        Some(p) => serde_json::from_str::<ModelConfig>(&std::fs::read_to_string(p)?)?,
        None => ModelConfig::default(),
    };
    let w = init_weights(&cfg, seed)?;
    w.save(out)?;
    let sum = w.checksum();
    Ok((w, sum))
}

pub fn cmd_bench(cfg: &BenchConfig, weights: Option<&Path>, model: Option<&ModelConfig>, skel: &Skeleton) -> Result<BenchReport> {
    let w = match weights {
        Some(p) => NetworkWeights::load(p)?,
        None => init_weights(&model.cloned().unwrap_or_default(), cfg.seed)?,
    };
    run_bench(cfg, &w, skel)
}
