use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparsepose::harness::{self, BenchConfig, MotionSource, RunConfig};
use sparsepose::net::ModelConfig;
use sparsepose::sensing::Scenario;
use sparsepose::Result;

#[derive(Parser)]
#[command(name = "sparsepose", version, about = "Full-body pose from a headset, two controllers and up to three IMUs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an evaluation dataset from ground-truth motion.
    Synth(SynthArgs),
    /// Stream a dataset through the network and score it.
    Eval(EvalArgs),
    /// Measure single-stream step latency.
    Bench(BenchArgs),
    /// Estimate sensor offsets and limb assignment from a raw capture.
    Calibrate(CalibrateArgs),
    /// Write freshly initialized network weights.
    InitWeights(InitArgs),
}

#[derive(Args)]
struct Common {
    /// Skeleton asset; the bundled skeleton when omitted.
    #[arg(long)]
    skeleton: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Ground-truth motion files.
    #[arg(long = "motion", num_args = 1.., required_unless_present_any = ["procedural", "capture_out"])]
    motions: Vec<PathBuf>,
    /// Generate this many procedural walking clips instead of reading files.
    #[arg(long, conflicts_with = "motions")]
    procedural: Option<usize>,
    /// Frames per procedural clip.
    #[arg(long, default_value_t = 600)]
    frames: usize,
    #[arg(long, default_value = "hmd3imus")]
    scenario: Scenario,
    #[arg(long, default_value_t = 60.0)]
    fps: f64,
    #[arg(long, required_unless_present = "capture_out")]
    out: Option<PathBuf>,
    /// Also write a scripted raw calibration capture here.
    #[arg(long)]
    capture_out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ModelArgs {
    /// Weight file; weights are initialized from --seed when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Architecture (JSON) for seeded initialization.
    #[arg(long, conflicts_with = "weights")]
    model_config: Option<PathBuf>,
}

impl ModelArgs {
    fn config(&self) -> Result<Option<ModelConfig>> {
        self.model_config
            .as_ref()
            .map(|p| Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?))
            .transpose()
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset files written by `synth`.
    #[arg(long = "dataset", required = true, num_args = 1..)]
    datasets: Vec<PathBuf>,
    /// Evaluate with this sensor set instead of each sequence's own.
    #[arg(long)]
    scenario: Option<Scenario>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 60.0)]
    fps: f64,
    #[arg(long, default_value_t = 40)]
    clip_length: usize,
    /// Reset the recurrent state every --clip-length frames.
    #[arg(long)]
    reset_between_clips: bool,
    /// Exponential smoothing factor for predicted shape.
    #[arg(long)]
    ema_beta: Option<f64>,
    /// Score ground truth against itself to check the metric path.
    #[arg(long)]
    bypass_oracle: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "hmd3imus")]
    scenario: Scenario,
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    #[arg(long, default_value_t = 10_000)]
    steps: usize,
    #[arg(long, default_value_t = 1000)]
    window: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Raw capture file.
    capture: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InitArgs {
    /// Architecture (JSON); the reference configuration when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn write_json(value: &impl serde::Serialize, out: Option<&PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth(a) => {
            if let Some(out) = &a.out {
                let skel = harness::load_skeleton(a.common.skeleton.as_deref())?;
                let source = match a.procedural {
                    Some(count) => MotionSource::Procedural {
                        count,
                        frames: a.frames,
                        seed: a.common.seed,
                    },
                    None => MotionSource::Files(a.motions.clone()),
                };
                let seqs = harness::cmd_synth(&source, a.scenario, &skel, a.fps, out)?;
                let frames: usize = seqs.iter().map(|s| s.len()).sum();
                eprintln!("wrote {} sequences, {frames} frames to {}", seqs.len(), out.display());
            }
            if let Some(out) = &a.capture_out {
                harness::cmd_synth_capture(a.common.seed, out)?;
                eprintln!("wrote calibration capture to {}", out.display());
            }
            Ok(0)
        }
        Command::Eval(a) => {
            let cfg = RunConfig {
                scenario: a.scenario,
                model_config: a.model.config()?,
                weights: a.model.weights,
                skeleton: a.common.skeleton,
                datasets: a.datasets,
                fps: a.fps,
                clip_length: a.clip_length,
                reset_between_clips: a.reset_between_clips,
                seed: a.common.seed,
                out: a.out,
                ema_beta_smoothing: a.ema_beta,
                bypass_oracle: a.bypass_oracle,
            };
            let report = harness::cmd_eval(&cfg)?;
            for s in &report.sequences {
                match (&s.metrics, &s.error) {
                    (Some(m), _) => eprintln!("{}: mpjpe {:.3} cm, mpjre {:.3} deg", s.name, m.mpjpe, m.mpjre),
                    (None, Some(e)) => eprintln!("{}: error: {e}", s.name),
                    _ => {}
                }
            }
            if cfg.out.is_none() {
                write_json(&report, None)?;
            }
            Ok(report.exit_code())
        }
        Command::Bench(a) => {
            let skel = harness::load_skeleton(a.common.skeleton.as_deref())?;
            let cfg = BenchConfig {
                scenario: a.scenario,
                warmup_steps: a.warmup,
                steps: a.steps,
                window: a.window,
                seed: a.common.seed,
                ..Default::default()
            };
            let report = harness::cmd_bench(&cfg, a.model.weights.as_deref(), a.model.config()?.as_ref(), &skel)?;
            eprintln!(
                "{:.1} steps/s, mean {:.3} ms, p99 {:.3} ms, constancy ratio {:.3}",
                report.steps_per_second, report.latency.mean_ms, report.latency.p99_ms, report.constancy.ratio
            );
            write_json(&report, a.out.as_ref())?;
            Ok(0)
        }
        Command::Calibrate(a) => {
            let r = harness::cmd_calibrate(&a.capture, &a.out)?;
            for (id, s) in &r.sensors {
                eprintln!("{id}: {:?}, still rms {:.3} deg", s.limb, s.still_rms_deg);
            }
            Ok(0)
        }
        Command::InitWeights(a) => {
            let (w, sum) = harness::cmd_init_weights(a.config.as_deref(), a.seed, &a.out)?;
            eprintln!("{} parameters", w.parameter_count());
            println!("{sum}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
