//! `v2m`: extract features, train, generate and evaluate from the shell.
//!
//! Success prints one JSON object on stdout. Failure prints one JSON line
//! `{"error": code, "message": ...}` on stderr and exits with status 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use v2m_core::pipeline::{
    cmd_compare_rhythm, cmd_extract, cmd_generate, cmd_train, generate_synthetic_pair,
    gradcheck_suite, selftest, CheckResult,
};
use v2m_core::{Checkpoint, Config, Error, Result, RhythmKind};

#[derive(Parser, Debug)]
#[command(
    name = "v2m",
    version,
    about = "Video-to-music latent diffusion toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract visual features and the ground-truth rhythm of one clip.
    Extract {
        /// Directory of frame_NNNNN.ppm files, one per second.
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        /// Rhythm representation: odf, mel or tempogram.
        #[arg(long, default_value = "odf")]
        repr: RhythmKind,
        #[arg(long)]
        out: PathBuf,
        /// Config file; only the visual settings are read.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train on every feature file in a directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path; the loss table goes next to it.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long, env = "V2M_SEED")]
        seed: Option<u64>,
    },
    /// Generate a WAV for a frame directory from a checkpoint.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// DDIM steps; defaults to the checkpoint's setting.
        #[arg(long)]
        steps: Option<usize>,
        /// Guidance scale; defaults to the checkpoint's setting.
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long, env = "V2M_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Train one model per rhythm representation and tabulate alignment.
    CompareRhythm {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of clip directories, each with frames/ and audio.wav.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "V2M_SEED")]
        seed: Option<u64>,
    },
    /// Finite-difference gradient checks of every op and the generator.
    Gradcheck {
        #[arg(long, env = "V2M_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Fast oracle checks across modules.
    Selftest {
        #[arg(long, env = "V2M_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Write synthetic clip directories with aligned scene cuts and clicks.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 10)]
        seconds: usize,
        #[arg(long, default_value_t = 3)]
        events: usize,
        #[arg(long, env = "V2M_SEED", default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.validate()?;
    }
    Ok(cfg)
}

/// Checks become an error when any of them fails, after being reported.
fn checks_report(results: Vec<CheckResult>) -> Result<Value> {
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    let report = json!({
        "passed": failed.is_empty(),
        "checks": results.iter().map(CheckResult::to_json).collect::<Vec<_>>(),
    });
    if failed.is_empty() {
        Ok(report)
    } else {
        println!("{report}");
        Err(Error::InvalidArgument(format!(
            "checks failed: {}",
            failed.join(", ")
        )))
    }
}

fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Extract {
            video,
            audio,
            repr,
            out,
            config,
        } => {
            let cfg = load_config(config.as_deref(), None)?;
            let f = cmd_extract(&video, &audio, repr, &out, &cfg)?;
            Ok(json!({
                "output": out.display().to_string(),
                "seconds": f.video.seconds(),
                "repr": repr.as_str(),
                "rhythm_shape": [f.rhythm.matrix.rows(), f.rhythm.matrix.cols()],
                "latent_frames": f.latent.frames(),
            }))
        }
        Command::Train {
            config,
            data,
            out,
            resume,
            seed,
        } => {
            let cfg = match (&resume, &config) {
                (Some(r), None) => {
                    let mut c = Checkpoint::load(r)?.config;
                    if let Some(s) = seed {
                        c.seed = s;
                    }
                    c
                }
                _ => load_config(config.as_deref(), seed)?,
            };
            Ok(cmd_train(&cfg, &data, &out, resume.as_deref())?.to_json())
        }
        Command::Generate {
            ckpt,
            video,
            out,
            steps,
            scale,
            seed,
        } => {
            let (steps, scale) = match (steps, scale) {
                (Some(s), Some(c)) => (s, c),
                _ => {
                    let cfg = Checkpoint::load(&ckpt)?.config;
                    (
                        steps.unwrap_or(cfg.sample_steps),
                        scale.unwrap_or(cfg.guidance_scale),
                    )
                }
            };
            Ok(cmd_generate(&ckpt, &video, &out, steps, scale, seed)?.to_json())
        }
        Command::CompareRhythm {
            config,
            data,
            out,
            seed,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let rows = cmd_compare_rhythm(&cfg, &data, &out)?;
            Ok(json!({
                "output": out.display().to_string(),
                "rows": rows.iter().map(|r| json!({
                    "repr": r.repr.as_str(),
                    "steps": r.steps,
                    "ldm_loss": r.ldm_loss,
                    "pred_loss": r.pred_loss,
                    "align_score": r.align_score,
                })).collect::<Vec<_>>(),
            }))
        }
        Command::Gradcheck { seed } => checks_report(gradcheck_suite(seed)?),
        Command::Selftest { seed } => checks_report(selftest(seed)?),
        Command::Synth {
            out,
            count,
            seconds,
            events,
            seed,
        } => {
            let mut clips = Vec::with_capacity(count);
            for i in 0..count {
                let pair = generate_synthetic_pair(seconds, events, seed.wrapping_add(i as u64))?;
                let dir = out.join(format!("clip{i:03}"));
                pair.write(&dir)?;
                clips.push(json!({"dir": dir.display().to_string(), "events": pair.events}));
            }
            Ok(json!({"clips": clips}))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": e.code(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
