use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::checkpoint::Checkpoint;
use super::config::Config;
use super::features::ClipFeatures;
use super::metrics::{circular_shift, pearson, rhythm_alignment_score};
use crate::audio::{
    extract_rhythm, odf_of, peak_normalize, read_wav, write_wav, RhythmKind, RhythmRepr, Waveform,
    SAMPLE_RATE,
};
use crate::diffusion::{
    ddim_sample, decode_with_noise, encode_samples, latent_frames, p_pred, GeneratorModel,
    LatentStats, Trainer, D_LAT,
};
use crate::error::{Error, Result};
use crate::generator::FusionKind;
use crate::matrix::Matrix;
use crate::visual::{extract_video_features, FrameSequence, VideoFeatures, VisualParams};

/// Output level of generated audio.
pub const OUTPUT_DBFS: f64 = -1.0;
pub const FEATURE_EXT: &str = "v2mf";

fn visual_params(config: &Config) -> VisualParams {
    VisualParams {
        semantic_seed: config.semantic_seed,
        ..VisualParams::default()
    }
}

/// Features of an in-memory clip. Audio is cut to the video's whole seconds.
pub fn extract_pair(
    frames: &FrameSequence,
    audio: &Waveform,
    kind: RhythmKind,
    vp: &VisualParams,
) -> Result<ClipFeatures> {
    let m = frames.seconds();
    if audio.seconds() != m {
        return Err(Error::invalid(format!(
            "video has M={m} frames but audio has M={} whole seconds",
            audio.seconds()
        )));
    }
    let trimmed = Waveform::new(
        audio.samples()[..m * SAMPLE_RATE as usize].to_vec(),
        SAMPLE_RATE,
    )?;
    let video = extract_video_features(frames, vp)?;
    let rhythm = extract_rhythm(&trimmed, kind)?;
    let mut latent = encode_samples(trimmed.samples())?;
    latent.excitation = None;
    let f = ClipFeatures {
        video,
        rhythm,
        latent,
    };
    f.validate()?;
    Ok(f)
}

/// Reads a frame directory and a WAV file, extracts features and writes them to `out`.
pub fn cmd_extract(
    video_dir: &Path,
    audio_path: &Path,
    kind: RhythmKind,
    out: &Path,
    config: &Config,
) -> Result<ClipFeatures> {
    let frames = FrameSequence::read_dir(video_dir)?;
    let audio = read_wav(audio_path)?;
    let f = extract_pair(&frames, &audio, kind, &visual_params(config))?;
    f.save(out)?;
    Ok(f)
}

/// Feature files directly inside `dir`, sorted by path.
pub fn list_feature_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir)
        .min_depth(1)
        .max_depth(1)
        .sort_by_file_name()
    {
        let entry = entry.map_err(|e| {
            let io = e
                .into_io_error()
                .unwrap_or_else(|| std::io::Error::other("directory walk failed"));
            Error::io(dir, io)
        })?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|x| x == FEATURE_EXT)
        {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

/// Clip directories (containing `frames/` and `audio.wav`) inside `dir`, sorted.
pub fn list_clip_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir)
        .min_depth(1)
        .max_depth(1)
        .sort_by_file_name()
    {
        let entry = entry.map_err(|e| {
            let io = e
                .into_io_error()
                .unwrap_or_else(|| std::io::Error::other("directory walk failed"));
            Error::io(dir, io)
        })?;
        let p = entry.path();
        if entry.file_type().is_dir() && p.join("frames").is_dir() && p.join("audio.wav").is_file()
        {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

/// Mean per-epoch losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: u32,
    pub ldm_loss: f32,
    pub predictor_loss: f32,
    pub p_pred: f64,
}

/// Average statistics of the training latents, used to decode samples.
pub fn pooled_stats(clips: &[ClipFeatures]) -> LatentStats {
    let n = clips.len().max(1) as f64;
    let mean = clips
        .iter()
        .map(|c| c.latent.stats.mean as f64)
        .sum::<f64>()
        / n;
    let std = clips.iter().map(|c| c.latent.stats.std as f64).sum::<f64>() / n;
    LatentStats {
        mean: mean as f32,
        std: std as f32,
    }
}

/// Runs epochs `start..config.epochs`, one step per clip in the given order.
/// `on_epoch` sees the trainer after every epoch.
pub fn train_epochs(
    trainer: &mut Trainer,
    config: &Config,
    clips: &[ClipFeatures],
    start: u32,
    mut on_epoch: impl FnMut(u32, &Trainer) -> Result<()>,
) -> Result<Vec<EpochRow>> {
    if clips.is_empty() {
        return Err(Error::invalid("training needs at least one clip"));
    }
    for c in clips {
        if c.rhythm.kind != config.rhythm {
            return Err(Error::Config(format!(
                "clip rhythm `{}` differs from configured `{}`",
                c.rhythm.kind, config.rhythm
            )));
        }
    }
    let data: Vec<_> = clips.iter().map(ClipFeatures::training_clip).collect();
    let curriculum = trainer.cfg.curriculum;
    let mut rows = Vec::new();
    for epoch in start..config.epochs {
        let (mut ldm, mut pred) = (0.0f64, 0.0f64);
        for clip in &data {
            let s = trainer.training_step(clip, epoch)?;
            ldm += s.ldm as f64;
            pred += s.predictor as f64;
        }
        let n = data.len() as f64;
        rows.push(EpochRow {
            epoch,
            ldm_loss: (ldm / n) as f32,
            predictor_loss: (pred / n) as f32,
            p_pred: p_pred(epoch, curriculum),
        });
        on_epoch(epoch, trainer)?;
    }
    Ok(rows)
}

pub fn write_loss_csv(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "ldm_loss", "predictor_loss", "p_pred"])?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.ldm_loss.to_string(),
            r.predictor_loss.to_string(),
            r.p_pred.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Path of the loss table written next to a checkpoint.
pub fn loss_csv_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub steps: u64,
}

impl TrainReport {
    pub fn to_json(&self) -> Value {
        let last = self.rows.last();
        json!({
            "checkpoint": self.checkpoint.display().to_string(),
            "loss_csv": self.loss_csv.display().to_string(),
            "epochs_run": self.rows.len(),
            "steps": self.steps,
            "final_ldm_loss": last.map(|r| r.ldm_loss),
            "final_predictor_loss": last.map(|r| r.predictor_loss),
        })
    }
}

/// Trains on every feature file in `data_dir`. With `resume`, continues from
/// that checkpoint's epoch using its configuration.
pub fn cmd_train(
    config: &Config,
    data_dir: &Path,
    ckpt_out: &Path,
    resume: Option<&Path>,
) -> Result<TrainReport> {
    let files = list_feature_files(data_dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!(
            "no .{FEATURE_EXT} files in {}",
            data_dir.display()
        )));
    }
    let clips = files
        .iter()
        .map(|p| ClipFeatures::load(p))
        .collect::<Result<Vec<_>>>()?;
    let (mut trainer, config, start, stats) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config != *config {
                return Err(Error::Config(
                    "resume config differs from the checkpoint's snapshot".into(),
                ));
            }
            (
                ck.to_trainer()?,
                ck.config.clone(),
                ck.epoch,
                ck.latent_stats,
            )
        }
        None => (
            Trainer::new(
                config.predictor_config(),
                config.generator_config()?,
                config.train_config()?,
            )?,
            config.clone(),
            0,
            pooled_stats(&clips),
        ),
    };
    let rows = train_epochs(&mut trainer, &config, &clips, start, |epoch, tr| {
        let done = epoch + 1;
        if done % config.save_every == 0 || done == config.epochs {
            Checkpoint::from_trainer(tr, &config, done, stats).save(ckpt_out)?;
        }
        Ok(())
    })?;
    if rows.is_empty() {
        Checkpoint::from_trainer(&trainer, &config, start, stats).save(ckpt_out)?;
    }
    let loss_csv = loss_csv_path(ckpt_out);
    write_loss_csv(&loss_csv, &rows)?;
    Ok(TrainReport {
        rows,
        checkpoint: ckpt_out.to_path_buf(),
        loss_csv,
        steps: trainer.steps(),
    })
}

/// Samples audio for a clip: predicts rhythm, runs guided DDIM and decodes
/// over seeded noise. Returns the audio and the predicted rhythm.
pub fn generate_audio(
    trainer: &Trainer,
    kind: RhythmKind,
    stats: LatentStats,
    video: &VideoFeatures,
    steps: usize,
    scale: f64,
    seed: u64,
) -> Result<(Waveform, RhythmRepr)> {
    let m = video.seconds();
    let predicted = trainer.predictor.predict(&trainer.store, video)?;
    let model = GeneratorModel::new(
        &trainer.store,
        &trainer.generator,
        video,
        &predicted,
        0.0,
        m as f64,
    )?;
    let n_samples = m * SAMPLE_RATE as usize;
    let z = ddim_sample(
        &model,
        &[latent_frames(n_samples), D_LAT],
        steps,
        scale,
        seed,
    )?;
    let z = Matrix::from_tensor(&z)?;
    let mut samples = decode_with_noise(&z, stats, n_samples, seed)?;
    peak_normalize(&mut samples, OUTPUT_DBFS);
    Ok((
        Waveform::new(samples, SAMPLE_RATE)?,
        RhythmRepr {
            kind,
            matrix: predicted,
        },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateReport {
    pub seconds: usize,
    pub latent_frames: usize,
    pub steps: usize,
    pub scale: f64,
    pub seed: u64,
    /// Against the predicted rhythm; present for ODF models.
    pub alignment_score: Option<f64>,
    /// Same, with the condition rotated by half the clip.
    pub shifted_score: Option<f64>,
    pub output: PathBuf,
}

impl GenerateReport {
    pub fn to_json(&self) -> Value {
        json!({
            "output": self.output.display().to_string(),
            "seconds": self.seconds,
            "latent_frames": self.latent_frames,
            "steps": self.steps,
            "guidance_scale": self.scale,
            "seed": self.seed,
            "alignment_score": self.alignment_score,
            "shifted_alignment_score": self.shifted_score,
        })
    }
}

/// Alignment against `cond` and against `cond` rotated by `M/2` seconds.
pub fn alignment_with_baseline(audio: &Waveform, cond: &RhythmRepr) -> Result<(f64, f64)> {
    let score = rhythm_alignment_score(audio, cond)?;
    let m = cond.seconds();
    let shifted = circular_shift(cond.matrix.data(), m / 2);
    Ok((score, pearson(&odf_of(audio)?, &shifted)?))
}

pub fn cmd_generate(
    ckpt: &Path,
    video_dir: &Path,
    out_wav: &Path,
    steps: usize,
    scale: f64,
    seed: u64,
) -> Result<GenerateReport> {
    if steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    let ck = Checkpoint::load(ckpt)?;
    let trainer = ck.to_trainer()?;
    let frames = FrameSequence::read_dir(video_dir)?;
    let video = extract_video_features(&frames, &visual_params(&ck.config))?;
    let (audio, predicted) = generate_audio(
        &trainer,
        ck.config.rhythm,
        ck.latent_stats,
        &video,
        steps,
        scale,
        seed,
    )?;
    if let Some(parent) = out_wav.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_wav(out_wav, &audio)?;
    let (alignment_score, shifted_score) = if predicted.kind == RhythmKind::OdfLR {
        let (a, b) = alignment_with_baseline(&audio, &predicted)?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    Ok(GenerateReport {
        seconds: audio.seconds(),
        latent_frames: latent_frames(audio.samples().len()),
        steps,
        scale,
        seed,
        alignment_score,
        shifted_score,
        output: out_wav.to_path_buf(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub repr: RhythmKind,
    pub steps: u64,
    pub ldm_loss: f32,
    pub pred_loss: f32,
    pub align_score: f64,
}

pub const MIN_COMPARE_PAIRS: usize = 10;

/// Trains one additive-fusion model per rhythm representation under the
/// same seed and budget, then scores generated audio against each clip's
/// ground-truth onset function.
pub fn compare_rhythm(
    config: &Config,
    pairs: &[(FrameSequence, Waveform)],
) -> Result<Vec<CompareRow>> {
    if pairs.len() < MIN_COMPARE_PAIRS {
        return Err(Error::invalid(format!(
            "rhythm comparison needs at least {MIN_COMPARE_PAIRS} pairs, got {}",
            pairs.len()
        )));
    }
    let vp = visual_params(config);
    let references = pairs
        .iter()
        .map(|(_, a)| {
            let m = a.seconds();
            let trimmed = Waveform::new(
                a.samples()[..m * SAMPLE_RATE as usize].to_vec(),
                SAMPLE_RATE,
            )?;
            Ok(RhythmRepr {
                kind: RhythmKind::OdfLR,
                matrix: Matrix::column(odf_of(&trimmed)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for kind in RhythmKind::ALL {
        let cfg = Config {
            rhythm: kind,
            strategy: FusionKind::Additive,
            ..config.clone()
        };
        cfg.validate()?;
        let clips = pairs
            .iter()
            .map(|(f, a)| extract_pair(f, a, kind, &vp))
            .collect::<Result<Vec<_>>>()?;
        let mut trainer = Trainer::new(
            cfg.predictor_config(),
            cfg.generator_config()?,
            cfg.train_config()?,
        )?;
        let epochs = train_epochs(&mut trainer, &cfg, &clips, 0, |_, _| Ok(()))?;
        let last = epochs
            .last()
            .copied()
            .ok_or_else(|| Error::Config("epochs must be at least 1".into()))?;
        let stats = pooled_stats(&clips);
        let mut total = 0.0;
        for (i, (clip, reference)) in clips.iter().zip(&references).enumerate() {
            let seed = cfg.seed.wrapping_add(i as u64);
            let (audio, _) = generate_audio(
                &trainer,
                kind,
                stats,
                &clip.video,
                cfg.sample_steps,
                cfg.guidance_scale,
                seed,
            )?;
            total += rhythm_alignment_score(&audio, reference)?;
        }
        rows.push(CompareRow {
            repr: kind,
            steps: trainer.steps(),
            ldm_loss: last.ldm_loss,
            pred_loss: last.predictor_loss,
            align_score: total / clips.len() as f64,
        });
    }
    Ok(rows)
}

pub fn write_compare_csv(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["repr", "steps", "ldm_loss", "pred_loss", "align_score"])?;
    for r in rows {
        w.write_record([
            r.repr.as_str().to_string(),
            r.steps.to_string(),
            r.ldm_loss.to_string(),
            r.pred_loss.to_string(),
            r.align_score.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads every clip directory under `data_dir` and writes the comparison table.
pub fn cmd_compare_rhythm(
    config: &Config,
    data_dir: &Path,
    out_csv: &Path,
) -> Result<Vec<CompareRow>> {
    let pairs = list_clip_dirs(data_dir)?
        .iter()
        .map(|d| {
            Ok((
                FrameSequence::read_dir(&d.join("frames"))?,
                read_wav(&d.join("audio.wav"))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = compare_rhythm(config, &pairs)?;
    if let Some(parent) = out_csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_compare_csv(out_csv, &rows)?;
    Ok(rows)
}
