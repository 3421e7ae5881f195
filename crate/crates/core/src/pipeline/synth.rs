use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_wav, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::visual::{frame_file_name, write_ppm, FrameSequence, Image};

/// Contrasting solid colors; consecutive scenes never repeat a color.
pub const PALETTE: [[u8; 3]; 6] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [145, 30, 180],
    [0, 0, 0],
];
pub const FRAME_SIDE: usize = 32;
/// 440 Hz bed amplitude, −20 dBFS.
pub const BED_AMPLITUDE: f32 = 0.1;
pub const CLICK_PEAK: f32 = 0.8;
/// Decay time constant of a click in seconds.
pub const CLICK_TAU: f64 = 0.008;

/// Video of solid-color scenes and audio whose clicks land on the cuts.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub frames: FrameSequence,
    pub audio: Waveform,
    /// Sorted event seconds.
    pub events: Vec<usize>,
}

impl SyntheticPair {
    pub fn seconds(&self) -> usize {
        self.frames.seconds()
    }

    /// Writes `frames/frame_NNNNN.ppm` and `audio.wav` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let frames = dir.join("frames");
        std::fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
        for (i, f) in self.frames.frames().iter().enumerate() {
            write_ppm(&frames.join(frame_file_name(i)), f)?;
        }
        write_wav(&dir.join("audio.wav"), &self.audio)
    }
}

/// Deterministic pair of `m` seconds with `n_events` cuts drawn without
/// replacement from seconds `1..m`.
pub fn generate_synthetic_pair(m: usize, n_events: usize, seed: u64) -> Result<SyntheticPair> {
    if n_events < 2 || n_events >= m {
        return Err(Error::invalid(format!(
            "need 2 ≤ n_events < M, got n_events={n_events}, M={m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<usize> = sample(&mut rng, m - 1, n_events)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    events.sort_unstable();

    let first = rng.random_range(0..PALETTE.len());
    let mut scene = 0;
    let frames = (0..m)
        .map(|s| {
            if events.binary_search(&s).is_ok() {
                scene += 1;
            }
            Image::solid(
                FRAME_SIDE,
                FRAME_SIDE,
                PALETTE[(first + scene) % PALETTE.len()],
            )
        })
        .collect();

    let sr = SAMPLE_RATE as usize;
    let mut audio: Vec<f32> = (0..m * sr)
        .map(|i| {
            BED_AMPLITUDE * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / sr as f64).sin() as f32
        })
        .collect();
    let click_len = (CLICK_TAU * 8.0 * sr as f64) as usize;
    for &e in &events {
        for k in 0..click_len.min(audio.len() - e * sr) {
            let env = (-(k as f64) / (CLICK_TAU * sr as f64)).exp();
            let noise: f64 = rng.random_range(-1.0..=1.0);
            audio[e * sr + k] += CLICK_PEAK * (env * noise) as f32;
        }
        audio[e * sr] = CLICK_PEAK;
    }
    for x in &mut audio {
        *x = x.clamp(-1.0, 1.0);
    }
    Ok(SyntheticPair {
        frames: FrameSequence::new(frames)?,
        audio: Waveform::new(audio, SAMPLE_RATE)?,
        events,
    })
}
