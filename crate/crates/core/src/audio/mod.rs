//! Rhythm representations of mono audio: low-resolution mel, tempogram
//! and onset detection function, one row per second.

mod mel;
mod onset;
mod resize;
mod stft;
mod tempogram;
mod wav;

use std::fmt;
use std::str::FromStr;

pub use mel::{hz_to_mel, mel_raw, mel_to_hz, MelFilterbank};
pub use onset::{
    min_max_normalize, odf_lr, odf_lr_raw, onset_envelope, pick_peaks, OnsetCurve, PeakList,
    PeakParams, ONSET_MELS,
};
pub use resize::{norm_resize, resize_1d};
pub use stft::{hann, stft_magnitude, HOP, N_FFT};
pub use tempogram::{tempo_bins, tempogram_raw, BPM_MAX, BPM_MIN, TEMPOGRAM_WINDOW_S, TEMPO_BINS};
pub use wav::{encode_wav, parse_wav, peak_normalize, read_wav, write_wav};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const SAMPLE_RATE: u32 = 44_100;
/// Width of the low-resolution mel and tempogram representations.
pub const LR_DIM: usize = 16;
/// Mel bands of the raw mel spectrogram before reduction.
pub const MEL_RAW_BANDS: usize = 64;

/// Mono audio at 44.1 kHz, at least one second long.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::invalid(format!(
                "sample rate must be {SAMPLE_RATE}, got {sample_rate}"
            )));
        }
        if samples.len() < SAMPLE_RATE as usize {
            return Err(Error::AudioTooShort {
                samples: samples.len(),
                needed: SAMPLE_RATE as usize,
            });
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Whole seconds, `floor(len / sample_rate)`.
    pub fn seconds(&self) -> usize {
        self.samples.len() / self.sample_rate as usize
    }
}

/// Which rhythmic representation conditions the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RhythmKind {
    MelLR,
    TemLR,
    OdfLR,
}

impl RhythmKind {
    pub const ALL: [RhythmKind; 3] = [RhythmKind::MelLR, RhythmKind::TemLR, RhythmKind::OdfLR];

    pub fn dim(self) -> usize {
        match self {
            RhythmKind::OdfLR => 1,
            _ => LR_DIM,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            RhythmKind::MelLR => 0,
            RhythmKind::TemLR => 1,
            RhythmKind::OdfLR => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        RhythmKind::ALL.into_iter().find(|k| k.code() == c)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RhythmKind::MelLR => "mel",
            RhythmKind::TemLR => "tempogram",
            RhythmKind::OdfLR => "odf",
        }
    }
}

impl fmt::Display for RhythmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RhythmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mel" | "mel_lr" => Ok(RhythmKind::MelLR),
            "tempogram" | "tem" | "tem_lr" => Ok(RhythmKind::TemLR),
            "odf" | "odf_lr" => Ok(RhythmKind::OdfLR),
            other => Err(Error::invalid(format!(
                "unknown rhythm representation `{other}` (expected mel, tempogram or odf)"
            ))),
        }
    }
}

/// `[M × d]` rhythm matrix with entries in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RhythmRepr {
    pub kind: RhythmKind,
    pub matrix: Matrix,
}

impl RhythmRepr {
    pub fn seconds(&self) -> usize {
        self.matrix.rows()
    }
}

/// The per-second onset detection function of `w` with default peak picking.
pub fn odf_of(w: &Waveform) -> Result<Vec<f32>> {
    let curve = onset_envelope(w)?;
    let peaks = pick_peaks(&curve, PeakParams::default_for(&curve));
    Ok(odf_lr(&peaks, w.seconds()))
}

/// Computes the chosen representation for `w`.
pub fn extract_rhythm(w: &Waveform, kind: RhythmKind) -> Result<RhythmRepr> {
    let m = w.seconds();
    let matrix = match kind {
        RhythmKind::OdfLR => Matrix::column(odf_of(w)?),
        RhythmKind::MelLR => {
            let spec = stft_magnitude(w.samples(), N_FFT, HOP)?;
            let mel = mel_raw(&spec, MEL_RAW_BANDS, N_FFT, w.sample_rate())?;
            norm_resize(&mel, (m, LR_DIM))?
        }
        RhythmKind::TemLR => {
            let curve = onset_envelope(w)?;
            let tem = tempogram_raw(&curve, TEMPOGRAM_WINDOW_S)?;
            norm_resize(&tem, (m, LR_DIM))?
        }
    };
    Ok(RhythmRepr { kind, matrix })
}

#[cfg(test)]
mod tests;
