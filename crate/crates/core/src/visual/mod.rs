//! Per-second visual signals from a 1-FPS frame sequence: color
//! histograms, a semantic embedding stand-in, scene cuts and visual beats.

mod color;
mod motion;
mod ppm;
mod semantic;

use std::path::Path;

pub use color::{color_histogram, downsample_rgb, rgb_to_hsv};
pub use motion::{
    detect_scene_transitions, hsv_content_score, visual_beats, visual_rhythm_curve, SCENE_THRESHOLD,
};
pub use ppm::{encode_ppm, frame_file_name, list_frames, parse_ppm, read_ppm, write_ppm};
pub use semantic::{stub_semantic_embed, SemanticStub, SEMANTIC_GRID};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MIN_SIDE: usize = 16;
pub const HIST_BINS: usize = 8;
/// Emotional feature width: three channels of [`HIST_BINS`] bins.
pub const EMO_DIM: usize = 3 * HIST_BINS;
pub const SEMANTIC_DIM: usize = 64;

/// 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::LengthMismatch {
                what: "image pixels",
                left: width * height * 3,
                right: pixels.len(),
            });
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn solid(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Image {
            width,
            height,
            pixels: rgb.repeat(width * height),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// One frame per second, all the same size and at least 16×16.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Image>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Image>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("frame sequence is empty"))?;
        let (w, h) = (first.width, first.height);
        if w < MIN_SIDE || h < MIN_SIDE {
            return Err(Error::invalid(format!(
                "frames must be at least {MIN_SIDE}×{MIN_SIDE}, got {w}×{h}"
            )));
        }
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| (f.width, f.height) != (w, h))
        {
            return Err(Error::invalid(format!(
                "frame {i} is {}×{}, expected {w}×{h}",
                f.width, f.height
            )));
        }
        Ok(FrameSequence { frames })
    }

    /// Loads `frame_NNNNN.ppm` files from `dir` in name order.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let paths = list_frames(dir)?;
        if paths.is_empty() {
            return Err(Error::invalid(format!(
                "no frame_*.ppm files in {}",
                dir.display()
            )));
        }
        let frames = paths
            .iter()
            .map(|p| read_ppm(p))
            .collect::<Result<Vec<_>>>()?;
        FrameSequence::new(frames)
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    /// Video length in seconds.
    pub fn seconds(&self) -> usize {
        self.frames.len()
    }
}

/// Visual conditioning signals, one row per second.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    /// `[M × D_s]`, unit-norm rows.
    pub semantic: Matrix,
    /// `[M × 24]` color histograms.
    pub emotional: Matrix,
    /// Scene-start flags in {0, 1}.
    pub scene: Vec<f32>,
    /// Visual beat strengths, ≥ 0.
    pub beats: Vec<f32>,
}

impl VideoFeatures {
    pub fn seconds(&self) -> usize {
        self.scene.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisualParams {
    pub semantic_dim: usize,
    pub semantic_seed: u64,
    pub hist_bins: usize,
    pub scene_threshold: f64,
}

impl Default for VisualParams {
    fn default() -> Self {
        VisualParams {
            semantic_dim: SEMANTIC_DIM,
            semantic_seed: 0,
            hist_bins: HIST_BINS,
            scene_threshold: SCENE_THRESHOLD,
        }
    }
}

pub fn extract_video_features(fs: &FrameSequence, p: &VisualParams) -> Result<VideoFeatures> {
    let stub = SemanticStub::new(p.semantic_dim, p.semantic_seed)?;
    let semantic: Vec<Vec<f32>> = fs.frames().iter().map(|f| stub.embed(f)).collect();
    let emotional = fs
        .frames()
        .iter()
        .map(|f| color_histogram(f, p.hist_bins))
        .collect::<Result<Vec<_>>>()?;
    let curve = visual_rhythm_curve(fs);
    Ok(VideoFeatures {
        semantic: Matrix::from_rows(&semantic)?,
        emotional: Matrix::from_rows(&emotional)?,
        scene: detect_scene_transitions(fs, p.scene_threshold),
        beats: visual_beats(&curve),
    })
}

#[cfg(test)]
mod tests;
