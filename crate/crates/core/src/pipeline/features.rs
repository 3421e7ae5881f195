use std::path::Path;

use super::format::{self, Container, Section};
use crate::audio::{RhythmKind, RhythmRepr};
use crate::diffusion::{LatentClip, LatentStats, TrainingClip};
use crate::error::{Error, Result};
use crate::visual::VideoFeatures;

pub const FEATURE_MAGIC: &[u8; 4] = b"V2MF";

/// Everything extracted from one clip: visual features, the ground-truth
/// rhythm representation and the encoded audio latents.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatures {
    pub video: VideoFeatures,
    pub rhythm: RhythmRepr,
    /// Latents without the excitation residual.
    pub latent: LatentClip,
}

impl ClipFeatures {
    pub fn seconds(&self) -> usize {
        self.video.seconds()
    }

    pub fn to_container(&self) -> Container {
        let v = &self.video;
        Container {
            header: String::new(),
            sections: vec![
                Section::from_matrix("semantic", &v.semantic),
                Section::from_matrix("emotional", &v.emotional),
                Section::vector("scene", v.scene.clone()),
                Section::vector("beats", v.beats.clone()),
                Section::from_matrix("rhythm_gt", &self.rhythm.matrix),
                Section::from_matrix("latent", &self.latent.z),
                Section::vector(
                    "latent_stats",
                    vec![
                        self.latent.stats.mean,
                        self.latent.stats.std,
                        self.latent.n_samples as f32,
                    ],
                ),
                Section::vector("rhythm_kind", vec![self.rhythm.kind.code() as f32]),
            ],
        }
    }

    pub fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            offset: 0,
            message,
        };
        let matrix = |name: &str| c.require(name, path)?.to_matrix();
        let vector = |name: &str| -> Result<Vec<f32>> {
            let s = c.require(name, path)?;
            if s.shape.len() != 1 {
                return Err(bad(format!(
                    "section `{name}` must be 1-D, got {:?}",
                    s.shape
                )));
            }
            Ok(s.data.clone())
        };
        let video = VideoFeatures {
            semantic: matrix("semantic")?,
            emotional: matrix("emotional")?,
            scene: vector("scene")?,
            beats: vector("beats")?,
        };
        let kind_code = vector("rhythm_kind")?;
        let kind = kind_code
            .first()
            .and_then(|&k| RhythmKind::from_code(k as u8))
            .ok_or_else(|| bad(format!("invalid rhythm kind {kind_code:?}")))?;
        let stats = vector("latent_stats")?;
        let [mean, std, n_samples] = stats[..] else {
            return Err(bad(format!(
                "latent_stats needs 3 values, got {}",
                stats.len()
            )));
        };
        let f = ClipFeatures {
            video,
            rhythm: RhythmRepr {
                kind,
                matrix: matrix("rhythm_gt")?,
            },
            latent: LatentClip {
                z: matrix("latent")?,
                stats: LatentStats { mean, std },
                n_samples: n_samples as usize,
                excitation: None,
            },
        };
        f.validate().map_err(|e| bad(e.to_string()))?;
        Ok(f)
    }

    /// All per-second sections agree on M and widths match the kind.
    pub fn validate(&self) -> Result<()> {
        let m = self.seconds();
        let rows = [
            ("semantic rows", self.video.semantic.rows()),
            ("emotional rows", self.video.emotional.rows()),
            ("beats", self.video.beats.len()),
            ("rhythm rows", self.rhythm.matrix.rows()),
        ];
        for (what, n) in rows {
            if n != m {
                return Err(Error::LengthMismatch {
                    what,
                    left: n,
                    right: m,
                });
            }
        }
        if self.rhythm.matrix.cols() != self.rhythm.kind.dim() {
            return Err(Error::shape(
                "rhythm_gt",
                format!(
                    "{} needs {} columns, got {}",
                    self.rhythm.kind,
                    self.rhythm.kind.dim(),
                    self.rhythm.matrix.cols()
                ),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        format::write_file(path, &format::encode(FEATURE_MAGIC, &self.to_container())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = format::read_file(path)?;
        Self::from_container(&format::decode(FEATURE_MAGIC, &bytes, path)?, path)
    }

    pub fn training_clip(&self) -> TrainingClip {
        TrainingClip {
            features: self.video.clone(),
            rhythm_gt: self.rhythm.matrix.clone(),
            latent: self.latent.z.clone(),
            g_start: 0.0,
            g_dur: self.seconds() as f64,
        }
    }
}
