use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::color::downsample_rgb;
use super::Image;
use crate::error::{Error, Result};

pub const SEMANTIC_GRID: usize = 16;

/// Deterministic stand-in for a pretrained image embedder: a fixed random
/// projection of the 16×16 grayscale thumbnail, L2-normalized.
#[derive(Clone, Debug)]
pub struct SemanticStub {
    dim: usize,
    /// `[256 × dim]`, row-major.
    proj: Vec<f64>,
}

impl SemanticStub {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 8 {
            return Err(Error::invalid(format!(
                "semantic dim must be at least 8, got {dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = SEMANTIC_GRID * SEMANTIC_GRID * dim;
        let proj = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(SemanticStub { dim, proj })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// An all-black thumbnail projects to zero; it maps to the first basis
    /// vector so the output always has unit norm.
    pub fn embed(&self, img: &Image) -> Vec<f32> {
        let gray: Vec<f64> = downsample_rgb(img, SEMANTIC_GRID)
            .iter()
            .map(|[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect();
        let mut out = vec![0.0f64; self.dim];
        for (i, &x) in gray.iter().enumerate() {
            let row = &self.proj[i * self.dim..(i + 1) * self.dim];
            for (o, &p) in out.iter_mut().zip(row) {
                *o += x * p;
            }
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            let mut e = vec![0.0; self.dim];
            e[0] = 1.0;
            return e;
        }
        out.iter().map(|v| (v / norm) as f32).collect()
    }
}

pub fn stub_semantic_embed(img: &Image, dim: usize, seed: u64) -> Result<Vec<f32>> {
    Ok(SemanticStub::new(dim, seed)?.embed(img))
}
