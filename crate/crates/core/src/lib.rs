//! Video-to-music generation core: autodiff, signal features, models and
//! the diffusion sampler.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > y)` deliberately rejects NaN.

pub mod audio;
pub mod autodiff;
pub mod diffusion;
pub mod error;
pub mod generator;
pub mod matrix;
pub mod nn;
pub mod pipeline;
pub mod predictor;
pub mod visual;

pub use audio::{RhythmKind, RhythmRepr, Waveform};
pub use autodiff::{Graph, Scalar, Tensor, Var};
pub use error::{Error, Result};
pub use generator::{FusionKind, FusionStrategy};
pub use matrix::Matrix;
pub use pipeline::{Checkpoint, ClipFeatures, Config};
pub use visual::{FrameSequence, VideoFeatures};
