//! Parameter storage, layers and the optimizer.

mod embed;
mod layers;
mod optim;
mod params;
mod rope;

pub use embed::{causal_mask, sinusoidal, sinusoidal_table};
pub use layers::{Attention, LayerNorm, Linear, Mlp, LN_EPS};
pub use optim::{AdamW, InverseLr};
pub use params::{Bound, ParamId, ParamStore};
pub use rope::{rope_apply, RopeTables, ROPE_BASE};
