//! Evolutionary-algorithm-inspired vision transformer at desk scale.
//!
//! Images are serialized with a space-filling curve ([`sfc`]), embedded as
//! slices, processed by encoder blocks that split channels between global
//! multi-head self-attention and a local 1D convolution ([`layers`]), and
//! classified by a task-token cross-attention head ([`head`]). [`analysis`]
//! gives exact parameter and FLOP counts, [`evolution`] is a toy
//! evolutionary algorithm whose operators mirror attention and the
//! feed-forward network.

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod diff;
pub mod error;
pub mod evolution;
pub mod head;
pub mod layers;
pub mod model;
pub mod pnm;
pub mod render;
pub mod sfc;
pub mod train;

pub use error::{Error, Result};
pub use model::{EatConfig, EatModel};
pub use sfc::{CurveKind, Grid};
