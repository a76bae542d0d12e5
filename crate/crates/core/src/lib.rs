//! Hierarchical binary quantization and a generative refinement network
//! trained and sampled at desk scale on synthetic token maps.

pub mod error;
pub mod harness;
pub mod hbq;
pub mod numerics;
pub mod predictor;
pub mod refine;
pub mod sampler;
pub mod synthdata;
pub mod trainer;

pub use error::{GrnError, Result};
