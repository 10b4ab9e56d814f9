//! Style-prompted two-stage codec language model for controllable speech
//! synthesis, together with the pipeline that builds its training data.

pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod factors;
pub mod features;
pub mod filterbank;
pub mod lm;
pub mod nn;
pub mod pipeline;
pub mod prompt;
pub mod rvq;
pub mod sar;
pub mod snar;
pub mod synth;
pub mod text;
pub mod trainer;

pub use config::TransformerConfig;
pub use error::{Error, Result};
