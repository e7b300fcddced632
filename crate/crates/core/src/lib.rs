pub mod content;
pub mod data;
pub mod dsp;
pub mod error;
pub mod nn;
pub mod perturb;
pub mod pipeline;
pub mod pitch;
pub mod speaker;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
