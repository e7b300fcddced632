//! Content features: a small masked-reconstruction encoder that downsamples
//! mel frames by 4, and the grouping of similar consecutive vectors into
//! duration-annotated tokens.

mod encoder;
mod grouping;

pub use encoder::{pretrain_encoder, EncoderConfig, EncoderModel, PretrainConfig, PretrainReport};
pub use grouping::{cosine, group_content, pool_content, DEFAULT_TAU};

use crate::nn::Mat;

/// Mel frames covered by one content vector.
pub const DELTA: usize = 4;
pub const DOWNSAMPLE: usize = 4;

/// Encoder output, one vector per `delta` mel frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentFrames {
    pub z: Mat,
    pub delta: usize,
}

impl ContentFrames {
    pub fn new(z: Mat) -> Self {
        Self { z, delta: DELTA }
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }
}

/// Grouped content vectors with durations in mel frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentSequence {
    pub z: Mat,
    pub durations: Vec<usize>,
    pub delta: usize,
}

impl ContentSequence {
    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.durations.iter().sum()
    }

    /// Durations in units of content vectors.
    pub fn repeats(&self) -> Vec<usize> {
        self.durations.iter().map(|d| d / self.delta).collect()
    }
}
