//! f0 estimation, speaker-normalized pitch, and gross pitch error.

mod gpe;
mod stats;
mod yin;

pub use gpe::{gross_pitch_error, GpeResult};
pub use stats::{denormalize, normalize, speaker_stats, NormalizedPitch, SpeakerPitchStats};
pub use yin::{estimate_f0, YinConfig};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Per-frame f0 in Hz (0 where unvoiced) with voicing flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchContour {
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
    pub hop: usize,
    pub sample_rate: u32,
}

impl PitchContour {
    /// Builds a contour from raw f0 values, treating `f0 > 0` as voiced.
    pub fn from_f0(f0: Vec<f64>, hop: usize, sample_rate: u32) -> Self {
        let voiced = f0.iter().map(|&f| f > 0.0).collect();
        let f0 = f0.into_iter().map(|f| f.max(0.0)).collect();
        Self { f0, voiced, hop, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn voiced_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0.iter().zip(&self.voiced).filter(|(_, &v)| v).map(|(&f, _)| f)
    }

    pub fn n_voiced(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }

    /// Median over voiced frames, if any.
    pub fn voiced_median(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.voiced_values().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }

    /// Debug CSV: `frame_index,f0_hz,voiced`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame_index", "f0_hz", "voiced"])?;
        for (i, (f, v)) in self.f0.iter().zip(&self.voiced).enumerate() {
            w.write_record([i.to_string(), format!("{f:.4}"), (*v as u8).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
