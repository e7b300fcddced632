//! Signal substrate: waveforms, STFT, log-mel analysis and Griffin-Lim inversion.

mod griffin_lim;
mod mel;
mod stft;
mod wav;

pub use griffin_lim::{griffin_lim_invert, griffin_lim_with_history, spectral_convergence};
pub use mel::{mel_power, mel_spectrogram, MelFilterbank, MelSpectrogram};
pub use stft::{hann_window, istft, magnitude, stft, Spectrogram};
pub use wav::{load_wav, save_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 22050;

/// Mono PCM signal with amplitudes nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::OutOfRange("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform samples"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Splits into consecutive non-overlapping segments of `len` samples,
    /// dropping the remainder.
    pub fn segments(&self, len: usize) -> Vec<Waveform> {
        self.samples
            .chunks_exact(len.max(1))
            .map(|c| Waveform { samples: c.to_vec(), sample_rate: self.sample_rate })
            .collect()
    }
}

/// Analysis parameters shared by every module that touches spectrograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub mel_fmin: f64,
    pub mel_fmax: f64,
    pub log_floor: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 256,
            n_mels: 80,
            mel_fmin: 0.0,
            mel_fmax: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop_length == 0 || self.hop_length > self.win_length || self.win_length > self.n_fft {
            return Err(Error::Config(format!(
                "require 0 < hop ({}) <= win ({}) <= n_fft ({})",
                self.hop_length, self.win_length, self.n_fft
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        if !(self.mel_fmin >= 0.0 && self.mel_fmin < self.mel_fmax)
            || self.mel_fmax > self.sample_rate as f64 / 2.0
        {
            return Err(Error::Config(format!(
                "mel range [{}, {}] invalid for {} Hz",
                self.mel_fmin, self.mel_fmax, self.sample_rate
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log floor must be positive".into()));
        }
        Ok(())
    }

    /// Number of center-padded frames for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        len.div_ceil(self.hop_length)
    }

    pub fn n_freqs(&self) -> usize {
        self.n_fft / 2 + 1
    }
}
