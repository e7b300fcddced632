use nalgebra::DMatrix;
use ndarray::Array2;

use super::stft::{hann_window, stft};
use super::{StftConfig, Waveform};
use crate::error::{Error, Result};

/// Log-mel spectrogram, `T x n_mels`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array2<f64>,
    pub hop: usize,
    pub win: usize,
    pub n_fft: usize,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn from_frames(frames: Array2<f64>, cfg: &StftConfig) -> Self {
        Self {
            frames,
            hop: cfg.hop_length,
            win: cfg.win_length,
            n_fft: cfg.n_fft,
            sample_rate: cfg.sample_rate,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }

    /// Consecutive row slice `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self { frames: self.frames.slice(ndarray::s![start..end, ..]).to_owned(), ..self.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(|v| v.is_finite())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if f >= MIN_LOG_HZ {
        min_log_mel + (f / MIN_LOG_HZ).ln() / logstep
    } else {
        f / F_SP
    }
}

fn mel_to_hz(m: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if m >= min_log_mel {
        MIN_LOG_HZ * (logstep * (m - min_log_mel)).exp()
    } else {
        F_SP * m
    }
}

/// Slaney-style triangular filterbank with area normalization, `n_mels x n_freqs`.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &StftConfig) -> Self {
        let n_freqs = cfg.n_freqs();
        let fft_freqs: Vec<f64> =
            (0..n_freqs).map(|k| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64).collect();
        let (mlo, mhi) = (hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.mel_fmax));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let mut weights = Array2::zeros((cfg.n_mels, n_freqs));
        for m in 0..cfg.n_mels {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let enorm = 2.0 / (hi - lo);
            for (k, &f) in fft_freqs.iter().enumerate() {
                let lower = (f - lo) / (center - lo);
                let upper = (hi - f) / (hi - center);
                weights[[m, k]] = lower.min(upper).max(0.0) * enorm;
            }
        }
        Self { weights }
    }

    /// Moore-Penrose pseudo-inverse, `n_freqs x n_mels`.
    pub fn pseudo_inverse(&self) -> Array2<f64> {
        let (r, c) = self.weights.dim();
        let m = DMatrix::from_fn(r, c, |i, j| self.weights[[i, j]]);
        let pinv = m.pseudo_inverse(1e-10).expect("svd of filterbank");
        Array2::from_shape_fn((c, r), |(i, j)| pinv[(i, j)])
    }
}

/// Mel-band power before the log, `T x n_mels`.
pub fn mel_power(w: &Waveform, cfg: &StftConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::SampleRateMismatch { expected: cfg.sample_rate, found: w.sample_rate });
    }
    if w.len() < cfg.win_length {
        return Err(Error::TooShort { needed: cfg.win_length, got: w.len() });
    }
    let window = hann_window(cfg.win_length, cfg.n_fft);
    let spec = stft(&w.samples, cfg.n_fft, cfg.hop_length, &window);
    let power = spec.mapv(|c| c.norm_sqr());
    let fb = MelFilterbank::new(cfg);
    Ok(power.dot(&fb.weights.t()))
}

/// Log-mel spectrogram: `log(mel_power + floor)`.
pub fn mel_spectrogram(w: &Waveform, cfg: &StftConfig) -> Result<MelSpectrogram> {
    let power = mel_power(w, cfg)?;
    let frames = power.mapv(|p| (p + cfg.log_floor).ln());
    Ok(MelSpectrogram::from_frames(frames, cfg))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use ndarray::Axis;

    use super::*;

    fn sine(freq: f64, len: usize, amp: f64) -> Waveform {
        Waveform::new((0..len).map(|i| amp * (2.0 * PI * freq * i as f64 / 22050.0).sin()).collect(), 22050)
            .unwrap()
    }

    #[test]
    fn frame_count_is_ceil_len_over_hop() {
        let cfg = StftConfig::default();
        let m = mel_spectrogram(&sine(440.0, 22050, 0.5), &cfg).unwrap();
        assert_eq!(m.n_frames(), 87);
        assert_eq!(m.n_mels(), 80);
    }

    #[test]
    fn zero_waveform_gives_log_floor() {
        let cfg = StftConfig::default();
        let m = mel_spectrogram(&Waveform::silence(4096, 22050), &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(m.frames.iter().all(|&v| v == floor));
    }

    #[test]
    fn short_input_is_rejected() {
        let cfg = StftConfig::default();
        assert!(matches!(
            mel_spectrogram(&Waveform::silence(1000, 22050), &cfg),
            Err(Error::TooShort { needed: 1024, got: 1000 })
        ));
    }

    #[test]
    fn filterbank_rows_are_nonnegative_and_nonempty() {
        let fb = MelFilterbank::new(&StftConfig::default());
        for row in fb.weights.rows() {
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.sum() > 0.0);
        }
    }

    #[test]
    fn filterbank_covers_configured_range() {
        let cfg = StftConfig::default();
        let fb = MelFilterbank::new(&cfg);
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        let coverage = fb.weights.sum_axis(Axis(0));
        for (k, c) in coverage.iter().enumerate() {
            let f = k as f64 * bin_hz;
            if f > cfg.mel_fmax + bin_hz {
                assert_eq!(*c, 0.0, "bin {k} above fmax");
            }
            if f > 2.0 * bin_hz && f < cfg.mel_fmax - 2.0 * bin_hz {
                assert!(*c > 0.0, "bin {k} at {f} Hz uncovered");
            }
        }
    }

    #[test]
    fn doubling_amplitude_quadruples_power() {
        let cfg = StftConfig::default();
        let a = mel_power(&sine(300.0, 8000, 0.2), &cfg).unwrap();
        let b = mel_power(&sine(300.0, 8000, 0.4), &cfg).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((y - 4.0 * x).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }
}
