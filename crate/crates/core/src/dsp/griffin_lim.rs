use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mel::{MelFilterbank, MelSpectrogram};
use super::stft::{hann_window, istft, stft};
use super::{StftConfig, Waveform};
use crate::error::{Error, Result};

const PHASE_SEED: u64 = 0x5e1f_7c0d;

/// `||  |X| - S  ||_F / ||S||_F`, or the bare numerator norm when `S` is zero.
pub fn spectral_convergence(estimate: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let num: f64 = estimate.iter().zip(target.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = target.iter().map(|b| b * b).sum::<f64>().sqrt();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

fn linear_magnitude(m: &MelSpectrogram, cfg: &StftConfig) -> Result<Array2<f64>> {
    if !m.is_finite() {
        return Err(Error::NonFinite("mel spectrogram"));
    }
    if m.n_mels() != cfg.n_mels {
        return Err(Error::Dimension(format!("expected {} mel bands, got {}", cfg.n_mels, m.n_mels())));
    }
    let power = m.frames.mapv(|v| (v.exp() - cfg.log_floor).max(0.0));
    let pinv = MelFilterbank::new(cfg).pseudo_inverse();
    Ok(power.dot(&pinv.t()).mapv(|p| p.max(0.0).sqrt()))
}

/// Inverts a log-mel spectrogram to audio and records the spectral convergence
/// after every iteration.
pub fn griffin_lim_with_history(
    m: &MelSpectrogram,
    cfg: &StftConfig,
    iters: usize,
) -> Result<(Waveform, Vec<f64>)> {
    if iters == 0 {
        return Err(Error::OutOfRange("griffin-lim needs at least one iteration".into()));
    }
    let target = linear_magnitude(m, cfg)?;
    let (n_frames, n_freqs) = target.dim();
    let length = n_frames * cfg.hop_length;
    let window = hann_window(cfg.win_length, cfg.n_fft);

    let mut rng = ChaCha8Rng::seed_from_u64(PHASE_SEED);
    let mut spec: Array2<Complex64> = Array2::from_shape_fn((n_frames, n_freqs), |(t, k)| {
        let phase = rng.gen::<f64>() * std::f64::consts::TAU;
        Complex64::from_polar(target[[t, k]], phase)
    });

    let mut history = Vec::with_capacity(iters);
    let mut samples = Vec::new();
    for _ in 0..iters {
        samples = istft(&spec, cfg.n_fft, cfg.hop_length, &window, length);
        let rebuilt = stft(&samples, cfg.n_fft, cfg.hop_length, &window);
        history.push(spectral_convergence(&rebuilt.mapv(|c| c.norm()), &target));
        for ((s, r), &mag) in spec.iter_mut().zip(rebuilt.iter()).zip(target.iter()) {
            let n = r.norm();
            *s = if n > 1e-12 { r * (mag / n) } else { Complex64::new(mag, 0.0) };
        }
    }
    let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
    Ok((Waveform::new(samples, cfg.sample_rate)?, history))
}

/// Griffin-Lim reconstruction of a log-mel spectrogram (output length `T * hop`).
pub fn griffin_lim_invert(m: &MelSpectrogram, cfg: &StftConfig, iters: usize) -> Result<Waveform> {
    griffin_lim_with_history(m, cfg, iters).map(|(w, _)| w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::mel_spectrogram;

    #[test]
    fn floor_input_is_silent() {
        let cfg = StftConfig::default();
        let frames = Array2::from_elem((20, 80), cfg.log_floor.ln());
        let w = griffin_lim_invert(&MelSpectrogram::from_frames(frames, &cfg), &cfg, 10).unwrap();
        assert_eq!(w.len(), 20 * 256);
        assert!(w.peak() < 1e-3);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let cfg = StftConfig::default();
        let mut frames = Array2::zeros((10, 80));
        frames[[3, 3]] = f64::NAN;
        assert!(matches!(
            griffin_lim_invert(&MelSpectrogram::from_frames(frames, &cfg), &cfg, 5),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn more_iterations_do_not_increase_error() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..8000)
            .map(|i| {
                let t = i as f64 / 22050.0;
                0.3 * (2.0 * std::f64::consts::PI * 220.0 * t).sin()
                    + 0.1 * (2.0 * std::f64::consts::PI * 660.0 * t).sin()
            })
            .collect();
        let m = mel_spectrogram(&Waveform::new(x, 22050).unwrap(), &cfg).unwrap();
        let (_, hist) = griffin_lim_with_history(&m, &cfg, 60).unwrap();
        assert!(hist[59] <= hist[0]);
    }
}
