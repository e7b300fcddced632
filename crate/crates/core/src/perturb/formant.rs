use num_complex::Complex64;

use super::envelope::{interp, CepstralLifter};
use crate::dsp::{hann_window, istft, stft, Waveform};
use crate::error::{Error, Result};

pub const FORMANT_RATIO_MIN: f64 = 2.0 / 3.0;
pub const FORMANT_RATIO_MAX: f64 = 1.5;

pub(crate) const N_FFT: usize = 1024;
pub(crate) const HOP: usize = 256;
/// Cepstral coefficients kept for the envelope; below the period of a 700 Hz voice at 22.05 kHz.
pub(crate) const LIFTER: usize = 30;
pub(crate) const ENVELOPE_ITERS: usize = 3;

/// Warps the spectral envelope along frequency by `ratio` while keeping the
/// excitation (and thus f0) in place.
pub fn formant_shift(w: &Waveform, ratio: f64) -> Result<Waveform> {
    if !(FORMANT_RATIO_MIN - 1e-12..=FORMANT_RATIO_MAX + 1e-12).contains(&ratio) {
        return Err(Error::OutOfRange(format!(
            "formant ratio {ratio} outside [{FORMANT_RATIO_MIN:.4}, {FORMANT_RATIO_MAX}]"
        )));
    }
    if w.len() < N_FFT {
        return Err(Error::TooShort { needed: N_FFT, got: w.len() });
    }
    let window = hann_window(N_FFT, N_FFT);
    let mut spec = stft(&w.samples, N_FFT, HOP, &window);
    let mut lifter = CepstralLifter::new(N_FFT, LIFTER);
    let n_freqs = spec.ncols();
    let mut mag = vec![0.0; n_freqs];
    for mut row in spec.rows_mut() {
        for (m, c) in mag.iter_mut().zip(row.iter()) {
            *m = c.norm();
        }
        let env = lifter.true_envelope(&mag, ENVELOPE_ITERS);
        for (k, c) in row.iter_mut().enumerate() {
            let gain = (interp(&env, k as f64 / ratio) - env[k]).exp();
            *c = Complex64::new(c.re * gain, c.im * gain);
        }
    }
    let samples = istft(&spec, N_FFT, HOP, &window, w.len());
    Waveform::new(samples, w.sample_rate)
}
