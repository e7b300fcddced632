//! Formant-preserving pitch randomization.
//!
//! Each STFT frame is split into a cepstral envelope and an excitation. The
//! excitation bins are moved to `k * r_t` (phase-vocoder true-frequency
//! tracking keeps partials coherent across frames) and the original envelope
//! is re-applied, so only the harmonic spacing changes. The per-frame ratio
//! `r_t` applies a global shift and scales each frame's deviation from the
//! utterance median f0.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::envelope::CepstralLifter;
use super::formant::{ENVELOPE_ITERS, HOP, LIFTER, N_FFT};
use crate::dsp::{hann_window, istft, stft, Waveform};
use crate::error::{Error, Result};
use crate::pitch::{estimate_f0, YinConfig};

pub const SHIFT_RATIO_MIN: f64 = 0.5;
pub const SHIFT_RATIO_MAX: f64 = 2.0;
pub const RANGE_RATIO_MIN: f64 = 2.0 / 3.0;
pub const RANGE_RATIO_MAX: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchRandomizeReport {
    /// No voiced frame was found; the input was returned unchanged.
    pub degenerate: bool,
    pub source_median_f0: Option<f64>,
}

fn wrap_phase(x: f64) -> f64 {
    (x + PI).rem_euclid(TAU) - PI
}

/// Shifts pitch by per-frame ratios (one per STFT frame, hop 256).
pub fn shift_pitch_by_frames(w: &Waveform, ratios: &[f64]) -> Result<Waveform> {
    if w.len() < N_FFT {
        return Err(Error::TooShort { needed: N_FFT, got: w.len() });
    }
    let window = hann_window(N_FFT, N_FFT);
    let spec = stft(&w.samples, N_FFT, HOP, &window);
    let (n_frames, n_bins) = spec.dim();
    if ratios.len() != n_frames {
        return Err(Error::LengthMismatch(ratios.len(), n_frames));
    }
    let expected_advance = TAU * HOP as f64 / N_FFT as f64;
    let mut lifter = CepstralLifter::new(N_FFT, LIFTER);
    let mut out = spec.clone();
    let mut prev_phase = vec![0.0; n_bins];
    let mut synth_phase = vec![0.0; n_bins];
    let mut mag = vec![0.0; n_bins];
    let mut excitation = vec![0.0; n_bins];
    let mut true_bin = vec![0.0; n_bins];
    let mut new_exc = vec![0.0; n_bins];
    let mut new_bin = vec![0.0; n_bins];
    for t in 0..n_frames {
        let r = ratios[t];
        let row = spec.row(t);
        for k in 0..n_bins {
            mag[k] = row[k].norm();
            let phase = row[k].arg();
            let dev = if t == 0 { 0.0 } else { wrap_phase(phase - prev_phase[k] - k as f64 * expected_advance) };
            true_bin[k] = k as f64 + dev / expected_advance;
            prev_phase[k] = phase;
        }
        let env = lifter.true_envelope(&mag, ENVELOPE_ITERS);
        for k in 0..n_bins {
            excitation[k] = mag[k] / env[k].exp();
        }
        new_exc.iter_mut().for_each(|v| *v = 0.0);
        new_bin.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..n_bins {
            let target = (k as f64 * r).round() as usize;
            if target < n_bins {
                // The loudest contributor decides the bin's frequency.
                if excitation[k] >= new_exc[target] {
                    new_bin[target] = true_bin[k] * r;
                }
                new_exc[target] += excitation[k];
            }
        }
        let mut orow = out.row_mut(t);
        for k in 0..n_bins {
            if t == 0 {
                synth_phase[k] = row[k].arg();
            } else {
                synth_phase[k] = wrap_phase(synth_phase[k] + new_bin[k] * expected_advance);
            }
            let m = new_exc[k] * env[k].exp();
            orow[k] = Complex64::from_polar(m, synth_phase[k]);
        }
    }
    Waveform::new(istft(&out, N_FFT, HOP, &window, w.len()), w.sample_rate)
}

/// Moves the median f0 by `shift_ratio` and scales the contour's spread about
/// the median by `range_ratio`.
pub fn pitch_randomize(w: &Waveform, shift_ratio: f64, range_ratio: f64) -> Result<(Waveform, PitchRandomizeReport)> {
    if !(SHIFT_RATIO_MIN - 1e-12..=SHIFT_RATIO_MAX + 1e-12).contains(&shift_ratio) {
        return Err(Error::OutOfRange(format!("pitch shift ratio {shift_ratio} outside [0.5, 2]")));
    }
    if !(RANGE_RATIO_MIN - 1e-12..=RANGE_RATIO_MAX + 1e-12).contains(&range_ratio) {
        return Err(Error::OutOfRange(format!("pitch range ratio {range_ratio} outside [2/3, 1.5]")));
    }
    let contour = estimate_f0(w, HOP, &YinConfig::default())?;
    let Some(median) = contour.voiced_median() else {
        return Ok((w.clone(), PitchRandomizeReport { degenerate: true, source_median_f0: None }));
    };
    let ratios: Vec<f64> = contour
        .f0
        .iter()
        .zip(&contour.voiced)
        .map(|(&f, &v)| {
            if v {
                let target = shift_ratio * (median + range_ratio * (f - median));
                (target / f).clamp(0.25, 4.0)
            } else {
                shift_ratio
            }
        })
        .collect();
    let out = shift_pitch_by_frames(w, &ratios)?;
    Ok((out, PitchRandomizeReport { degenerate: false, source_median_f0: Some(median) }))
}
