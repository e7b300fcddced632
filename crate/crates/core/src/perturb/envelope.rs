use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

const LOG_FLOOR: f64 = 1e-9;

/// Cepstral smoothing of log-magnitude spectra.
pub struct CepstralLifter {
    n_fft: usize,
    lifter: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
}

impl CepstralLifter {
    pub fn new(n_fft: usize, lifter: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            lifter,
            fwd: planner.plan_fft_forward(n_fft),
            inv: planner.plan_fft_inverse(n_fft),
            buf: vec![Complex64::new(0.0, 0.0); n_fft],
        }
    }

    /// Log spectral envelope for a one-sided magnitude spectrum (`n_fft/2 + 1` bins).
    pub fn log_envelope(&mut self, magnitude: &[f64]) -> Vec<f64> {
        let log_mag: Vec<f64> = magnitude.iter().map(|m| m.max(LOG_FLOOR).ln()).collect();
        self.smooth(&log_mag)
    }

    /// Iterative cepstral envelope that rides on the spectral peaks rather than
    /// averaging peaks and valleys: the input is repeatedly raised to the current
    /// smooth estimate and re-smoothed.
    pub fn true_envelope(&mut self, magnitude: &[f64], iters: usize) -> Vec<f64> {
        let log_mag: Vec<f64> = magnitude.iter().map(|m| m.max(LOG_FLOOR).ln()).collect();
        let mut target = log_mag.clone();
        let mut env = self.smooth(&target);
        for _ in 1..iters {
            for (t, (&l, &e)) in target.iter_mut().zip(log_mag.iter().zip(&env)) {
                *t = l.max(e);
            }
            env = self.smooth(&target);
        }
        env
    }

    fn smooth(&mut self, log_mag: &[f64]) -> Vec<f64> {
        let n = self.n_fft;
        let half = n / 2;
        for k in 0..=half {
            let l = log_mag[k];
            self.buf[k] = Complex64::new(l, 0.0);
            if k > 0 && k < half {
                self.buf[n - k] = Complex64::new(l, 0.0);
            }
        }
        self.inv.process(&mut self.buf);
        for (q, c) in self.buf.iter_mut().enumerate() {
            let keep = q <= self.lifter || q >= n - self.lifter;
            *c = if keep { Complex64::new(c.re / n as f64, 0.0) } else { Complex64::new(0.0, 0.0) };
        }
        self.fwd.process(&mut self.buf);
        self.buf[..=half].iter().map(|c| c.re).collect()
    }
}

/// Samples `values` at fractional index `x` by linear interpolation, clamping at the ends.
pub fn interp(values: &[f64], x: f64) -> f64 {
    if x <= 0.0 {
        return values[0];
    }
    let last = values.len() - 1;
    if x >= last as f64 {
        return values[last];
    }
    let i = x.floor() as usize;
    let frac = x - i as f64;
    values[i] * (1.0 - frac) + values[i + 1] * frac
}
