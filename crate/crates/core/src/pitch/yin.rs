//! YIN detector with a pYIN-style threshold distribution for voicing.
//!
//! Each frame computes the cumulative-mean-normalized difference function
//! (CMNDF). Instead of a single absolute threshold, a grid of thresholds is
//! weighted by a Beta(2, 18) prior; every threshold votes for the first CMNDF
//! dip below it. The best-supported lag wins, and the summed prior mass of the
//! thresholds that found any dip is the frame's voicing probability.

use serde::{Deserialize, Serialize};

use super::PitchContour;
use crate::dsp::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct YinConfig {
    pub frame_length: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Frames whose voicing probability falls below this are unvoiced.
    pub voicing_threshold: f64,
    /// Frames quieter than this RMS are unvoiced regardless of periodicity.
    pub silence_rms: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        Self { frame_length: 1024, f_min: 65.0, f_max: 2093.0, voicing_threshold: 0.2, silence_rms: 1e-4 }
    }
}

const N_THRESHOLDS: usize = 100;

/// Beta(2, 18) mass over thresholds 0.01..=1.00.
fn threshold_prior() -> Vec<(f64, f64)> {
    let pdf = |x: f64| x * (1.0 - x).powi(17);
    let raw: Vec<(f64, f64)> =
        (1..=N_THRESHOLDS).map(|i| i as f64 / N_THRESHOLDS as f64).map(|s| (s, pdf(s))).collect();
    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    raw.into_iter().map(|(s, w)| (s, w / total)).collect()
}

fn cmndf(frame: &[f64], max_lag: usize) -> Vec<f64> {
    let w = frame.len() - max_lag;
    let mut d = vec![0.0; max_lag + 1];
    for (tau, dt) in d.iter_mut().enumerate().skip(1) {
        let mut acc = 0.0;
        for j in 0..w {
            let diff = frame[j] - frame[j + tau];
            acc += diff * diff;
        }
        *dt = acc;
    }
    let mut out = vec![1.0; max_lag + 1];
    let mut running = 0.0;
    for tau in 1..=max_lag {
        running += d[tau];
        out[tau] = if running > 0.0 { d[tau] * tau as f64 / running } else { 1.0 };
    }
    out
}

/// First local minimum at or after the first lag where `d < threshold`.
fn first_dip(d: &[f64], min_lag: usize, threshold: f64) -> Option<usize> {
    let mut tau = min_lag;
    while tau < d.len() {
        if d[tau] < threshold {
            while tau + 1 < d.len() && d[tau + 1] < d[tau] {
                tau += 1;
            }
            return Some(tau);
        }
        tau += 1;
    }
    None
}

fn parabolic(d: &[f64], tau: usize) -> f64 {
    if tau == 0 || tau + 1 >= d.len() {
        return tau as f64;
    }
    let (a, b, c) = (d[tau - 1], d[tau], d[tau + 1]);
    let den = a - 2.0 * b + c;
    if den.abs() < 1e-12 {
        tau as f64
    } else {
        tau as f64 + 0.5 * (a - c) / den
    }
}

/// Frame-synchronous f0 track: frame `t` is centered on sample `t * hop`,
/// matching the mel frame grid.
pub fn estimate_f0(w: &Waveform, hop: usize, cfg: &YinConfig) -> Result<PitchContour> {
    let sr = w.sample_rate as f64;
    let max_lag = (sr / cfg.f_min).ceil() as usize;
    let min_lag = ((sr / cfg.f_max).floor() as usize).max(2);
    if max_lag + 2 >= cfg.frame_length {
        return Err(Error::Config(format!(
            "frame length {} too short for f_min {} Hz",
            cfg.frame_length, cfg.f_min
        )));
    }
    if w.len() < 2 * cfg.frame_length {
        return Err(Error::TooShort { needed: 2 * cfg.frame_length, got: w.len() });
    }
    let prior = threshold_prior();
    let n_frames = w.len().div_ceil(hop);
    let half = cfg.frame_length as isize / 2;
    let mut frame = vec![0.0; cfg.frame_length];
    let mut f0 = Vec::with_capacity(n_frames);
    let mut voiced = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = (t * hop) as isize - half;
        for (i, v) in frame.iter_mut().enumerate() {
            let idx = start + i as isize;
            *v = if idx >= 0 && (idx as usize) < w.len() { w.samples[idx as usize] } else { 0.0 };
        }
        let rms = (frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64).sqrt();
        if rms < cfg.silence_rms {
            f0.push(0.0);
            voiced.push(false);
            continue;
        }
        let d = cmndf(&frame, max_lag);
        let mut votes: Vec<(usize, f64)> = Vec::new();
        let mut voiced_mass = 0.0;
        for &(s, weight) in &prior {
            if let Some(tau) = first_dip(&d, min_lag, s) {
                voiced_mass += weight;
                match votes.iter_mut().find(|(l, _)| *l == tau) {
                    Some((_, acc)) => *acc += weight,
                    None => votes.push((tau, weight)),
                }
            }
        }
        let best = votes.iter().max_by(|a, b| a.1.total_cmp(&b.1)).map(|&(tau, _)| tau);
        match best {
            Some(tau) if voiced_mass >= cfg.voicing_threshold => {
                let hz = sr / parabolic(&d, tau);
                if hz >= cfg.f_min && hz <= cfg.f_max {
                    f0.push(hz);
                    voiced.push(true);
                } else {
                    f0.push(0.0);
                    voiced.push(false);
                }
            }
            _ => {
                f0.push(0.0);
                voiced.push(false);
            }
        }
    }
    Ok(PitchContour { f0, voiced, hop, sample_rate: w.sample_rate })
}
