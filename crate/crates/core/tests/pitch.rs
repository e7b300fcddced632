use std::f64::consts::TAU;

use selfvc_core::dsp::Waveform;
use selfvc_core::pitch::*;

const SR: f64 = 22050.0;
const HOP: usize = 256;

/// Exponential chirp from `f_lo` to `f_hi` with `n_harm` harmonics at 1/h amplitude.
/// Returns the signal and the instantaneous f0 at each sample.
fn harmonic_sweep(f_lo: f64, f_hi: f64, secs: f64, n_harm: usize) -> (Waveform, Vec<f64>) {
    let n = (secs * SR) as usize;
    let k = (f_hi / f_lo).ln() / secs;
    let mut samples = Vec::with_capacity(n);
    let mut inst = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / SR;
        let phase = TAU * f_lo * ((k * t).exp() - 1.0) / k;
        let f = f_lo * (k * t).exp();
        let s: f64 = (1..=n_harm).filter(|&h| h as f64 * f < 0.45 * SR).map(|h| (h as f64 * phase).sin() / h as f64).sum();
        samples.push(0.2 * s);
        inst.push(f);
    }
    (Waveform::new(samples, SR as u32).unwrap(), inst)
}

#[test]
fn harmonic_sweep_is_tracked_within_two_percent() {
    let (w, inst) = harmonic_sweep(80.0, 400.0, 4.0, 10);
    let c = estimate_f0(&w, HOP, &YinConfig::default()).unwrap();
    let edge = YinConfig::default().frame_length / HOP;
    let interior = edge..c.len() - edge;
    let n = interior.len();
    let ok = interior.filter(|&t| c.voiced[t] && (c.f0[t] - inst[t * HOP]).abs() <= 0.02 * inst[t * HOP]).count();
    assert!(ok as f64 >= 0.95 * n as f64, "{ok}/{n}");
}

#[test]
fn fixed_tones_across_the_range() {
    for f in [80.0, 110.0, 165.0, 220.0, 300.0, 400.0] {
        let (w, _) = harmonic_sweep(f, f * (1.0 + 1e-9), 1.0, 8);
        let c = estimate_f0(&w, HOP, &YinConfig::default()).unwrap();
        for t in 4..c.len() - 4 {
            assert!(c.voiced[t], "{f} Hz frame {t}");
            assert!((c.f0[t] - f).abs() <= 0.005 * f, "{f} Hz frame {t}: {}", c.f0[t]);
        }
    }
}

#[test]
fn silence_between_tones_is_unvoiced() {
    let (a, _) = harmonic_sweep(150.0, 150.0 * (1.0 + 1e-9), 0.5, 8);
    let mut s = a.samples.clone();
    s.extend(vec![0.0; (0.5 * SR) as usize]);
    s.extend(a.samples.iter());
    let c = estimate_f0(&Waveform::new(s, SR as u32).unwrap(), HOP, &YinConfig::default()).unwrap();
    let mid = c.len() / 2;
    assert!((mid - 8..mid + 8).all(|t| !c.voiced[t] && c.f0[t] == 0.0));
    assert!(c.voiced[10] && c.voiced[c.len() - 10]);
}

#[test]
fn normalization_round_trip_on_estimated_contour() {
    let (w, _) = harmonic_sweep(90.0, 250.0, 2.0, 8);
    let c = estimate_f0(&w, HOP, &YinConfig::default()).unwrap();
    let s = speaker_stats(std::slice::from_ref(&c)).unwrap();
    let n = normalize(&c, &s).unwrap();
    let voiced: Vec<f64> = n.p.iter().zip(&n.voiced).filter(|(_, &v)| v).map(|(&p, _)| p).collect();
    let mean = voiced.iter().sum::<f64>() / voiced.len() as f64;
    assert!(mean.abs() < 1e-9);
    let back = denormalize(&n, &s);
    for (a, b) in c.f0.iter().zip(&back) {
        assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}

#[test]
fn gpe_of_estimate_against_itself_and_octave_error() {
    let (w, _) = harmonic_sweep(100.0, 200.0, 1.0, 8);
    let c = estimate_f0(&w, HOP, &YinConfig::default()).unwrap();
    assert_eq!(gross_pitch_error(&c, &c).unwrap().gpe, 0.0);
    let doubled = PitchContour::from_f0(c.f0.iter().map(|f| 2.0 * f).collect(), HOP, 22050);
    assert_eq!(gross_pitch_error(&c, &doubled).unwrap().gpe, 1.0);
}
