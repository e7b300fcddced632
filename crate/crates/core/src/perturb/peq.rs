use rand::Rng;
use serde::{Deserialize, Serialize};

use super::biquad::{BiquadSection, FilterKind};
use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub const LOW_SHELF_HZ: f64 = 60.0;
pub const HIGH_SHELF_HZ: f64 = 10_000.0;
pub const N_PEAKING: usize = 8;
pub const Q_MIN: f64 = 2.0;
pub const Q_MAX: f64 = 5.0;
pub const MAX_GAIN_DB: f64 = 12.0;

/// Low shelf, eight log-spaced peaking filters, high shelf; applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeqChain {
    pub sections: Vec<BiquadSection>,
}

/// Center frequencies of all ten sections, ascending.
pub fn peq_frequencies() -> Vec<f64> {
    let ratio = HIGH_SHELF_HZ / LOW_SHELF_HZ;
    (0..=N_PEAKING + 1).map(|k| LOW_SHELF_HZ * ratio.powf(k as f64 / (N_PEAKING + 1) as f64)).collect()
}

/// `Q = Q_min (Q_max / Q_min)^z`.
pub fn q_from_unit(z: f64) -> f64 {
    Q_MIN * (Q_MAX / Q_MIN).powf(z)
}

impl PeqChain {
    /// Builds the chain from per-section `(z, gain_db)` draws, `z` in `[0, 1]`.
    pub fn from_draws(draws: &[(f64, f64)], sample_rate: f64) -> Result<Self> {
        if draws.len() != N_PEAKING + 2 {
            return Err(Error::Dimension(format!("expected {} sections, got {}", N_PEAKING + 2, draws.len())));
        }
        let freqs = peq_frequencies();
        let sections = draws
            .iter()
            .zip(&freqs)
            .enumerate()
            .map(|(i, (&(z, gain), &f))| {
                let kind = match i {
                    0 => FilterKind::LowShelf,
                    i if i == N_PEAKING + 1 => FilterKind::HighShelf,
                    _ => FilterKind::Peaking,
                };
                BiquadSection::design(kind, f, q_from_unit(z), gain, sample_rate)
            })
            .collect();
        Ok(Self { sections })
    }

    /// Every section at 0 dB.
    pub fn flat(sample_rate: f64) -> Self {
        Self::from_draws(&[(0.0, 0.0); N_PEAKING + 2], sample_rate).expect("ten sections")
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(BiquadSection::is_stable)
    }
}

/// Draws Q exponents and gains for each section.
pub fn sample_peq<R: Rng + ?Sized>(rng: &mut R, sample_rate: f64) -> PeqChain {
    let draws: Vec<(f64, f64)> =
        (0..N_PEAKING + 2).map(|_| (rng.gen::<f64>(), rng.gen_range(-MAX_GAIN_DB..=MAX_GAIN_DB))).collect();
    PeqChain::from_draws(&draws, sample_rate).expect("ten sections")
}

/// Serial cascade of the chain's sections.
pub fn apply_peq(w: &Waveform, chain: &PeqChain) -> Result<Waveform> {
    for s in &chain.sections {
        s.check_stable()?;
    }
    let mut samples = w.samples.clone();
    for s in &chain.sections {
        samples = s.process(&samples);
    }
    Ok(Waveform { samples, sample_rate: w.sample_rate })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn q_endpoints() {
        let fs = 22050.0;
        let low = PeqChain::from_draws(&[(0.0, 3.0); 10], fs).unwrap();
        assert!(low.sections.iter().all(|s| s.q == 2.0));
        let high = PeqChain::from_draws(&[(1.0, 3.0); 10], fs).unwrap();
        assert!(high.sections.iter().all(|s| (s.q - 5.0).abs() < 1e-12));
    }

    #[test]
    fn peaking_centers_are_geometric() {
        let f = peq_frequencies();
        assert_eq!(f[0], 60.0);
        assert!((f[9] - 10_000.0).abs() < 1e-9);
        // Oracle: repeated multiplication by the ninth root of the span ratio.
        let step = (10_000.0f64 / 60.0).ln() / 9.0;
        let mut expected = 60.0f64;
        for k in 1..=8 {
            expected *= step.exp();
            assert!((f[k] - expected).abs() < 1e-9 * expected, "k={k}");
            assert!(f[k] > f[k - 1]);
        }
    }

    #[test]
    fn sampled_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let c = sample_peq(&mut rng, 22050.0);
            assert_eq!(c.sections.len(), 10);
            assert_eq!(c.sections[0].kind, FilterKind::LowShelf);
            assert_eq!(c.sections[9].kind, FilterKind::HighShelf);
            assert_eq!(c.sections[0].f_c, 60.0);
            assert_eq!(c.sections[9].f_c, 10_000.0);
            for s in &c.sections {
                assert!((2.0..=5.0).contains(&s.q));
                assert!((-12.0..=12.0).contains(&s.gain_db));
            }
        }
    }

    #[test]
    fn zero_gain_chain_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let w = Waveform::new(x, 22050).unwrap();
        let mut draws = Vec::new();
        for _ in 0..10 {
            draws.push((rng.gen::<f64>(), 0.0));
        }
        let out = apply_peq(&w, &PeqChain::from_draws(&draws, 22050.0).unwrap()).unwrap();
        let err = w.samples.iter().zip(&out.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = apply_peq(&Waveform::silence(3000, 22050), &sample_peq(&mut rng, 22050.0)).unwrap();
        assert!(out.samples.iter().all(|&s| s == 0.0));
        assert_eq!(out.len(), 3000);
    }

    #[test]
    fn peaking_boost_measured_on_a_sine() {
        let fs = 22050.0;
        let fc = 1000.0;
        let section = BiquadSection::design(FilterKind::Peaking, fc, 2.0, 12.0, fs);
        let x: Vec<f64> = (0..22050).map(|i| 0.1 * (2.0 * PI * fc * i as f64 / fs).sin()).collect();
        let y = section.process(&x);
        let rms = |v: &[f64]| (v.iter().map(|s| s * s).sum::<f64>() / v.len() as f64).sqrt();
        // discard the first quarter second of transient
        let db = 20.0 * (rms(&y[5512..]) / rms(&x[5512..])).log10();
        assert!((db - 12.0).abs() <= 0.5, "{db}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn any_drawn_chain_is_stable(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            prop_assert!(sample_peq(&mut rng, 22050.0).is_stable());
        }
    }
}
