use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    LowShelf,
    Peaking,
    HighShelf,
}

/// Second-order IIR section with `a0` normalized to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiquadSection {
    pub kind: FilterKind,
    pub f_c: f64,
    pub q: f64,
    pub gain_db: f64,
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadSection {
    /// RBJ audio-EQ-cookbook coefficients.
    pub fn design(kind: FilterKind, f_c: f64, q: f64, gain_db: f64, sample_rate: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let w0 = 2.0 * PI * f_c / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let sqa = 2.0 * a.sqrt() * alpha;
        let (b0, b1, b2, a0, a1, a2) = match kind {
            FilterKind::Peaking => (
                1.0 + alpha * a,
                -2.0 * cos,
                1.0 - alpha * a,
                1.0 + alpha / a,
                -2.0 * cos,
                1.0 - alpha / a,
            ),
            FilterKind::LowShelf => (
                a * ((a + 1.0) - (a - 1.0) * cos + sqa),
                2.0 * a * ((a - 1.0) - (a + 1.0) * cos),
                a * ((a + 1.0) - (a - 1.0) * cos - sqa),
                (a + 1.0) + (a - 1.0) * cos + sqa,
                -2.0 * ((a - 1.0) + (a + 1.0) * cos),
                (a + 1.0) + (a - 1.0) * cos - sqa,
            ),
            FilterKind::HighShelf => (
                a * ((a + 1.0) + (a - 1.0) * cos + sqa),
                -2.0 * a * ((a - 1.0) + (a + 1.0) * cos),
                a * ((a + 1.0) + (a - 1.0) * cos - sqa),
                (a + 1.0) - (a - 1.0) * cos + sqa,
                2.0 * ((a - 1.0) - (a + 1.0) * cos),
                (a + 1.0) - (a - 1.0) * cos - sqa,
            ),
        };
        Self {
            kind,
            f_c,
            q,
            gain_db,
            b0: b0 / a0,
            b1: b1 / a0,
            b2: b2 / a0,
            a1: a1 / a0,
            a2: a2 / a0,
        }
    }

    /// Largest pole magnitude of `1 + a1 z^-1 + a2 z^-2`.
    pub fn pole_radius(&self) -> f64 {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        let r1 = (Complex64::new(-self.a1, 0.0) + disc) / 2.0;
        let r2 = (Complex64::new(-self.a1, 0.0) - disc) / 2.0;
        r1.norm().max(r2.norm())
    }

    pub fn is_stable(&self) -> bool {
        let finite = [self.b0, self.b1, self.b2, self.a1, self.a2].iter().all(|c| c.is_finite());
        finite && self.pole_radius() < 1.0
    }

    /// Complex response at `freq` Hz.
    pub fn response(&self, freq: f64, sample_rate: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * freq / sample_rate);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }

    /// Transposed direct form II, zero initial state.
    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let (mut s1, mut s2) = (0.0, 0.0);
        x.iter()
            .map(|&v| {
                let y = self.b0 * v + s1;
                s1 = self.b1 * v - self.a1 * y + s2;
                s2 = self.b2 * v - self.a2 * y;
                y
            })
            .collect()
    }

    pub fn check_stable(&self) -> Result<()> {
        if self.is_stable() {
            Ok(())
        } else {
            Err(Error::UnstableFilter(self.pole_radius()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gain_sections_are_identity() {
        for kind in [FilterKind::LowShelf, FilterKind::Peaking, FilterKind::HighShelf] {
            let s = BiquadSection::design(kind, 1000.0, 3.0, 0.0, 22050.0);
            assert!((s.b0 - 1.0).abs() < 1e-12, "{kind:?}");
            assert!((s.b1 - s.a1).abs() < 1e-12 && (s.b2 - s.a2).abs() < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn peaking_gain_at_center_matches_design() {
        let s = BiquadSection::design(FilterKind::Peaking, 1000.0, 2.0, 12.0, 22050.0);
        let db = 20.0 * s.response(1000.0, 22050.0).norm().log10();
        assert!((db - 12.0).abs() < 1e-9);
    }

    #[test]
    fn shelves_reach_their_gain_far_from_cutoff() {
        let ls = BiquadSection::design(FilterKind::LowShelf, 60.0, 0.7071, -6.0, 22050.0);
        assert!((20.0 * ls.response(1.0, 22050.0).norm().log10() + 6.0).abs() < 0.05);
        let hs = BiquadSection::design(FilterKind::HighShelf, 2000.0, 0.7071, 6.0, 22050.0);
        assert!((20.0 * hs.response(11000.0, 22050.0).norm().log10() - 6.0).abs() < 0.05);
    }

    #[test]
    fn unstable_section_is_reported() {
        let mut s = BiquadSection::design(FilterKind::Peaking, 1000.0, 2.0, 3.0, 22050.0);
        s.a2 = 1.2;
        assert!(matches!(s.check_stable(), Err(Error::UnstableFilter(_))));
    }
}
