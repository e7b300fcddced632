use serde::{Deserialize, Serialize};

use super::PitchContour;
use crate::error::{Error, Result};

/// Voiced-frame f0 statistics of one speaker (sample standard deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerPitchStats {
    pub f_mean: f64,
    pub f_std: f64,
    pub n_voiced_frames: usize,
}

/// Speaker-standardized pitch. Unvoiced frames hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPitch {
    pub p: Vec<f64>,
    pub voiced: Vec<bool>,
}

pub fn speaker_stats(contours: &[PitchContour]) -> Result<SpeakerPitchStats> {
    let values: Vec<f64> = contours.iter().flat_map(|c| c.voiced_values()).collect();
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientVoicing { needed: 2, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(Error::ZeroPitchStd);
    }
    Ok(SpeakerPitchStats { f_mean: mean, f_std: std, n_voiced_frames: n })
}

pub fn normalize(c: &PitchContour, s: &SpeakerPitchStats) -> Result<NormalizedPitch> {
    if !(s.f_std > 0.0) {
        return Err(Error::ZeroPitchStd);
    }
    let p = c
        .f0
        .iter()
        .zip(&c.voiced)
        .map(|(&f, &v)| if v { (f - s.f_mean) / s.f_std } else { 0.0 })
        .collect();
    Ok(NormalizedPitch { p, voiced: c.voiced.clone() })
}

/// Inverse of [`normalize`] on voiced frames; unvoiced frames map to 0 Hz.
pub fn denormalize(n: &NormalizedPitch, s: &SpeakerPitchStats) -> Vec<f64> {
    n.p.iter().zip(&n.voiced).map(|(&p, &v)| if v { p * s.f_std + s.f_mean } else { 0.0 }).collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn contour(f0: &[f64]) -> PitchContour {
        PitchContour::from_f0(f0.to_vec(), 256, 22050)
    }

    #[test]
    fn sample_std_convention() {
        let s = speaker_stats(&[contour(&[100.0, 110.0, 90.0])]).unwrap();
        assert!((s.f_mean - 100.0).abs() < 1e-12);
        assert!((s.f_std - 10.0).abs() < 1e-12);
        assert_eq!(s.n_voiced_frames, 3);
    }

    #[test]
    fn constant_contour_is_degenerate() {
        assert!(matches!(speaker_stats(&[contour(&[150.0; 20])]), Err(Error::ZeroPitchStd)));
        assert!(matches!(
            speaker_stats(&[contour(&[0.0, 0.0, 120.0])]),
            Err(Error::InsufficientVoicing { got: 1, .. })
        ));
    }

    #[test]
    fn stats_of_two_contours_equal_stats_of_concatenation() {
        let a = contour(&[100.0, 0.0, 120.0, 130.0]);
        let b = contour(&[90.0, 95.0, 0.0]);
        let joined = contour(&[100.0, 0.0, 120.0, 130.0, 90.0, 95.0, 0.0]);
        assert_eq!(speaker_stats(&[a, b]).unwrap(), speaker_stats(&[joined]).unwrap());
    }

    #[test]
    fn normalize_hand_cases() {
        let s = SpeakerPitchStats { f_mean: 100.0, f_std: 10.0, n_voiced_frames: 3 };
        assert_eq!(normalize(&contour(&[100.0, 110.0, 90.0]), &s).unwrap().p, vec![0.0, 1.0, -1.0]);
        assert_eq!(normalize(&contour(&[0.0, 0.0]), &s).unwrap().p, vec![0.0, 0.0]);
        assert_eq!(normalize(&contour(&[100.0, 0.0, 100.0]), &s).unwrap().p, vec![0.0; 3]);
        let zero = SpeakerPitchStats { f_std: 0.0, ..s };
        assert!(matches!(normalize(&contour(&[100.0]), &zero), Err(Error::ZeroPitchStd)));
    }

    proptest! {
        #[test]
        fn normalize_inverts_on_voiced_frames(
            f0 in prop::collection::vec(prop_oneof![Just(0.0), 60.0f64..500.0], 1..100),
            mean in 80.0f64..300.0,
            std in 1.0f64..80.0,
        ) {
            let c = contour(&f0);
            let s = SpeakerPitchStats { f_mean: mean, f_std: std, n_voiced_frames: 2 };
            let back = denormalize(&normalize(&c, &s).unwrap(), &s);
            for (a, b) in c.f0.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
