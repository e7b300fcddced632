use super::PitchContour;
use crate::error::{Error, Result};

/// Relative deviation above which a co-voiced frame counts as a gross error.
pub const GPE_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpeResult {
    pub gpe: f64,
    pub n_covoiced: usize,
    /// Set when no frame is voiced in both contours; `gpe` is then 0.
    pub no_covoiced: bool,
}

/// Fraction of frames voiced in both contours whose estimate deviates from the
/// reference by more than 20%. Lengths may differ by at most two frames; the
/// estimate is then resampled to the reference length by nearest frame.
pub fn gross_pitch_error(reference: &PitchContour, estimate: &PitchContour) -> Result<GpeResult> {
    let (n_ref, n_est) = (reference.len(), estimate.len());
    if n_ref.abs_diff(n_est) > 2 || n_ref == 0 || n_est == 0 {
        return Err(Error::LengthMismatch(n_ref, n_est));
    }
    let est_index = |t: usize| -> usize {
        if n_ref == n_est {
            t
        } else {
            (((t as f64 + 0.5) * n_est as f64 / n_ref as f64) as usize).min(n_est - 1)
        }
    };
    let mut covoiced = 0usize;
    let mut gross = 0usize;
    for t in 0..n_ref {
        let j = est_index(t);
        if reference.voiced[t] && estimate.voiced[j] {
            covoiced += 1;
            let r = reference.f0[t];
            if (estimate.f0[j] - r).abs() > GPE_THRESHOLD * r {
                gross += 1;
            }
        }
    }
    Ok(GpeResult {
        gpe: if covoiced > 0 { gross as f64 / covoiced as f64 } else { 0.0 },
        n_covoiced: covoiced,
        no_covoiced: covoiced == 0,
    })
}
