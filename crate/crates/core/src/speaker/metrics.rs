use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SpeakerEmbedding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub a: String,
    pub b: String,
    pub score: f64,
    pub same_speaker: bool,
}

/// Scored verification pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationTrials {
    pub trials: Vec<Trial>,
}

impl VerificationTrials {
    pub fn push(&mut self, a: impl Into<String>, b: impl Into<String>, ea: &SpeakerEmbedding, eb: &SpeakerEmbedding, same: bool) {
        self.trials.push(Trial { a: a.into(), b: b.into(), score: ea.cosine(eb), same_speaker: same });
    }

    pub fn from_scores(scores: &[(f64, bool)]) -> Self {
        Self {
            trials: scores
                .iter()
                .enumerate()
                .map(|(i, &(score, same))| Trial { a: format!("a{i}"), b: format!("b{i}"), score, same_speaker: same })
                .collect(),
        }
    }

    pub fn n_positive(&self) -> usize {
        self.trials.iter().filter(|t| t.same_speaker).count()
    }

    pub fn n_negative(&self) -> usize {
        self.trials.len() - self.n_positive()
    }

    pub fn is_balanced(&self) -> bool {
        self.n_positive() == self.n_negative()
    }
}

/// Equal error rate of cosine scores, accepting when `score >= threshold`.
/// The crossing of false-accept and false-reject rates is linearly
/// interpolated between the two bracketing operating points.
pub fn compute_eer(trials: &VerificationTrials) -> Result<f64> {
    let n_pos = trials.n_positive();
    let n_neg = trials.n_negative();
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Trials("EER needs at least one positive and one negative trial".into()));
    }
    if trials.trials.iter().any(|t| !t.score.is_finite()) {
        return Err(Error::NonFinite("trial score"));
    }
    let mut scores: Vec<(f64, bool)> = trials.trials.iter().map(|t| (t.score, t.same_speaker)).collect();
    scores.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Operating points for thresholds below every score, then just above each distinct score.
    let mut points = vec![(1.0, 0.0)];
    let (mut rejected_pos, mut rejected_neg) = (0usize, 0usize);
    let mut i = 0;
    while i < scores.len() {
        let s = scores[i].0;
        while i < scores.len() && scores[i].0 == s {
            if scores[i].1 {
                rejected_pos += 1;
            } else {
                rejected_neg += 1;
            }
            i += 1;
        }
        let far = (n_neg - rejected_neg) as f64 / n_neg as f64;
        let frr = rejected_pos as f64 / n_pos as f64;
        points.push((far, frr));
    }
    for w in points.windows(2) {
        let (far0, frr0) = w[0];
        let (far1, frr1) = w[1];
        let d0 = far0 - frr0;
        let d1 = far1 - frr1;
        if d0 >= 0.0 && d1 <= 0.0 {
            if d0 == d1 {
                return Ok(far0);
            }
            let a = d0 / (d0 - d1);
            return Ok(far0 + a * (far1 - far0));
        }
    }
    unreachable!("FAR - FRR goes from 1 to -1")
}

/// Mean cosine of the positive pairs.
pub fn compute_sv_sim(trials: &VerificationTrials) -> Result<f64> {
    let pos: Vec<f64> = trials.trials.iter().filter(|t| t.same_speaker).map(|t| t.score).collect();
    if pos.is_empty() {
        return Err(Error::Trials("SV-SIM needs at least one positive trial".into()));
    }
    Ok(pos.iter().sum::<f64>() / pos.len() as f64)
}

/// Writes `utterance_id, e0, e1, ...` rows.
pub fn write_embeddings_csv(path: &Path, rows: &[(String, SpeakerEmbedding)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if let Some((_, first)) = rows.first() {
        let mut header = vec!["utterance_id".to_string()];
        header.extend((0..first.s.len()).map(|i| format!("e{i}")));
        w.write_record(&header)?;
    }
    for (id, e) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(e.s.iter().map(|v| format!("{v:.8}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_scores_give_zero() {
        let t = VerificationTrials::from_scores(&[(0.9, true), (0.8, true), (0.1, false), (0.2, false)]);
        assert_eq!(compute_eer(&t).unwrap(), 0.0);
    }

    #[test]
    fn interleaved_scores_give_half() {
        let t = VerificationTrials::from_scores(&[(0.9, true), (0.1, true), (0.8, false), (0.2, false)]);
        assert!((compute_eer(&t).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reversed_scores_give_one() {
        let t = VerificationTrials::from_scores(&[(0.1, true), (0.9, false)]);
        assert!((compute_eer(&t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_label_rejected() {
        let t = VerificationTrials::from_scores(&[(0.1, true), (0.9, true)]);
        assert!(compute_eer(&t).is_err());
        let t = VerificationTrials::from_scores(&[(0.1, false)]);
        assert!(compute_sv_sim(&t).is_err());
    }

    #[test]
    fn sv_sim_of_perfect_pairs() {
        let t = VerificationTrials::from_scores(&[(1.0, true), (1.0, true), (0.3, false)]);
        assert_eq!(compute_sv_sim(&t).unwrap(), 1.0);
    }
}
