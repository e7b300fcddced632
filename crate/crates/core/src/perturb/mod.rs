//! Heuristic information-perturbation transforms: random frequency shaping
//! (peq), formant shifting (fs) and pitch randomization (pr), and their
//! compositions used to scramble speaker identity in the content path.

mod biquad;
mod envelope;
mod formant;
mod peq;
mod pitch_shift;

pub use biquad::{BiquadSection, FilterKind};
pub use envelope::CepstralLifter;
pub use formant::{formant_shift, FORMANT_RATIO_MAX, FORMANT_RATIO_MIN};
pub use peq::{apply_peq, peq_frequencies, q_from_unit, sample_peq, PeqChain};
pub use pitch_shift::{pitch_randomize, shift_pitch_by_frames, PitchRandomizeReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::Result;

/// Sampling ranges for the heuristic transforms. Ratios are drawn from
/// `U(1, max)` and inverted with probability `invert_prob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    pub formant_ratio_max: f64,
    pub pitch_shift_max: f64,
    pub pitch_range_max: f64,
    pub invert_prob: f64,
    /// Which composition the label `g1` refers to; `g2` takes the other one.
    pub g1: Composition,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            formant_ratio_max: 1.4,
            pitch_shift_max: 2.0,
            pitch_range_max: 1.5,
            invert_prob: 0.5,
            g1: Composition::PeqFormant,
        }
    }
}

/// The two heuristic compositions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    /// `fs . peq`; keeps f0.
    PeqFormant,
    /// `fs . pr . peq`; moves f0.
    PeqPitchFormant,
}

/// Everything needed to replay one perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbParams {
    pub composition: Composition,
    pub pitch_shift_ratio: f64,
    pub pitch_range_ratio: f64,
    pub formant_shift_ratio: f64,
    pub peq: PeqChain,
    pub rng_seed: u64,
    /// Filled after application: pitch randomization found nothing voiced.
    #[serde(default)]
    pub pitch_degenerate: bool,
}

impl PerturbParams {
    pub fn identity(composition: Composition, sample_rate: f64) -> Self {
        Self {
            composition,
            pitch_shift_ratio: 1.0,
            pitch_range_ratio: 1.0,
            formant_shift_ratio: 1.0,
            peq: PeqChain::flat(sample_rate),
            rng_seed: 0,
            pitch_degenerate: false,
        }
    }
}

fn bidirectional<R: Rng + ?Sized>(rng: &mut R, max: f64, invert_prob: f64) -> f64 {
    let r = if max > 1.0 { rng.gen_range(1.0..max) } else { 1.0 };
    if rng.gen::<f64>() < invert_prob {
        1.0 / r
    } else {
        r
    }
}

pub fn sample_params<R: Rng + ?Sized>(
    composition: Composition,
    cfg: &PerturbConfig,
    sample_rate: f64,
    rng: &mut R,
) -> PerturbParams {
    let rng_seed = rng.gen();
    let peq = sample_peq(rng, sample_rate);
    let formant_shift_ratio = bidirectional(rng, cfg.formant_ratio_max, cfg.invert_prob);
    let (pitch_shift_ratio, pitch_range_ratio) = match composition {
        Composition::PeqFormant => (1.0, 1.0),
        Composition::PeqPitchFormant => (
            bidirectional(rng, cfg.pitch_shift_max, cfg.invert_prob),
            bidirectional(rng, cfg.pitch_range_max, cfg.invert_prob),
        ),
    };
    PerturbParams {
        composition,
        pitch_shift_ratio,
        pitch_range_ratio,
        formant_shift_ratio,
        peq,
        rng_seed,
        pitch_degenerate: false,
    }
}

/// Applies a composition with fixed parameters.
pub fn apply_params(w: &Waveform, params: &PerturbParams) -> Result<(Waveform, PerturbParams)> {
    let mut params = params.clone();
    let mut x = apply_peq(w, &params.peq)?;
    if params.composition == Composition::PeqPitchFormant {
        let (y, report) = pitch_randomize(&x, params.pitch_shift_ratio, params.pitch_range_ratio)?;
        params.pitch_degenerate = report.degenerate;
        x = y;
    }
    let out = formant_shift(&x, params.formant_shift_ratio)?;
    Ok((out, params))
}

/// `g1`: the composition configured as `cfg.g1` (by default peq then fs).
pub fn g1<R: Rng + ?Sized>(w: &Waveform, cfg: &PerturbConfig, rng: &mut R) -> Result<(Waveform, PerturbParams)> {
    let p = sample_params(cfg.g1, cfg, w.sample_rate as f64, rng);
    apply_params(w, &p)
}

/// `g2`: the other composition (by default peq, pr, then fs).
pub fn g2<R: Rng + ?Sized>(w: &Waveform, cfg: &PerturbConfig, rng: &mut R) -> Result<(Waveform, PerturbParams)> {
    let other = match cfg.g1 {
        Composition::PeqFormant => Composition::PeqPitchFormant,
        Composition::PeqPitchFormant => Composition::PeqFormant,
    };
    let p = sample_params(other, cfg, w.sample_rate as f64, rng);
    apply_params(w, &p)
}

/// Picks `g1` or `g2` with equal probability.
pub fn random_heuristic<R: Rng + ?Sized>(
    w: &Waveform,
    cfg: &PerturbConfig,
    rng: &mut R,
) -> Result<(Waveform, PerturbParams)> {
    if rng.gen::<bool>() {
        g1(w, cfg, rng)
    } else {
        g2(w, cfg, rng)
    }
}
