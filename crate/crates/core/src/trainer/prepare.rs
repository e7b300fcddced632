use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TrainSchedule, Variant};
use crate::content::{group_content, pool_content, ContentSequence, EncoderModel, DEFAULT_TAU};
use crate::dsp::{mel_spectrogram, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::perturb::{random_heuristic, PerturbConfig};
use crate::pitch::{estimate_f0, normalize, speaker_stats, PitchContour, SpeakerPitchStats, YinConfig};
use crate::speaker::SpeakerModel;
use crate::synth::token_pitch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepareConfig {
    pub tau: f64,
    /// Heuristic perturbations drawn per utterance ahead of training.
    pub pool_size: usize,
    pub perturb: PerturbConfig,
    pub yin: YinConfig,
    pub seed: u64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU, pool_size: 6, perturb: PerturbConfig::default(), yin: YinConfig::default(), seed: 0 }
    }
}

/// One training utterance as read from disk.
pub struct UtteranceInput {
    pub id: String,
    pub speaker: usize,
    pub wav: Waveform,
}

/// Features of one original utterance, computed once with the frozen encoders.
#[derive(Debug, Clone)]
pub struct PreparedUtterance {
    pub id: String,
    pub speaker: usize,
    /// Log-mel frames of the original audio.
    pub mel: Mat,
    /// Grouped content of the original audio.
    pub content: ContentSequence,
    /// Unit-length speaker embedding of the original audio.
    pub embedding: Vec<f64>,
    pub pitch: Vec<f64>,
    pub pitch_mask: Vec<bool>,
    /// Content of heuristically perturbed copies, averaged over the original token spans.
    pub heuristic: Vec<Mat>,
}

#[derive(Debug, Clone)]
pub struct TrainData {
    pub utterances: Vec<PreparedUtterance>,
    pub speakers: Vec<String>,
    pub pitch_stats: Vec<SpeakerPitchStats>,
    by_speaker: Vec<Vec<usize>>,
}

impl TrainData {
    pub fn new(utterances: Vec<PreparedUtterance>, speakers: Vec<String>, pitch_stats: Vec<SpeakerPitchStats>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::Empty("training utterances"));
        }
        let mut by_speaker = vec![Vec::new(); speakers.len()];
        for (i, u) in utterances.iter().enumerate() {
            by_speaker.get_mut(u.speaker).ok_or_else(|| Error::OutOfRange(format!("speaker index {}", u.speaker)))?.push(i);
        }
        Ok(Self { utterances, speakers, pitch_stats, by_speaker })
    }

    pub fn content_dim(&self) -> usize {
        self.utterances[0].content.z.ncols()
    }

    pub fn speaker_dim(&self) -> usize {
        self.utterances[0].embedding.len()
    }

    pub fn utterances_of(&self, speaker: usize) -> &[usize] {
        &self.by_speaker[speaker]
    }

    /// Speakers with at least one utterance.
    pub fn n_active_speakers(&self) -> usize {
        self.by_speaker.iter().filter(|v| !v.is_empty()).count()
    }

    /// Uniform over speakers other than `speaker`, then uniform over that speaker's utterances.
    pub fn sample_other_speaker_utterance<R: Rng + ?Sized>(&self, speaker: usize, rng: &mut R) -> Result<usize> {
        let others: Vec<usize> = (0..self.by_speaker.len()).filter(|&s| s != speaker && !self.by_speaker[s].is_empty()).collect();
        if others.is_empty() {
            return Err(Error::Config("self transformation needs utterances from at least 2 speakers".into()));
        }
        let s = others[rng.gen_range(0..others.len())];
        let pool = &self.by_speaker[s];
        Ok(pool[rng.gen_range(0..pool.len())])
    }

    pub(super) fn validate_for(&self, schedule: &TrainSchedule) -> Result<()> {
        let needs_pool = match schedule.variant {
            Variant::NoTransform => false,
            Variant::Heuristic => true,
            Variant::SelfVc => schedule.warmup_iters > 0 || schedule.heuristic_prob > 0.0,
        };
        if needs_pool {
            if let Some(u) = self.utterances.iter().find(|u| u.heuristic.is_empty()) {
                return Err(Error::Missing(format!("heuristic pool for {}", u.id)));
            }
        }
        if schedule.variant == Variant::SelfVc && schedule.total_iters > schedule.warmup_iters && self.n_active_speakers() < 2 {
            return Err(Error::Config("self transformation needs utterances from at least 2 speakers".into()));
        }
        Ok(())
    }
}

/// Extracts mel, grouped content, speaker embedding and token pitch for each
/// utterance, and a pool of heuristically perturbed content. Pitch is
/// standardized with per-speaker statistics over the given utterances.
pub fn prepare_training_data(
    inputs: &[UtteranceInput],
    speakers: Vec<String>,
    encoder: &EncoderModel,
    speaker_model: &SpeakerModel,
    stft: &StftConfig,
    cfg: &PrepareConfig,
) -> Result<TrainData> {
    if inputs.is_empty() {
        return Err(Error::Empty("training utterances"));
    }
    let contours: Vec<PitchContour> = inputs.iter().map(|u| estimate_f0(&u.wav, stft.hop_length, &cfg.yin)).collect::<Result<_>>()?;
    let mut pitch_stats = Vec::with_capacity(speakers.len());
    for s in 0..speakers.len() {
        let own: Vec<PitchContour> = inputs.iter().zip(&contours).filter(|(u, _)| u.speaker == s).map(|(_, c)| c.clone()).collect();
        pitch_stats.push(speaker_stats(&own)?);
    }
    let mut utterances = Vec::with_capacity(inputs.len());
    for (i, (input, contour)) in inputs.iter().zip(&contours).enumerate() {
        let mel = mel_spectrogram(&input.wav, stft)?;
        let frames = encoder.encode(&mel)?;
        let content = group_content(&frames, cfg.tau)?;
        let embedding = speaker_model.embed(&mel)?.normalized().s;
        let norm = normalize(contour, &pitch_stats[input.speaker])?;
        let (pitch, pitch_mask) = token_pitch(&norm, &content.durations);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        let mut heuristic = Vec::with_capacity(cfg.pool_size);
        for _ in 0..cfg.pool_size {
            let (w, _) = random_heuristic(&input.wav, &cfg.perturb, &mut rng)?;
            let pf = encoder.encode(&mel_spectrogram(&w, stft)?)?;
            heuristic.push(pool_content(&pf, &content.durations)?.z);
        }
        utterances.push(PreparedUtterance {
            id: input.id.clone(),
            speaker: input.speaker,
            mel: mel.frames,
            content,
            embedding,
            pitch,
            pitch_mask,
            heuristic,
        });
    }
    TrainData::new(utterances, speakers, pitch_stats)
}
