use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::content::{group_content, ContentSequence, EncoderModel};
use crate::dsp::{griffin_lim_invert, mel_spectrogram, MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::pitch::{estimate_f0, normalize, speaker_stats, SpeakerPitchStats, YinConfig};
use crate::speaker::{SpeakerEmbedding, SpeakerModel};
use crate::synth::{token_pitch, InferMode, SynthModel};

/// Length of the target segments averaged into the target embedding.
pub const SEGMENT_SECS: f64 = 2.0;

/// Trained models used at conversion time.
pub struct Models<'a> {
    pub encoder: &'a EncoderModel,
    pub speaker: &'a SpeakerModel,
    pub synth: &'a SynthModel,
    pub tau: f64,
    pub griffin_lim_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvertMode {
    /// Source durations, predicted pitch.
    DurationGuided,
    /// Predicted durations and pitch.
    Predictive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconstructMode {
    /// Source durations and source pitch.
    Guided,
    Predictive,
}

macro_rules! named_modes {
    ($t:ty, $($v:path => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::Config(format!("unknown mode '{s}'"))),
                }
            }
        }
    };
}

named_modes!(ConvertMode, ConvertMode::DurationGuided => "duration-guided", ConvertMode::Predictive => "predictive");
named_modes!(ReconstructMode, ReconstructMode::Guided => "guided", ReconstructMode::Predictive => "predictive");

#[derive(Debug, Clone)]
pub struct Conversion {
    pub wav: Waveform,
    pub mel: MelSpectrogram,
    pub content: ContentSequence,
    pub durations: Vec<usize>,
    pub pitch: Vec<f64>,
}

/// Unit-length mean embedding of the concatenated target audio cut into
/// non-overlapping 2 second segments.
pub fn target_embedding(speaker: &SpeakerModel, targets: &[Waveform], stft: &crate::dsp::StftConfig) -> Result<SpeakerEmbedding> {
    if targets.is_empty() {
        return Err(Error::Empty("target audio"));
    }
    let samples: Vec<f64> = targets.iter().flat_map(|w| w.samples.iter().copied()).collect();
    let seg_len = (SEGMENT_SECS * stft.sample_rate as f64).round() as usize;
    if samples.len() < seg_len {
        return Err(Error::TooShort { needed: seg_len, got: samples.len() });
    }
    let joined = Waveform::new(samples, stft.sample_rate)?;
    let mels = joined.segments(seg_len).iter().map(|w| mel_spectrogram(w, stft)).collect::<Result<Vec<_>>>()?;
    Ok(speaker.mean_embedding(&mels)?.normalized())
}

fn source_content(source: &Waveform, models: &Models) -> Result<(MelSpectrogram, ContentSequence)> {
    let mel = mel_spectrogram(source, &models.synth.cfg.stft)?;
    let content = group_content(&models.encoder.encode(&mel)?, models.tau)?;
    Ok((mel, content))
}

fn synthesize(content: ContentSequence, speaker: &SpeakerEmbedding, mode: &InferMode, models: &Models) -> Result<Conversion> {
    let out = models.synth.infer(&content, speaker, mode)?;
    let wav = griffin_lim_invert(&out.mel, &models.synth.cfg.stft, models.griffin_lim_iters)?;
    Ok(Conversion { wav, mel: out.mel, content, durations: out.durations, pitch: out.pitch })
}

/// Content of `source` rendered with the voice of `targets`.
pub fn convert(source: &Waveform, targets: &[Waveform], models: &Models, mode: ConvertMode) -> Result<Conversion> {
    let speaker = target_embedding(models.speaker, targets, &models.synth.cfg.stft)?;
    let (_, content) = source_content(source, models)?;
    let infer = match mode {
        ConvertMode::DurationGuided => InferMode::DurationGuided { durations: content.durations.clone() },
        ConvertMode::Predictive => InferMode::Predictive,
    };
    synthesize(content, &speaker, &infer, models)
}

/// Resynthesizes `source` with its own speaker embedding. Guided mode takes
/// durations and pitch from the source; pitch is standardized with `stats`, or
/// with the utterance's own statistics when none are given.
pub fn reconstruct(
    source: &Waveform,
    models: &Models,
    mode: ReconstructMode,
    stats: Option<&SpeakerPitchStats>,
    yin: &YinConfig,
) -> Result<Conversion> {
    let (mel, content) = source_content(source, models)?;
    let speaker = models.speaker.embed(&mel)?.normalized();
    let infer = match mode {
        ReconstructMode::Guided => {
            let contour = estimate_f0(source, models.synth.cfg.stft.hop_length, yin)?;
            let own;
            let stats = match stats {
                Some(s) => s,
                None => {
                    own = speaker_stats(std::slice::from_ref(&contour))?;
                    &own
                }
            };
            let (pitch, _) = token_pitch(&normalize(&contour, stats)?, &content.durations);
            InferMode::Guided { durations: content.durations.clone(), pitch }
        }
        ReconstructMode::Predictive => InferMode::Predictive,
    };
    synthesize(content, &speaker, &infer, models)
}
