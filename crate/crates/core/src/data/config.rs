//! Single TOML document configuring every stage of an experiment.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::EvalConfig;
use super::CorpusConfig;
use crate::content::{EncoderConfig, PretrainConfig};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::speaker::{SpeakerConfig, SpeakerTrainConfig};
use crate::synth::SynthConfig;
use crate::trainer::{PrepareConfig, TrainSchedule};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeakerSetConfig {
    pub n_speakers: usize,
    pub seed: u64,
}

impl Default for SpeakerSetConfig {
    fn default() -> Self {
        Self { n_speakers: 8, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub speakers: SpeakerSetConfig,
    pub corpus: CorpusConfig,
    pub stft: StftConfig,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub speaker: SpeakerConfig,
    /// Speaker model that conditions the synthesizer.
    pub speaker_train: SpeakerTrainConfig,
    /// Separate speaker model used only for scoring conversions.
    pub evaluator_train: SpeakerTrainConfig,
    pub prepare: PrepareConfig,
    pub synth: SynthConfig,
    pub train: TrainSchedule,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            speakers: SpeakerSetConfig::default(),
            corpus: CorpusConfig { seed: 7, ..CorpusConfig::default() },
            stft: StftConfig::default(),
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig { seed: 1, ..PretrainConfig::default() },
            speaker: SpeakerConfig::default(),
            speaker_train: SpeakerTrainConfig { seed: 2, ..SpeakerTrainConfig::default() },
            evaluator_train: SpeakerTrainConfig { seed: 3, ..SpeakerTrainConfig::default() },
            prepare: PrepareConfig { seed: 4, ..PrepareConfig::default() },
            synth: SynthConfig { hidden: 64, filter: 128, ..SynthConfig::default() },
            train: TrainSchedule { seed: 6, ..TrainSchedule::default() },
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if self.corpus.sample_rate != self.stft.sample_rate || self.corpus.hop != self.stft.hop_length {
            return Err(Error::Config("corpus sample rate and hop must match the STFT settings".into()));
        }
        if self.synth.stft != self.stft {
            return Err(Error::Config("synth.stft must match the top-level stft table".into()));
        }
        if self.encoder.dim != self.synth.content_dim || self.speaker.dim != self.synth.speaker_dim {
            return Err(Error::Config("synthesizer input widths must match the encoder and speaker dims".into()));
        }
        if self.speaker_train.seed == self.evaluator_train.seed {
            return Err(Error::Config("evaluator speaker model needs a seed distinct from the conditioning model".into()));
        }
        self.pretrain.validate()?;
        self.train.validate()
    }
}
