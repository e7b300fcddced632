//! Dataset plumbing: manifests, the synthetic multi-speaker corpus,
//! experiment configuration and evaluation reports.

pub mod config;
pub mod corpus;
pub mod eval;
pub mod manifest;

pub use corpus::{default_speakers, generate_corpus, read_f0_sidecar, synthesize_utterance, CorpusConfig, SyntheticSpeakerSpec};
pub use manifest::{Manifest, ManifestRecord, Split};
pub use config::{ExperimentConfig, SpeakerSetConfig, SCHEMA_VERSION};
pub use eval::{
    build_trials, character_error_rate, converted_path, evaluate, plan_conversions, transcribe, EvalConfig, EvalReport, EvalSummary,
    GpeRow, PlannedConversion, TrialConfig, TrialRow, TrialSpec,
};
