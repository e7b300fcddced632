//! Experiment stages over a manifest, shared by the command-line tool and the
//! end-to-end tests.

use std::fs;
use std::path::Path;

use crate::content::{pretrain_encoder, EncoderModel, PretrainReport};
use crate::data::{converted_path, default_speakers, generate_corpus, ExperimentConfig, Manifest, PlannedConversion, Split};
use crate::dsp::{load_wav, mel_spectrogram, save_wav, MelSpectrogram, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::speaker::{train_speaker_model, SpeakerModel, SpeakerTrainConfig, SpeakerTrainReport};
use crate::trainer::{
    convert, prepare_training_data, reconstruct, ConvertMode, Models, ReconstructMode, TrainData, UtteranceInput,
};

pub struct LoadedUtterance {
    pub id: String,
    pub speaker: usize,
    pub split: Split,
    pub wav: Waveform,
    pub mel: MelSpectrogram,
}

/// Audio and mel features of every manifest record.
pub struct LoadedCorpus {
    pub speakers: Vec<String>,
    pub utterances: Vec<LoadedUtterance>,
    pub hash: String,
}

impl LoadedCorpus {
    pub fn load(manifest: &Manifest, stft: &StftConfig) -> Result<Self> {
        let speakers = manifest.speakers();
        let mut utterances = Vec::with_capacity(manifest.records.len());
        for r in &manifest.records {
            let wav = load_wav(manifest.resolve(r), stft.sample_rate)?;
            let mel = mel_spectrogram(&wav, stft)?;
            let speaker = speakers.iter().position(|s| *s == r.speaker_id).expect("speaker list covers records");
            utterances.push(LoadedUtterance { id: r.utterance_id(), speaker, split: r.split, wav, mel });
        }
        Ok(Self { speakers, utterances, hash: manifest.content_hash()? })
    }

    pub fn split(&self, split: Split) -> Vec<&LoadedUtterance> {
        self.utterances.iter().filter(|u| u.split == split).collect()
    }

    pub fn get(&self, id: &str) -> Result<&LoadedUtterance> {
        self.utterances.iter().find(|u| u.id == id).ok_or_else(|| Error::Missing(format!("utterance {id}")))
    }

    fn mels(items: &[&LoadedUtterance]) -> Vec<MelSpectrogram> {
        items.iter().map(|u| u.mel.clone()).collect()
    }
}

pub fn generate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Manifest> {
    generate_corpus(&default_speakers(cfg.speakers.n_speakers, cfg.speakers.seed), &cfg.corpus, out_dir)
}

/// Masked-reconstruction pretraining on the train split, validated on val.
pub fn pretrain_content(corpus: &LoadedCorpus, cfg: &ExperimentConfig) -> Result<(EncoderModel, PretrainReport)> {
    let train = LoadedCorpus::mels(&corpus.split(Split::Train));
    let val = LoadedCorpus::mels(&corpus.split(Split::Val));
    pretrain_encoder(&train, &val, cfg.encoder.clone(), &cfg.pretrain)
}

fn train_speaker_on(
    corpus: &LoadedCorpus,
    splits: &[Split],
    with_val: bool,
    cfg: &ExperimentConfig,
    train_cfg: &SpeakerTrainConfig,
) -> Result<(SpeakerModel, SpeakerTrainReport)> {
    let items: Vec<&LoadedUtterance> = corpus.utterances.iter().filter(|u| splits.contains(&u.split)).collect();
    let labels: Vec<usize> = items.iter().map(|u| u.speaker).collect();
    let val: Vec<(MelSpectrogram, usize)> =
        if with_val { corpus.split(Split::Val).iter().map(|u| (u.mel.clone(), u.speaker)).collect() } else { Vec::new() };
    train_speaker_model(&LoadedCorpus::mels(&items), &labels, corpus.speakers.clone(), &val, cfg.speaker.clone(), train_cfg)
}

/// Speaker model that conditions the synthesizer (train split).
pub fn train_conditioning_speaker(corpus: &LoadedCorpus, cfg: &ExperimentConfig) -> Result<(SpeakerModel, SpeakerTrainReport)> {
    train_speaker_on(corpus, &[Split::Train], true, cfg, &cfg.speaker_train)
}

/// Speaker model used only for scoring (train and val splits, own seed).
pub fn train_evaluator_speaker(corpus: &LoadedCorpus, cfg: &ExperimentConfig) -> Result<(SpeakerModel, SpeakerTrainReport)> {
    train_speaker_on(corpus, &[Split::Train, Split::Val], false, cfg, &cfg.evaluator_train)
}

/// Synthesizer training data from the train split.
pub fn prepare(corpus: &LoadedCorpus, encoder: &EncoderModel, speaker: &SpeakerModel, cfg: &ExperimentConfig) -> Result<TrainData> {
    let inputs: Vec<UtteranceInput> = corpus
        .split(Split::Train)
        .iter()
        .map(|u| UtteranceInput { id: u.id.clone(), speaker: u.speaker, wav: u.wav.clone() })
        .collect();
    prepare_training_data(&inputs, corpus.speakers.clone(), encoder, speaker, &cfg.stft, &cfg.prepare)
}

/// Runs every planned conversion and writes `<id>.wav` into `out_dir`.
pub fn convert_planned(
    corpus: &LoadedCorpus,
    plans: &[PlannedConversion],
    models: &Models,
    mode: ConvertMode,
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    for p in plans {
        let source = corpus.get(&p.source)?;
        let targets: Vec<Waveform> = p.references.iter().map(|id| corpus.get(id).map(|u| u.wav.clone())).collect::<Result<_>>()?;
        let out = convert(&source.wav, &targets, models, mode)?;
        save_wav(converted_path(out_dir, p), &out.wav)?;
    }
    Ok(())
}

/// Frame counts of one reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionFrames {
    pub id: String,
    pub output_frames: usize,
    pub duration_sum: usize,
}

/// Reconstructs every test utterance, writing `<id>.wav` when `out_dir` is set.
pub fn reconstruct_test(
    corpus: &LoadedCorpus,
    models: &Models,
    mode: ReconstructMode,
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<ReconstructionFrames>> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut rows = Vec::new();
    for u in corpus.split(Split::Test) {
        let out = reconstruct(&u.wav, models, mode, None, &cfg.prepare.yin)?;
        if let Some(dir) = out_dir {
            save_wav(dir.join(format!("{}.wav", u.id)), &out.wav)?;
        }
        rows.push(ReconstructionFrames {
            id: u.id.clone(),
            output_frames: out.mel.n_frames(),
            duration_sum: out.content.total_frames(),
        });
    }
    Ok(rows)
}
