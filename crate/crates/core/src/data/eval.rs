//! Conversion trial planning and evaluation reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Manifest, ManifestRecord, Split};
use crate::dsp::{load_wav, mel_spectrogram, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::pitch::{estimate_f0, gross_pitch_error, YinConfig};
use crate::speaker::{compute_eer, compute_sv_sim, SpeakerModel, VerificationTrials};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub n_targets: usize,
    /// Source utterances converted to each target speaker.
    pub n_sources: usize,
    /// Training utterances of the target speaker used as conversion reference.
    pub n_references: usize,
    pub seed: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self { n_targets: 8, n_sources: 20, n_references: 4, seed: 0 }
    }
}

/// One conversion of a held-out source utterance to a target speaker, with the
/// real utterances it is scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedConversion {
    pub id: String,
    pub source: String,
    pub source_speaker: String,
    pub target_speaker: String,
    pub references: Vec<String>,
    /// Held-out utterance of the target speaker.
    pub positive: String,
    /// Held-out utterance of a speaker other than the target.
    pub negative: String,
}

fn by_id(manifest: &Manifest) -> BTreeMap<String, &ManifestRecord> {
    manifest.records.iter().map(|r| (r.utterance_id(), r)).collect()
}

/// Picks `n_targets` target speakers and, for each, `n_sources` test
/// utterances of other speakers. Each conversion is paired with one same-speaker
/// and one different-speaker test utterance, so trials are balanced.
pub fn plan_conversions(manifest: &Manifest, cfg: &TrialConfig) -> Result<Vec<PlannedConversion>> {
    let speakers = manifest.speakers();
    if cfg.n_targets == 0 || cfg.n_sources == 0 || cfg.n_references == 0 {
        return Err(Error::Config("n_targets, n_sources and n_references must be positive".into()));
    }
    if cfg.n_targets > speakers.len() {
        return Err(Error::Config(format!("{} target speakers requested, corpus has {}", cfg.n_targets, speakers.len())));
    }
    let test = manifest.split(Split::Test);
    let train = manifest.split(Split::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut targets = speakers.clone();
    targets.shuffle(&mut rng);
    targets.truncate(cfg.n_targets);
    targets.sort();
    let mut plans = Vec::with_capacity(cfg.n_targets * cfg.n_sources);
    for target in &targets {
        let own_test: Vec<&ManifestRecord> = test.iter().copied().filter(|r| &r.speaker_id == target).collect();
        let other_test: Vec<&ManifestRecord> = test.iter().copied().filter(|r| &r.speaker_id != target).collect();
        let mut refs: Vec<&ManifestRecord> = train.iter().copied().filter(|r| &r.speaker_id == target).collect();
        if own_test.is_empty() || other_test.len() < cfg.n_sources || refs.len() < cfg.n_references {
            return Err(Error::Missing(format!("held-out or reference utterances for speaker {target}")));
        }
        refs.shuffle(&mut rng);
        let references: Vec<String> = refs[..cfg.n_references].iter().map(|r| r.utterance_id()).collect();
        let sources: Vec<&&ManifestRecord> = other_test.choose_multiple(&mut rng, cfg.n_sources).collect();
        for src in sources {
            let positive = own_test[rng.gen_range(0..own_test.len())].utterance_id();
            let negative = other_test[rng.gen_range(0..other_test.len())].utterance_id();
            let source = src.utterance_id();
            plans.push(PlannedConversion {
                id: format!("{source}__to__{target}"),
                source,
                source_speaker: src.speaker_id.clone(),
                target_speaker: target.clone(),
                references: references.clone(),
                positive,
                negative,
            });
        }
    }
    Ok(plans)
}

pub fn converted_path(dir: &Path, plan: &PlannedConversion) -> PathBuf {
    dir.join(format!("{}.wav", plan.id))
}

/// Unscored verification pair: a converted file against a real utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub conversion: String,
    pub source: String,
    pub reference: String,
    pub target_speaker: String,
    pub reference_speaker: String,
    pub same_speaker: bool,
}

/// Plans conversions and checks that every converted file exists.
pub fn build_trials(manifest: &Manifest, converted_dir: &Path, cfg: &TrialConfig) -> Result<Vec<TrialSpec>> {
    let plans = plan_conversions(manifest, cfg)?;
    let ids = by_id(manifest);
    let mut trials = Vec::with_capacity(2 * plans.len());
    for p in &plans {
        let path = converted_path(converted_dir, p);
        if !path.exists() {
            return Err(Error::Missing(format!("converted file {}", path.display())));
        }
        for (reference, same) in [(&p.positive, true), (&p.negative, false)] {
            trials.push(TrialSpec {
                conversion: p.id.clone(),
                source: p.source.clone(),
                reference: reference.clone(),
                target_speaker: p.target_speaker.clone(),
                reference_speaker: ids[reference].speaker_id.clone(),
                same_speaker: same,
            });
        }
    }
    Ok(trials)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub trials: TrialConfig,
    pub griffin_lim_iters: usize,
    /// Shell command run per file with `{wav}` replaced by its path; stdout is
    /// the transcript.
    pub transcriber: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { trials: TrialConfig::default(), griffin_lim_iters: 32, transcriber: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub conversion: String,
    pub reference: String,
    pub target_speaker: String,
    pub reference_speaker: String,
    pub same_speaker: bool,
    pub score: f64,
    pub transcript: Option<String>,
    /// Character error rate of the conversion transcript against the source transcript.
    pub cer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpeRow {
    pub utterance: String,
    pub gpe: f64,
    pub n_covoiced: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub sv_eer: f64,
    pub sv_sim: f64,
    pub gpe: Option<f64>,
    pub cer: Option<f64>,
    pub n_trials: usize,
    pub n_positive: usize,
    pub n_negative: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub trials: Vec<TrialRow>,
    pub gpe: Vec<GpeRow>,
    pub summary: EvalSummary,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn from_rows(trials: Vec<TrialRow>, gpe: Vec<GpeRow>) -> Result<Self> {
        let summary = Self::summarize(&trials, &gpe)?;
        Ok(Self { trials, gpe, summary })
    }

    fn summarize(trials: &[TrialRow], gpe: &[GpeRow]) -> Result<EvalSummary> {
        let scored = VerificationTrials::from_scores(&trials.iter().map(|t| (t.score, t.same_speaker)).collect::<Vec<_>>());
        Ok(EvalSummary {
            sv_eer: compute_eer(&scored)?,
            sv_sim: compute_sv_sim(&scored)?,
            gpe: mean(gpe.iter().map(|g| g.gpe)),
            cer: mean(trials.iter().filter_map(|t| t.cer)),
            n_trials: trials.len(),
            n_positive: scored.n_positive(),
            n_negative: scored.n_negative(),
        })
    }

    /// Aggregates recomputed from the rows.
    pub fn recompute(&self) -> Result<EvalSummary> {
        Self::summarize(&self.trials, &self.gpe)
    }

    /// Writes `trials.csv`, `gpe.csv` and `summary.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("trials.csv"))?;
        for row in &self.trials {
            w.serialize(row)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("gpe.csv"))?;
        for row in &self.gpe {
            w.serialize(row)?;
        }
        w.flush()?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<PathBuf> {
            let p = dir.join(name);
            if p.exists() {
                Ok(p)
            } else {
                Err(Error::MissingFile(p))
            }
        };
        let trials = csv::Reader::from_path(read("trials.csv")?)?.deserialize().collect::<std::result::Result<Vec<TrialRow>, _>>()?;
        let gpe = csv::Reader::from_path(read("gpe.csv")?)?.deserialize().collect::<std::result::Result<Vec<GpeRow>, _>>()?;
        let summary = serde_json::from_str(&fs::read_to_string(read("summary.json")?)?)?;
        Ok(Self { trials, gpe, summary })
    }
}

/// Runs the transcriber command template on one file.
pub fn transcribe(template: &str, wav: &Path) -> Result<String> {
    let cmd = template.replace("{wav}", &wav.to_string_lossy());
    let out = Command::new("sh").arg("-c").arg(&cmd).output()?;
    if !out.status.success() {
        return Err(Error::Missing(format!("transcriber failed on {}: {}", wav.display(), String::from_utf8_lossy(&out.stderr).trim())));
    }
    Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
}

/// Character edit distance over the reference length.
pub fn character_error_rate(reference: &str, hypothesis: &str) -> f64 {
    let n = reference.chars().count();
    let d = strsim::levenshtein(reference, hypothesis);
    if n == 0 {
        return if d == 0 { 0.0 } else { 1.0 };
    }
    d as f64 / n as f64
}

/// Scores trials with the evaluator speaker model. When `reconstruction_dir`
/// is given, every `<utterance>.wav` found there is compared with the
/// original test utterance by gross pitch error.
pub fn evaluate(
    manifest: &Manifest,
    trials: &[TrialSpec],
    converted_dir: &Path,
    reconstruction_dir: Option<&Path>,
    evaluator: &SpeakerModel,
    stft: &StftConfig,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if trials.is_empty() {
        return Err(Error::Empty("trials"));
    }
    let ids = by_id(manifest);
    let load_id = |id: &str| -> Result<Waveform> {
        let r = ids.get(id).ok_or_else(|| Error::Missing(format!("utterance {id} in manifest")))?;
        load_wav(manifest.resolve(r), stft.sample_rate)
    };
    let mut cache: BTreeMap<String, crate::speaker::SpeakerEmbedding> = BTreeMap::new();
    let mut transcripts: BTreeMap<String, String> = BTreeMap::new();
    let mut rows = Vec::with_capacity(trials.len());
    for t in trials {
        let conv_path = converted_dir.join(format!("{}.wav", t.conversion));
        if !cache.contains_key(&t.conversion) {
            let w = load_wav(&conv_path, stft.sample_rate)?;
            cache.insert(t.conversion.clone(), evaluator.embed(&mel_spectrogram(&w, stft)?)?);
        }
        if !cache.contains_key(&t.reference) {
            let w = load_id(&t.reference)?;
            cache.insert(t.reference.clone(), evaluator.embed(&mel_spectrogram(&w, stft)?)?);
        }
        let score = cache[&t.conversion].cosine(&cache[&t.reference]);
        let (transcript, cer) = match &cfg.transcriber {
            Some(template) => {
                if !transcripts.contains_key(&t.source) {
                    let r = ids.get(t.source.as_str()).ok_or_else(|| Error::Missing(format!("utterance {}", t.source)))?;
                    transcripts.insert(t.source.clone(), transcribe(template, &manifest.resolve(r))?);
                }
                if !transcripts.contains_key(&t.conversion) {
                    transcripts.insert(t.conversion.clone(), transcribe(template, &conv_path)?);
                }
                let hyp = transcripts[&t.conversion].clone();
                let cer = character_error_rate(&transcripts[&t.source], &hyp);
                (Some(hyp), Some(cer))
            }
            None => (None, None),
        };
        rows.push(TrialRow {
            conversion: t.conversion.clone(),
            reference: t.reference.clone(),
            target_speaker: t.target_speaker.clone(),
            reference_speaker: t.reference_speaker.clone(),
            same_speaker: t.same_speaker,
            score,
            transcript,
            cer,
        });
    }
    let mut gpe_rows = Vec::new();
    if let Some(dir) = reconstruction_dir {
        let yin = YinConfig::default();
        for r in manifest.split(Split::Test) {
            let id = r.utterance_id();
            let path = dir.join(format!("{id}.wav"));
            if !path.exists() {
                continue;
            }
            let orig = load_wav(manifest.resolve(r), stft.sample_rate)?;
            let mut rec = load_wav(&path, stft.sample_rate)?;
            rec.samples.resize(orig.len(), 0.0);
            let reference = estimate_f0(&orig, stft.hop_length, &yin)?;
            let estimate = estimate_f0(&rec, stft.hop_length, &yin)?;
            let g = gross_pitch_error(&reference, &estimate)?;
            gpe_rows.push(GpeRow { utterance: id, gpe: g.gpe, n_covoiced: g.n_covoiced });
        }
    }
    EvalReport::from_rows(rows, gpe_rows)
}
