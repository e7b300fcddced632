//! Synthesizer training with transformed content inputs: heuristic signal
//! perturbations during warm-up, then self transformations produced by a
//! frozen snapshot of the synthesizer being trained.

mod convert;
mod prepare;

pub use convert::{convert, reconstruct, target_embedding, ConvertMode, Conversion, Models, ReconstructMode, SEGMENT_SECS};
pub use prepare::{prepare_training_data, PrepareConfig, PreparedUtterance, TrainData, UtteranceInput};

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::content::{pool_content, EncoderModel};
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, Ctx, Gradients};
use crate::speaker::SpeakerEmbedding;
use crate::synth::{InferMode, SynthBatch, SynthConfig, SynthItem, SynthModel};

/// Training variants compared in the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Plain reconstruction from the original content.
    NoTransform,
    /// Heuristic perturbations for the whole run.
    Heuristic,
    /// Heuristic warm-up followed by self transformations.
    SelfVc,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::NoTransform, Variant::Heuristic, Variant::SelfVc];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoTransform => "no-transform",
            Variant::Heuristic => "heuristic",
            Variant::SelfVc => "self-vc",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

/// Input transformation applied in one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformMode {
    None,
    Heuristic,
    #[serde(rename = "self")]
    SelfTransform,
}

impl TransformMode {
    pub fn name(self) -> &'static str {
        match self {
            TransformMode::None => "none",
            TransformMode::Heuristic => "heuristic",
            TransformMode::SelfTransform => "self",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub variant: Variant,
    /// Iterations of heuristic transforms before self transformations start.
    pub warmup_iters: usize,
    pub total_iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Per-item probability of a heuristic transform in self-mode iterations.
    pub heuristic_prob: f64,
    /// Iterations between refreshes of the frozen snapshot.
    pub snapshot_every: usize,
    /// Iterations between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub clip_norm: f64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            variant: Variant::SelfVc,
            warmup_iters: 2000,
            total_iters: 10_000,
            batch_size: 16,
            seed: 0,
            heuristic_prob: 0.25,
            snapshot_every: 500,
            checkpoint_every: 0,
            clip_norm: 5.0,
            optimizer: AdamWConfig { lr: 3e-4, ..AdamWConfig::default() },
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 || self.batch_size == 0 {
            return Err(Error::Config("total_iters and batch_size must be positive".into()));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("snapshot_every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.heuristic_prob) {
            return Err(Error::Config(format!("heuristic_prob {} outside [0, 1]", self.heuristic_prob)));
        }
        if !(self.clip_norm > 0.0) || !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("clip_norm and lr must be positive".into()));
        }
        Ok(())
    }

    /// Transformation policy of iteration `iter` (0-based).
    pub fn mode(&self, iter: usize) -> TransformMode {
        match self.variant {
            Variant::NoTransform => TransformMode::None,
            Variant::Heuristic => TransformMode::Heuristic,
            Variant::SelfVc if iter < self.warmup_iters => TransformMode::Heuristic,
            Variant::SelfVc => TransformMode::SelfTransform,
        }
    }
}

/// Frozen models used to build training inputs.
pub struct TransformContext<'a> {
    pub encoder: &'a EncoderModel,
    pub snapshot: &'a SynthModel,
    pub data: &'a TrainData,
    pub heuristic_prob: f64,
}

/// Builds the synthesizer input for utterance `index`. The content path is
/// transformed according to `mode`; durations, pitch, speaker embedding and
/// mel target always come from the original utterance. Returns the item and
/// the transform actually applied.
pub fn make_training_input<R: Rng + ?Sized>(
    index: usize,
    mode: TransformMode,
    ctx: &TransformContext,
    rng: &mut R,
) -> Result<(SynthItem, TransformMode)> {
    let u = &ctx.data.utterances[index];
    let (z, applied) = match mode {
        TransformMode::None => (u.content.z.clone(), TransformMode::None),
        TransformMode::Heuristic => (pick_heuristic(u, rng)?, TransformMode::Heuristic),
        TransformMode::SelfTransform => {
            if ctx.heuristic_prob > 0.0 && rng.gen::<f64>() < ctx.heuristic_prob {
                (pick_heuristic(u, rng)?, TransformMode::Heuristic)
            } else {
                let other = ctx.data.sample_other_speaker_utterance(u.speaker, rng)?;
                let s_prime = SpeakerEmbedding { s: ctx.data.utterances[other].embedding.clone() };
                let out = ctx.snapshot.infer(&u.content, &s_prime, &InferMode::DurationGuided { durations: u.content.durations.clone() })?;
                let frames = ctx.encoder.encode(&out.mel)?;
                (pool_content(&frames, &u.content.durations)?.z, TransformMode::SelfTransform)
            }
        }
    };
    let item = SynthItem {
        z,
        durations: u.content.durations.clone(),
        pitch: u.pitch.clone(),
        pitch_mask: u.pitch_mask.clone(),
        speaker: u.embedding.clone(),
        mel: u.mel.clone(),
    };
    Ok((item, applied))
}

fn pick_heuristic<R: Rng + ?Sized>(u: &PreparedUtterance, rng: &mut R) -> Result<crate::nn::Mat> {
    if u.heuristic.is_empty() {
        return Err(Error::Missing(format!("heuristic pool for {}", u.id)));
    }
    Ok(u.heuristic[rng.gen_range(0..u.heuristic.len())].clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub total: f64,
    pub mel: f64,
    pub pitch: f64,
    pub dur: f64,
    pub transform_mode: TransformMode,
    /// Items in a self-mode batch that used a heuristic transform instead.
    pub n_fallback: usize,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r.deserialize().collect::<std::result::Result<Vec<TrainLogRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Fraction of iterations logged with `mode`.
    pub fn mode_fraction(&self, mode: TransformMode) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.transform_mode == mode).count() as f64 / self.rows.len() as f64
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.total)
    }
}

pub struct TrainOutcome {
    pub model: SynthModel,
    pub log: TrainLog,
}

/// Trains a synthesizer from scratch. The encoder is only read. Checkpoints go
/// to `out_dir` every `checkpoint_every` iterations; a non-finite loss or
/// gradient writes `diverged.ckpt` there and aborts.
pub fn train(
    data: &TrainData,
    encoder: &EncoderModel,
    arch: SynthConfig,
    schedule: &TrainSchedule,
    out_dir: Option<&Path>,
    corpus_hash: &str,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    data.validate_for(schedule)?;
    if arch.content_dim != data.content_dim() || arch.speaker_dim != data.speaker_dim() {
        return Err(Error::Dimension("synthesizer input widths do not match the prepared data".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut model = SynthModel::new(arch, rng.gen());
    let mels: Vec<&crate::nn::Mat> = data.utterances.iter().map(|u| &u.mel).collect();
    model.fit_normalization(&mels);
    let mut opt = AdamW::new(schedule.optimizer, &model.ps);
    let mut snapshot = model.clone();
    let mut order: Vec<usize> = (0..data.utterances.len()).collect();
    let mut cursor = order.len();
    let mut log = TrainLog::default();
    let dropout = model.cfg.dropout;
    for step in 0..schedule.total_iters {
        if step % schedule.snapshot_every == 0 {
            snapshot = model.clone();
        }
        let mode = schedule.mode(step);
        let ctx = TransformContext { encoder, snapshot: &snapshot, data, heuristic_prob: schedule.heuristic_prob };
        let mut items = Vec::with_capacity(schedule.batch_size);
        let mut n_fallback = 0;
        for _ in 0..schedule.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (item, applied) = make_training_input(order[cursor], mode, &ctx, &mut rng)?;
            cursor += 1;
            if mode == TransformMode::SelfTransform && applied != mode {
                n_fallback += 1;
            }
            items.push(item);
        }
        let batch = SynthBatch { items };
        let mut cx = Ctx::train(&model.ps, dropout, ChaCha8Rng::seed_from_u64(rng.gen()));
        let (loss, report) = match model.loss(&mut cx, &batch) {
            Ok(v) => v,
            Err(Error::NonFinite(what)) => {
                drop(cx);
                return Err(diverge(&model, out_dir, step, what, corpus_hash, schedule.seed));
            }
            Err(e) => return Err(e),
        };
        let mut grads = Gradients::zeros_like(&model.ps);
        cx.g.backward(loss, &mut grads);
        drop(cx);
        if !grads.is_finite() {
            return Err(diverge(&model, out_dir, step, "synthesizer gradients", corpus_hash, schedule.seed));
        }
        let grad_norm = grads.clip_norm(schedule.clip_norm);
        opt.step(&mut model.ps, &grads);
        log.rows.push(TrainLogRow {
            step,
            total: report.total,
            mel: report.mel_mse,
            pitch: report.pitch_mse,
            dur: report.dur_mse,
            transform_mode: mode,
            n_fallback,
            grad_norm,
        });
        if step % 250 == 0 {
            log::info!("{} step {step} loss {:.4} ({})", schedule.variant, report.total, mode.name());
        }
        if let Some(dir) = out_dir {
            if schedule.checkpoint_every > 0 && (step + 1) % schedule.checkpoint_every == 0 {
                model.save(&dir.join(format!("synth_step{}.ckpt", step + 1)), schedule.seed, corpus_hash)?;
            }
        }
    }
    Ok(TrainOutcome { model, log })
}

fn diverge(model: &SynthModel, out_dir: Option<&Path>, step: usize, what: &str, corpus_hash: &str, seed: u64) -> Error {
    if let Some(dir) = out_dir {
        let path = dir.join("diverged.ckpt");
        if let Err(e) = model.save(&path, seed, corpus_hash) {
            log::error!("could not write diagnostic checkpoint {}: {e}", path.display());
        }
    }
    Error::Diverged { step, what: what.to_string() }
}
