//! Speaker embeddings from a small convolutional network with statistics
//! pooling, trained with an additive angular margin softmax, plus the
//! verification metrics used for evaluation.

mod metrics;

pub use metrics::{compute_eer, compute_sv_sim, write_embeddings_csv, Trial, VerificationTrials};

use std::path::Path;

use ndarray::{Array1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{
    load_checkpoint, restore_into, save_checkpoint, AdamW, AdamWConfig, CheckpointHeader, Conv1d, Ctx, Gradients, LayerNorm,
    Linear, Mat, ParamId, ParamStore, Var,
};

pub const CHECKPOINT_KIND: &str = "speaker-encoder";
pub const MIN_FRAMES: usize = 8;
pub const EMBEDDING_DIM: usize = 192;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    pub s: Vec<f64>,
}

impl SpeakerEmbedding {
    pub fn norm(&self) -> f64 {
        self.s.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> f64 {
        crate::content::cosine(&self.s, &other.s)
    }

    /// Unit-length copy (unchanged when the norm is zero).
    pub fn normalized(&self) -> SpeakerEmbedding {
        let n = self.norm();
        if n > 0.0 {
            SpeakerEmbedding { s: self.s.iter().map(|v| v / n).collect() }
        } else {
            self.clone()
        }
    }

    pub fn as_row(&self) -> Mat {
        Mat::from_shape_vec((1, self.s.len()), self.s.clone()).expect("row")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeakerConfig {
    pub n_mels: usize,
    pub channels: usize,
    pub n_blocks: usize,
    pub kernel: usize,
    pub dim: usize,
    pub margin: f64,
    pub scale: f64,
}

impl Default for SpeakerConfig {
    fn default() -> Self {
        Self { n_mels: 80, channels: 64, n_blocks: 3, kernel: 5, dim: EMBEDDING_DIM, margin: 0.2, scale: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeakerTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Training crop length in mel frames.
    pub crop_frames: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for SpeakerTrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch_size: 16,
            crop_frames: 64,
            optimizer: AdamWConfig { lr: 2e-3, ..AdamWConfig::default() },
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeakerTrainReport {
    pub train_losses: Vec<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SpeakerExtra {
    mean: Vec<f64>,
    std: Vec<f64>,
    speakers: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SpeakerModel {
    pub cfg: SpeakerConfig,
    pub ps: ParamStore,
    pub speakers: Vec<String>,
    blocks: Vec<(Conv1d, LayerNorm)>,
    proj: Linear,
    classes: ParamId,
    norm_mean: Array1<f64>,
    norm_std: Array1<f64>,
}

impl SpeakerModel {
    pub fn new(cfg: SpeakerConfig, speakers: Vec<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let mut blocks = Vec::new();
        let mut c_in = cfg.n_mels;
        for i in 0..cfg.n_blocks {
            let conv = Conv1d::new(&mut ps, &format!("spk.block{i}.conv"), c_in, cfg.channels, cfg.kernel, 1, &mut rng);
            let ln = LayerNorm::new(&mut ps, &format!("spk.block{i}.ln"), cfg.channels);
            blocks.push((conv, ln));
            c_in = cfg.channels;
        }
        let proj = Linear::new(&mut ps, "spk.proj", 2 * cfg.channels, cfg.dim, &mut rng);
        let classes = ps.add_glorot("spk.classes", cfg.dim, speakers.len().max(1), &mut rng);
        let n = cfg.n_mels;
        Self { cfg, ps, speakers, blocks, proj, classes, norm_mean: Array1::zeros(n), norm_std: Array1::ones(n) }
    }

    pub fn fit_normalization(&mut self, mels: &[MelSpectrogram]) {
        let all: Vec<f64> = mels.iter().flat_map(|m| m.frames.iter().copied()).collect();
        if all.is_empty() {
            return;
        }
        // One global mean and scale keeps relative band levels (spectral tilt) intact.
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
        self.norm_mean = Array1::from_elem(self.cfg.n_mels, mean);
        self.norm_std = Array1::from_elem(self.cfg.n_mels, var.sqrt().max(1e-8));
    }

    fn check(&self, m: &MelSpectrogram) -> Result<()> {
        if m.n_mels() != self.cfg.n_mels {
            return Err(Error::Dimension(format!("speaker model expects {} mel bands, got {}", self.cfg.n_mels, m.n_mels())));
        }
        if m.n_frames() < MIN_FRAMES {
            return Err(Error::TooShort { needed: MIN_FRAMES, got: m.n_frames() });
        }
        Ok(())
    }

    fn embed_var(&self, cx: &mut Ctx, frames: Mat) -> Var {
        let x = (frames - &self.norm_mean) / &self.norm_std;
        let mut h = cx.constant(x);
        for (conv, ln) in &self.blocks {
            h = conv.forward(cx, h);
            h = cx.g.relu(h);
            h = ln.forward(cx, h);
        }
        let t = cx.g.shape(h).0;
        let mean = cx.g.mean_rows(h);
        let mb = cx.g.broadcast_rows(mean, t);
        let centered = cx.g.sub(h, mb);
        let sq = cx.g.mul(centered, centered);
        let var = cx.g.mean_rows(sq);
        let var = cx.g.add_scalar(var, 1e-6);
        let std = cx.g.sqrt(var);
        let stats = cx.g.concat_cols(mean, std);
        self.proj.forward(cx, stats)
    }

    pub fn embed(&self, m: &MelSpectrogram) -> Result<SpeakerEmbedding> {
        self.check(m)?;
        let mut cx = Ctx::eval(&self.ps);
        let e = self.embed_var(&mut cx, m.frames.clone());
        Ok(SpeakerEmbedding { s: cx.g.value(e).row(0).to_vec() })
    }

    /// Mean of per-segment embeddings.
    pub fn mean_embedding(&self, segments: &[MelSpectrogram]) -> Result<SpeakerEmbedding> {
        if segments.is_empty() {
            return Err(Error::Empty("embedding segments"));
        }
        let mut acc = vec![0.0; self.cfg.dim];
        for seg in segments {
            let e = self.embed(seg)?;
            acc.iter_mut().zip(&e.s).for_each(|(a, v)| *a += v);
        }
        let n = segments.len() as f64;
        Ok(SpeakerEmbedding { s: acc.into_iter().map(|v| v / n).collect() })
    }

    /// Index of the closest class center by cosine.
    pub fn classify(&self, m: &MelSpectrogram) -> Result<usize> {
        let e = self.embed(m)?;
        let w = self.ps.get(self.classes);
        let mut best = (0, f64::NEG_INFINITY);
        for (k, col) in w.axis_iter(Axis(1)).enumerate() {
            let c = crate::content::cosine(&e.s, &col.to_vec());
            if c > best.1 {
                best = (k, c);
            }
        }
        Ok(best.0)
    }

    pub fn save(&self, path: &Path, seed: u64, corpus_hash: &str) -> Result<()> {
        let mut header = CheckpointHeader::new(CHECKPOINT_KIND, serde_json::to_value(&self.cfg)?, seed, corpus_hash);
        header.extra = serde_json::to_value(SpeakerExtra {
            mean: self.norm_mean.to_vec(),
            std: self.norm_std.to_vec(),
            speakers: self.speakers.clone(),
        })?;
        save_checkpoint(path, header, &self.ps)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let (header, loaded) = load_checkpoint(path, CHECKPOINT_KIND)?;
        let cfg: SpeakerConfig = serde_json::from_value(header.arch.clone())?;
        let extra: SpeakerExtra = serde_json::from_value(header.extra.clone())?;
        let mut model = Self::new(cfg, extra.speakers, 0);
        restore_into(&mut model.ps, &loaded)?;
        model.norm_mean = Array1::from(extra.mean);
        model.norm_std = Array1::from(extra.std);
        Ok((model, header))
    }
}

fn random_crop<R: Rng>(m: &MelSpectrogram, len: usize, rng: &mut R) -> Mat {
    let t = m.n_frames();
    if t <= len {
        return m.frames.clone();
    }
    let start = rng.gen_range(0..=t - len);
    m.frames.slice(ndarray::s![start..start + len, ..]).to_owned()
}

/// Trains on labelled spectrograms (`labels[i]` indexes `speakers`).
pub fn train_speaker_model(
    train: &[MelSpectrogram],
    labels: &[usize],
    speakers: Vec<String>,
    val: &[(MelSpectrogram, usize)],
    arch: SpeakerConfig,
    cfg: &SpeakerTrainConfig,
) -> Result<(SpeakerModel, SpeakerTrainReport)> {
    if speakers.len() < 2 {
        return Err(Error::Config(format!("speaker training needs at least 2 speakers, got {}", speakers.len())));
    }
    if train.is_empty() || train.len() != labels.len() {
        return Err(Error::LengthMismatch(train.len(), labels.len()));
    }
    if labels.iter().any(|&l| l >= speakers.len()) {
        return Err(Error::OutOfRange("speaker label".into()));
    }
    if cfg.steps == 0 || cfg.batch_size == 0 || cfg.crop_frames < MIN_FRAMES {
        return Err(Error::Config("steps and batch_size must be positive and crops at least 8 frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = SpeakerModel::new(arch, speakers, rng.gen());
    model.fit_normalization(train);
    let mut opt = AdamW::new(cfg.optimizer, &model.ps);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut cx = Ctx::eval(&model.ps);
        let mut rows = Vec::with_capacity(cfg.batch_size);
        let mut batch_labels = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            let crop = random_crop(&train[i], cfg.crop_frames, &mut rng);
            rows.push(model.embed_var(&mut cx, crop));
            batch_labels.push(labels[i]);
        }
        let mut emb = rows[0];
        for &r in &rows[1..] {
            emb = cx.g.concat_cols(emb, r);
        }
        let emb = cx.g.reshape(emb, rows.len(), model.cfg.dim);
        let emb = cx.g.l2_normalize_rows(emb, 1e-9);
        let w = cx.p(model.classes);
        let wt = cx.g.transpose(w);
        let wt = cx.g.l2_normalize_rows(wt, 1e-9);
        let cos = cx.g.matmul_nt(emb, wt);
        let loss = cx.g.aam_softmax_loss(cos, &batch_labels, model.cfg.margin, model.cfg.scale);
        let value = cx.g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Diverged { step, what: "speaker AAM loss".into() });
        }
        let mut grads = Gradients::zeros_like(&model.ps);
        cx.g.backward(loss, &mut grads);
        drop(cx);
        grads.clip_norm(cfg.clip_norm);
        opt.step(&mut model.ps, &grads);
        losses.push(value);
        if step % 100 == 0 {
            log::debug!("speaker step {step} loss {value:.4}");
        }
    }
    let val_accuracy = if val.is_empty() {
        None
    } else {
        let mut correct = 0;
        for (m, label) in val {
            if model.classify(m)? == *label {
                correct += 1;
            }
        }
        Some(correct as f64 / val.len() as f64)
    };
    Ok((model, SpeakerTrainReport { train_losses: losses, val_accuracy }))
}
