use std::path::Path;

use ndarray::{Array1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ContentFrames, DOWNSAMPLE};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{
    load_checkpoint, restore_into, save_checkpoint, sinusoidal_positions, AdamW, AdamWConfig, CheckpointHeader, Conv1d, Ctx,
    FftBlock, Gradients, Linear, Mat, ParamStore, Var,
};

pub const CHECKPOINT_KIND: &str = "content-encoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub n_mels: usize,
    pub hidden: usize,
    pub dim: usize,
    pub n_blocks: usize,
    pub filter: usize,
    pub kernel: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { n_mels: 80, hidden: 64, dim: 64, n_blocks: 2, filter: 128, kernel: 3, dropout: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Expected fraction of masked mel frames.
    pub mask_ratio: f64,
    /// Length of each masked span in mel frames.
    pub mask_span: usize,
    pub clip_norm: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 8,
            optimizer: AdamWConfig { lr: 1e-3, ..AdamWConfig::default() },
            seed: 0,
            mask_ratio: 0.3,
            mask_span: 8,
            clip_norm: 5.0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("mask_ratio must lie in (0, 1), got {}", self.mask_ratio)));
        }
        if self.steps == 0 || self.batch_size == 0 || self.mask_span == 0 {
            return Err(Error::Config("steps, batch_size and mask_span must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainReport {
    pub untrained_val_loss: f64,
    pub trained_val_loss: f64,
    pub train_losses: Vec<f64>,
}

/// Convolutional front end (two stride-2 convolutions), transformer blocks and
/// a projection to the content dimension. A reconstruction head is used only
/// for pretraining.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub cfg: EncoderConfig,
    pub ps: ParamStore,
    conv1: Conv1d,
    conv2: Conv1d,
    blocks: Vec<FftBlock>,
    proj: Linear,
    head: Linear,
    norm_mean: Array1<f64>,
    norm_std: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct Normalization {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl EncoderModel {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let conv1 = Conv1d::new(&mut ps, "enc.conv1", cfg.n_mels, cfg.hidden, 3, 2, &mut rng);
        let conv2 = Conv1d::new(&mut ps, "enc.conv2", cfg.hidden, cfg.hidden, 3, 2, &mut rng);
        let blocks =
            (0..cfg.n_blocks).map(|i| FftBlock::new(&mut ps, &format!("enc.block{i}"), cfg.hidden, cfg.hidden, cfg.filter, cfg.kernel, &mut rng)).collect();
        let proj = Linear::new(&mut ps, "enc.proj", cfg.hidden, cfg.dim, &mut rng);
        let head = Linear::new(&mut ps, "enc.head", cfg.dim, DOWNSAMPLE * cfg.n_mels, &mut rng);
        let n = cfg.n_mels;
        Self { cfg, ps, conv1, conv2, blocks, proj, head, norm_mean: Array1::zeros(n), norm_std: Array1::ones(n) }
    }

    /// Sets per-band input normalization from a set of spectrograms.
    pub fn fit_normalization(&mut self, mels: &[MelSpectrogram]) {
        let n = self.cfg.n_mels;
        let (mut sum, mut sq, mut count) = (Array1::<f64>::zeros(n), Array1::<f64>::zeros(n), 0usize);
        for m in mels {
            sum += &m.frames.sum_axis(Axis(0));
            sq += &m.frames.mapv(|v| v * v).sum_axis(Axis(0));
            count += m.n_frames();
        }
        if count == 0 {
            return;
        }
        let mean = sum / count as f64;
        let var = sq / count as f64 - mean.mapv(|m| m * m);
        self.norm_std = var.mapv(|v| v.max(1e-8).sqrt());
        self.norm_mean = mean;
    }

    fn normalize(&self, m: &MelSpectrogram) -> Result<Mat> {
        if m.n_mels() != self.cfg.n_mels {
            return Err(Error::Dimension(format!("encoder expects {} mel bands, got {}", self.cfg.n_mels, m.n_mels())));
        }
        if m.n_frames() == 0 {
            return Err(Error::Empty("mel spectrogram"));
        }
        Ok((&m.frames - &self.norm_mean) / &self.norm_std)
    }

    fn features(&self, cx: &mut Ctx, x: Mat) -> Var {
        let x = cx.constant(x);
        let h = self.conv1.forward(cx, x);
        let h = cx.g.relu(h);
        let h = self.conv2.forward(cx, h);
        let mut h = cx.g.relu(h);
        let (t, d) = cx.g.shape(h);
        let pos = cx.constant(sinusoidal_positions(t, d));
        h = cx.g.add(h, pos);
        for b in &self.blocks {
            h = b.forward(cx, h);
        }
        self.proj.forward(cx, h)
    }

    /// Content vectors, `ceil(T/4) x dim`.
    pub fn encode(&self, m: &MelSpectrogram) -> Result<ContentFrames> {
        let x = self.normalize(m)?;
        let mut cx = Ctx::eval(&self.ps);
        let z = self.features(&mut cx, x);
        Ok(ContentFrames::new(cx.g.value(z).clone()))
    }

    /// Encodes several utterances in one graph; results match [`Self::encode`] per item.
    pub fn encode_batch(&self, mels: &[MelSpectrogram]) -> Result<Vec<ContentFrames>> {
        let mut cx = Ctx::eval(&self.ps);
        let mut outs = Vec::with_capacity(mels.len());
        for m in mels {
            let x = self.normalize(m)?;
            outs.push(self.features(&mut cx, x));
        }
        Ok(outs.into_iter().map(|z| ContentFrames::new(cx.g.value(z).clone())).collect())
    }

    /// Masked-frame reconstruction loss on one utterance, added to the graph.
    fn masked_loss(&self, cx: &mut Ctx, m: &MelSpectrogram, mask: &[bool]) -> Result<Var> {
        let target = self.normalize(m)?;
        let t = target.nrows();
        let mut input = target.clone();
        for (mut row, &masked) in input.rows_mut().into_iter().zip(mask) {
            if masked {
                row.fill(0.0);
            }
        }
        let z = self.features(cx, input);
        let r = self.head.forward(cx, z);
        let tp = cx.g.shape(r).0;
        let r = cx.g.reshape(r, tp * DOWNSAMPLE, self.cfg.n_mels);
        let r = cx.g.slice_rows(r, t);
        let y = cx.constant(target);
        let diff = cx.g.sub(r, y);
        let n_masked = mask.iter().filter(|&&b| b).count().max(1);
        let weights = Mat::from_shape_fn((t, self.cfg.n_mels), |(i, _)| if mask[i] { 1.0 } else { 0.0 });
        let w = cx.constant(weights);
        let sq = cx.g.mul(diff, diff);
        let sq = cx.g.mul(sq, w);
        let s = cx.g.sum_all(sq);
        Ok(cx.g.scale(s, 1.0 / (n_masked * self.cfg.n_mels) as f64))
    }

    pub fn save(&self, path: &Path, seed: u64, corpus_hash: &str) -> Result<()> {
        let mut header = CheckpointHeader::new(CHECKPOINT_KIND, serde_json::to_value(&self.cfg)?, seed, corpus_hash);
        header.extra = serde_json::to_value(Normalization { mean: self.norm_mean.to_vec(), std: self.norm_std.to_vec() })?;
        save_checkpoint(path, header, &self.ps)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let (header, loaded) = load_checkpoint(path, CHECKPOINT_KIND)?;
        let cfg: EncoderConfig = serde_json::from_value(header.arch.clone())?;
        let norm: Normalization = serde_json::from_value(header.extra.clone())?;
        let mut model = Self::new(cfg, 0);
        restore_into(&mut model.ps, &loaded)?;
        model.norm_mean = Array1::from(norm.mean);
        model.norm_std = Array1::from(norm.std);
        Ok((model, header))
    }
}

/// Random spans covering roughly `ratio` of the frames; at least one frame.
fn sample_mask<R: Rng>(t: usize, ratio: f64, span: usize, rng: &mut R) -> Vec<bool> {
    let mut mask = vec![false; t];
    let p_start = ratio / span as f64;
    for i in 0..t {
        if rng.gen::<f64>() < p_start {
            mask[i..(i + span).min(t)].iter_mut().for_each(|m| *m = true);
        }
    }
    if !mask.iter().any(|&m| m) {
        let i = rng.gen_range(0..t);
        mask[i..(i + span).min(t)].iter_mut().for_each(|m| *m = true);
    }
    mask
}

fn eval_loss(model: &EncoderModel, val: &[MelSpectrogram], masks: &[Vec<bool>]) -> Result<f64> {
    let mut total = 0.0;
    for (m, mask) in val.iter().zip(masks) {
        let mut cx = Ctx::eval(&model.ps);
        let l = model.masked_loss(&mut cx, m, mask)?;
        total += cx.g.scalar(l);
    }
    Ok(total / val.len() as f64)
}

/// Trains the encoder to reconstruct masked mel spans. Validation masks are
/// fixed by the seed so untrained and trained losses are comparable.
pub fn pretrain_encoder(
    train: &[MelSpectrogram],
    val: &[MelSpectrogram],
    arch: EncoderConfig,
    cfg: &PretrainConfig,
) -> Result<(EncoderModel, PretrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("encoder training corpus"));
    }
    if val.is_empty() {
        return Err(Error::Empty("encoder validation corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = EncoderModel::new(arch, rng.gen());
    model.fit_normalization(train);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_0a11);
    let val_masks: Vec<Vec<bool>> = val.iter().map(|m| sample_mask(m.n_frames(), cfg.mask_ratio, cfg.mask_span, &mut mask_rng)).collect();
    let untrained_val_loss = eval_loss(&model, val, &val_masks)?;

    let mut opt = AdamW::new(cfg.optimizer, &model.ps);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut train_losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let masks: Vec<Vec<bool>> = batch.iter().map(|&i| sample_mask(train[i].n_frames(), cfg.mask_ratio, cfg.mask_span, &mut rng)).collect();
        let drop_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        let mut cx = Ctx::train(&model.ps, model.cfg.dropout, drop_rng);
        let mut losses = Vec::with_capacity(batch.len());
        for (&i, mask) in batch.iter().zip(&masks) {
            losses.push(model.masked_loss(&mut cx, &train[i], mask)?);
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = cx.g.add(total, l);
        }
        let total = cx.g.scale(total, 1.0 / batch.len() as f64);
        let value = cx.g.scalar(total);
        if !value.is_finite() {
            return Err(Error::Diverged { step, what: "encoder reconstruction loss".into() });
        }
        let mut grads = Gradients::zeros_like(&model.ps);
        cx.g.backward(total, &mut grads);
        drop(cx);
        grads.clip_norm(cfg.clip_norm);
        opt.step(&mut model.ps, &grads);
        train_losses.push(value);
        if step % 100 == 0 {
            log::debug!("encoder step {step} loss {value:.5}");
        }
    }
    let trained_val_loss = eval_loss(&model, val, &val_masks)?;
    Ok((model, PretrainReport { untrained_val_loss, trained_val_loss, train_losses }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_covers_roughly_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = sample_mask(10_000, 0.3, 8, &mut rng);
        let frac = m.iter().filter(|&&b| b).count() as f64 / 1e4;
        assert!(frac > 0.2 && frac < 0.35, "{frac}");
        assert!(sample_mask(3, 1e-9, 8, &mut rng).iter().any(|&b| b));
    }

    #[test]
    fn zero_mask_ratio_rejected() {
        let cfg = PretrainConfig { mask_ratio: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
