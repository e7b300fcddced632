//! Mel-spectrogram synthesizer: an encoder transformer over grouped content
//! and speaker embedding, token-level pitch and duration predictors, a pitch
//! embedding, duration regulation and a decoder transformer.

mod regulate;

pub use regulate::{duration_regulate, regulate_index, token_pitch};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::content::{ContentSequence, DELTA};
use crate::dsp::{MelSpectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::nn::{
    check_gradients, load_checkpoint, restore_into, save_checkpoint, sinusoidal_positions, CheckpointHeader, Conv1d,
    ConvPredictor, Ctx, FftBlock, GradCheckReport, Linear, Mat, ParamId, ParamStore, Var,
};
use crate::speaker::SpeakerEmbedding;

pub const CHECKPOINT_KIND: &str = "synthesizer";
pub const LAMBDA_PITCH: f64 = 0.1;
pub const LAMBDA_DUR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub content_dim: usize,
    pub speaker_dim: usize,
    pub hidden: usize,
    pub n_layers: usize,
    /// Width of the convolutional feed-forward block in each transformer layer.
    pub filter: usize,
    pub kernel: usize,
    pub predictor_filter: usize,
    pub dropout: f64,
    pub delta: usize,
    pub stft: StftConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            content_dim: 64,
            speaker_dim: crate::speaker::EMBEDDING_DIM,
            hidden: 128,
            n_layers: 2,
            filter: 256,
            kernel: 3,
            predictor_filter: 64,
            dropout: 0.1,
            delta: DELTA,
            stft: StftConfig::default(),
        }
    }
}

/// One training utterance. `z`, `durations`, `pitch` and `pitch_mask` are per
/// grouped token; `mel` is the raw log-mel target.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthItem {
    pub z: Mat,
    pub durations: Vec<usize>,
    pub pitch: Vec<f64>,
    pub pitch_mask: Vec<bool>,
    pub speaker: Vec<f64>,
    pub mel: Mat,
}

impl SynthItem {
    pub fn n_tokens(&self) -> usize {
        self.durations.len()
    }

    pub fn total_frames(&self) -> usize {
        self.durations.iter().sum()
    }

    pub fn validate(&self, cfg: &SynthConfig) -> Result<()> {
        let n = self.n_tokens();
        if n == 0 {
            return Err(Error::Empty("synthesizer item tokens"));
        }
        if self.z.nrows() != n || self.pitch.len() != n || self.pitch_mask.len() != n {
            return Err(Error::Dimension(format!(
                "token counts disagree: z {}, durations {n}, pitch {}, mask {}",
                self.z.nrows(),
                self.pitch.len(),
                self.pitch_mask.len()
            )));
        }
        if self.z.ncols() != cfg.content_dim || self.speaker.len() != cfg.speaker_dim || self.mel.ncols() != cfg.stft.n_mels {
            return Err(Error::Dimension("content, speaker or mel width does not match the model".into()));
        }
        if self.durations.iter().any(|&d| d == 0 || d % cfg.delta != 0) {
            return Err(Error::OutOfRange(format!("durations must be positive multiples of {}", cfg.delta)));
        }
        let total = self.total_frames();
        if self.mel.nrows() > total || total - self.mel.nrows() >= cfg.delta {
            return Err(Error::LengthMismatch(self.mel.nrows(), total));
        }
        if self.z.iter().chain(&self.pitch).chain(&self.speaker).chain(self.mel.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("synthesizer item"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthBatch {
    pub items: Vec<SynthItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthLossReport {
    pub total: f64,
    pub mel_mse: f64,
    pub pitch_mse: f64,
    pub dur_mse: f64,
    pub lambda_pitch: f64,
    pub lambda_dur: f64,
}

impl SynthLossReport {
    pub fn new(mel_mse: f64, pitch_mse: f64, dur_mse: f64) -> Self {
        Self {
            total: mel_mse + LAMBDA_PITCH * pitch_mse + LAMBDA_DUR * dur_mse,
            mel_mse,
            pitch_mse,
            dur_mse,
            lambda_pitch: LAMBDA_PITCH,
            lambda_dur: LAMBDA_DUR,
        }
    }

    /// The weighted sum recomputed from the components.
    pub fn weighted_sum(&self) -> f64 {
        self.mel_mse + self.lambda_pitch * self.pitch_mse + self.lambda_dur * self.dur_mse
    }
}

/// Graph handles for one item's predictions.
#[derive(Debug, Clone, Copy)]
pub struct ItemOutputs {
    /// Normalized mel, `sum(d') x n_mels`.
    pub mel: Var,
    pub pitch: Var,
    pub log_dur: Var,
}

/// Prosody source for inference.
#[derive(Debug, Clone, PartialEq)]
pub enum InferMode {
    /// Given durations (mel frames per token) and normalized token pitch.
    Guided { durations: Vec<usize>, pitch: Vec<f64> },
    /// Given durations, predicted pitch.
    DurationGuided { durations: Vec<usize> },
    Predictive,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub mel: MelSpectrogram,
    pub durations: Vec<usize>,
    pub pitch: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MelNorm {
    mean: f64,
    std: f64,
}

#[derive(Debug, Clone)]
pub struct SynthModel {
    pub cfg: SynthConfig,
    pub ps: ParamStore,
    in_content: Linear,
    in_speaker: Linear,
    encoder: Vec<FftBlock>,
    dur: ConvPredictor,
    pitch: ConvPredictor,
    pitch_emb: Conv1d,
    decoder: Vec<FftBlock>,
    out: Linear,
    mel_mean: f64,
    mel_std: f64,
}

/// Parameter-name prefixes of the submodules.
pub const SUBMODULES: [&str; 7] =
    ["synth.in", "synth.encoder", "synth.duration", "synth.pitch.", "synth.pitch_emb", "synth.decoder", "synth.out"];

impl SynthModel {
    pub fn new(cfg: SynthConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let h = cfg.hidden;
        // Separate projections summed equal one projection of the concatenation.
        let in_content = Linear::new(&mut ps, "synth.in.content", cfg.content_dim, h, &mut rng);
        let in_speaker = Linear::new(&mut ps, "synth.in.speaker", cfg.speaker_dim, h, &mut rng);
        let encoder = (0..cfg.n_layers)
            .map(|i| FftBlock::new(&mut ps, &format!("synth.encoder{i}"), h, h, cfg.filter, cfg.kernel, &mut rng))
            .collect();
        let dur = ConvPredictor::new(&mut ps, "synth.duration", h, cfg.predictor_filter, cfg.kernel, &mut rng);
        let pitch = ConvPredictor::new(&mut ps, "synth.pitch.pred", h, cfg.predictor_filter, cfg.kernel, &mut rng);
        let pitch_emb = Conv1d::new(&mut ps, "synth.pitch_emb", 1, h, cfg.kernel, 1, &mut rng);
        let decoder = (0..cfg.n_layers)
            .map(|i| FftBlock::new(&mut ps, &format!("synth.decoder{i}"), h, h, cfg.filter, cfg.kernel, &mut rng))
            .collect();
        let out = Linear::new(&mut ps, "synth.out", h, cfg.delta * cfg.stft.n_mels, &mut rng);
        Self { cfg, ps, in_content, in_speaker, encoder, dur, pitch, pitch_emb, decoder, out, mel_mean: 0.0, mel_std: 1.0 }
    }

    /// Global log-mel mean and scale used to normalize targets.
    pub fn fit_normalization(&mut self, mels: &[&Mat]) {
        let n: usize = mels.iter().map(|m| m.len()).sum();
        if n == 0 {
            return;
        }
        let mean = mels.iter().flat_map(|m| m.iter()).sum::<f64>() / n as f64;
        let var = mels.iter().flat_map(|m| m.iter()).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        self.mel_mean = mean;
        self.mel_std = var.sqrt().max(1e-8);
    }

    pub fn mel_normalization(&self) -> (f64, f64) {
        (self.mel_mean, self.mel_std)
    }

    /// Parameter ids grouped by submodule, in [`SUBMODULES`] order.
    pub fn submodule_params(&self) -> Vec<(String, Vec<ParamId>)> {
        SUBMODULES
            .iter()
            .map(|p| (p.trim_end_matches('.').to_string(), self.ps.ids().filter(|&id| self.ps.name(id).starts_with(p)).collect()))
            .collect()
    }

    fn with_positions(&self, cx: &mut Ctx, x: Var) -> Var {
        let (t, d) = cx.g.shape(x);
        let pos = cx.constant(sinusoidal_positions(t, d));
        cx.g.add(x, pos)
    }

    /// Encoder output `h`, one row per token.
    pub fn encode(&self, cx: &mut Ctx, z: &Mat, speaker: &[f64]) -> Var {
        let t = z.nrows();
        let z = cx.constant(z.clone());
        let s = cx.constant(Mat::from_shape_vec((1, speaker.len()), speaker.to_vec()).expect("row"));
        let zc = self.in_content.forward(cx, z);
        let sc = self.in_speaker.forward(cx, s);
        let sc = cx.g.broadcast_rows(sc, t);
        let mut h = cx.g.add(zc, sc);
        h = self.with_positions(cx, h);
        for b in &self.encoder {
            h = b.forward(cx, h);
        }
        h
    }

    pub fn predict_log_durations(&self, cx: &mut Ctx, h: Var) -> Var {
        self.dur.forward(cx, h)
    }

    pub fn predict_pitch(&self, cx: &mut Ctx, h: Var) -> Var {
        self.pitch.forward(cx, h)
    }

    /// Decodes `h + PitchEmbedding(p)` after regulation by `durations`.
    /// Returns normalized mel frames, `sum(durations) x n_mels`.
    pub fn decode(&self, cx: &mut Ctx, h: Var, pitch: &[f64], durations: &[usize]) -> Result<Var> {
        let idx = regulate_index(durations, self.cfg.delta)?;
        let p = cx.constant(Mat::from_shape_vec((pitch.len(), 1), pitch.to_vec()).expect("column"));
        let pe = self.pitch_emb.forward(cx, p);
        let k = cx.g.add(h, pe);
        let mut x = cx.g.gather_rows(k, idx);
        x = self.with_positions(cx, x);
        for b in &self.decoder {
            x = b.forward(cx, x);
        }
        let y = self.out.forward(cx, x);
        let rows = cx.g.shape(y).0;
        Ok(cx.g.reshape(y, rows * self.cfg.delta, self.cfg.stft.n_mels))
    }

    /// Teacher-forced forward pass for one item.
    pub fn forward_item(&self, cx: &mut Ctx, item: &SynthItem) -> Result<ItemOutputs> {
        item.validate(&self.cfg)?;
        let h = self.encode(cx, &item.z, &item.speaker);
        let log_dur = self.predict_log_durations(cx, h);
        let pitch = self.predict_pitch(cx, h);
        let mel = self.decode(cx, h, &item.pitch, &item.durations)?;
        Ok(ItemOutputs { mel, pitch, log_dur })
    }

    /// Adds the batch loss to the graph: masked mel MSE over real frames and
    /// bands, pitch MSE over voiced tokens, and log-duration MSE over tokens,
    /// each a mean over the whole batch.
    pub fn loss(&self, cx: &mut Ctx, batch: &SynthBatch) -> Result<(Var, SynthLossReport)> {
        if batch.items.is_empty() {
            return Err(Error::Empty("synthesizer batch"));
        }
        let n_mels = self.cfg.stft.n_mels;
        let (mut mel_terms, mut pitch_terms, mut dur_terms) = (Vec::new(), Vec::new(), Vec::new());
        let (mut n_mel, mut n_pitch, mut n_dur) = (0usize, 0usize, 0usize);
        for item in &batch.items {
            let out = self.forward_item(cx, item)?;
            let t = item.mel.nrows();
            let pred = cx.g.slice_rows(out.mel, t);
            let target = cx.constant(item.mel.mapv(|v| (v - self.mel_mean) / self.mel_std));
            let d = cx.g.sub(pred, target);
            let sq = cx.g.mul(d, d);
            mel_terms.push(cx.g.sum_all(sq));
            n_mel += t * n_mels;

            let n = item.n_tokens();
            let mask = Mat::from_shape_fn((n, 1), |(i, _)| if item.pitch_mask[i] { 1.0 } else { 0.0 });
            let target = cx.constant(Mat::from_shape_vec((n, 1), item.pitch.clone()).expect("column"));
            let d = cx.g.sub(out.pitch, target);
            let m = cx.constant(mask);
            let d = cx.g.mul(d, m);
            let sq = cx.g.mul(d, d);
            pitch_terms.push(cx.g.sum_all(sq));
            n_pitch += item.pitch_mask.iter().filter(|&&v| v).count();

            let log_d: Vec<f64> = item.durations.iter().map(|&d| ((d / self.cfg.delta) as f64).ln()).collect();
            let target = cx.constant(Mat::from_shape_vec((n, 1), log_d).expect("column"));
            let d = cx.g.sub(out.log_dur, target);
            let sq = cx.g.mul(d, d);
            dur_terms.push(cx.g.sum_all(sq));
            n_dur += n;
        }
        let mel = mean_of(cx, &mel_terms, n_mel);
        let pitch = mean_of(cx, &pitch_terms, n_pitch);
        let dur = mean_of(cx, &dur_terms, n_dur);
        let wp = cx.g.scale(pitch, LAMBDA_PITCH);
        let wd = cx.g.scale(dur, LAMBDA_DUR);
        let total = cx.g.add(mel, wp);
        let total = cx.g.add(total, wd);
        let report = SynthLossReport {
            total: cx.g.scalar(total),
            mel_mse: cx.g.scalar(mel),
            pitch_mse: cx.g.scalar(pitch),
            dur_mse: cx.g.scalar(dur),
            lambda_pitch: LAMBDA_PITCH,
            lambda_dur: LAMBDA_DUR,
        };
        if !report.total.is_finite() {
            return Err(Error::NonFinite("synthesizer loss"));
        }
        Ok((total, report))
    }

    /// Eval-mode loss without gradients.
    pub fn evaluate(&self, batch: &SynthBatch) -> Result<SynthLossReport> {
        let mut cx = Ctx::eval(&self.ps);
        Ok(self.loss(&mut cx, batch)?.1)
    }

    /// Synthesizes a mel spectrogram in eval mode.
    pub fn infer(&self, content: &ContentSequence, speaker: &SpeakerEmbedding, mode: &InferMode) -> Result<SynthOutput> {
        let n = content.len();
        if n == 0 {
            return Err(Error::Empty("content sequence"));
        }
        if content.z.ncols() != self.cfg.content_dim || speaker.s.len() != self.cfg.speaker_dim {
            return Err(Error::Dimension("content or speaker width does not match the model".into()));
        }
        let mut cx = Ctx::eval(&self.ps);
        let h = self.encode(&mut cx, &content.z, &speaker.s);
        let predicted_durations = |cx: &mut Ctx| -> Vec<usize> {
            let ld = self.predict_log_durations(cx, h);
            cx.g.value(ld).iter().map(|&v| self.cfg.delta * v.exp().round().max(1.0) as usize).collect()
        };
        let predicted_pitch = |cx: &mut Ctx| -> Vec<f64> {
            let p = self.predict_pitch(cx, h);
            cx.g.value(p).iter().copied().collect()
        };
        let (durations, pitch) = match mode {
            InferMode::Guided { durations, pitch } => (durations.clone(), pitch.clone()),
            InferMode::DurationGuided { durations } => (durations.clone(), predicted_pitch(&mut cx)),
            InferMode::Predictive => (predicted_durations(&mut cx), predicted_pitch(&mut cx)),
        };
        if durations.len() != n || pitch.len() != n {
            return Err(Error::LengthMismatch(n, durations.len().min(pitch.len())));
        }
        let y = self.decode(&mut cx, h, &pitch, &durations)?;
        let frames = cx.g.value(y).mapv(|v| v * self.mel_std + self.mel_mean);
        Ok(SynthOutput { mel: MelSpectrogram::from_frames(frames, &self.cfg.stft), durations, pitch })
    }

    pub fn save(&self, path: &Path, seed: u64, corpus_hash: &str) -> Result<()> {
        let mut header = CheckpointHeader::new(CHECKPOINT_KIND, serde_json::to_value(&self.cfg)?, seed, corpus_hash);
        header.extra = serde_json::to_value(MelNorm { mean: self.mel_mean, std: self.mel_std })?;
        save_checkpoint(path, header, &self.ps)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let (header, loaded) = load_checkpoint(path, CHECKPOINT_KIND)?;
        let cfg: SynthConfig = serde_json::from_value(header.arch.clone())?;
        let norm: MelNorm = serde_json::from_value(header.extra.clone())?;
        let mut model = Self::new(cfg, 0);
        restore_into(&mut model.ps, &loaded)?;
        model.mel_mean = norm.mean;
        model.mel_std = norm.std;
        Ok((model, header))
    }
}

/// Sum of per-item terms divided by the element count (0 when nothing counts).
fn mean_of(cx: &mut Ctx, terms: &[Var], count: usize) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = cx.g.add(acc, t);
    }
    cx.g.scale(acc, if count > 0 { 1.0 / count as f64 } else { 0.0 })
}

/// Central-difference check of the batch loss gradient (eval mode) over
/// `per_submodule` sampled scalars from each submodule.
pub fn gradient_check(model: &mut SynthModel, batch: &SynthBatch, per_submodule: usize, step: f64, seed: u64) -> Result<GradCheckReport> {
    model.evaluate(batch)?;
    let groups = model.submodule_params();
    let frozen = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    check_gradients(&mut model.ps, &groups, per_submodule, step, &mut rng, |ps| {
        let mut cx = Ctx::eval(ps);
        let (loss, _) = frozen.loss(&mut cx, batch).expect("batch validated");
        (cx.g, loss)
    })
}
