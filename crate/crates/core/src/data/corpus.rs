//! Parametric pseudo-speech: a glottal pulse train at the speaker's f0 through
//! a cascade of time-varying formant resonators, following a token sequence
//! drawn from an inventory shared by every speaker.

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestRecord, Split};
use crate::dsp::{save_wav, Waveform};
use crate::error::{Error, Result};

pub const N_FORMANTS: usize = 4;
const FRICATIVE_CENTERS: [f64; 2] = [3800.0, 6200.0];
const BANDWIDTHS: [f64; N_FORMANTS] = [70.0, 90.0, 130.0, 180.0];
/// Coefficient updates happen every this many samples.
const CONTROL_BLOCK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Vowel,
    Fricative,
    Silence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    /// Formant targets in Hz for vowels; noise center in `formants[0]` for fricatives.
    pub formants: [f64; N_FORMANTS],
}

/// Shared "phone" inventory: vowel formant targets, two fricatives and a pause.
pub fn token_inventory() -> Vec<Token> {
    let v = |f1: f64, f2: f64, f3: f64| Token { kind: TokenKind::Vowel, formants: [f1, f2, f3, 3700.0] };
    let mut inv = vec![
        v(730.0, 1090.0, 2440.0),
        v(270.0, 2290.0, 3010.0),
        v(300.0, 870.0, 2240.0),
        v(530.0, 1840.0, 2480.0),
        v(660.0, 1720.0, 2410.0),
        v(570.0, 840.0, 2410.0),
        v(440.0, 1020.0, 2240.0),
        v(390.0, 1990.0, 2550.0),
        v(490.0, 1350.0, 1690.0),
        v(640.0, 1190.0, 2390.0),
    ];
    for c in FRICATIVE_CENTERS {
        inv.push(Token { kind: TokenKind::Fricative, formants: [c, 0.0, 0.0, 0.0] });
    }
    inv.push(Token { kind: TokenKind::Silence, formants: [0.0; N_FORMANTS] });
    inv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeakerSpec {
    pub speaker_id: String,
    pub base_f0: f64,
    /// Standard deviation of the slow intonation component, Hz.
    pub f0_std: f64,
    /// Multiplier on every formant frequency (vocal tract length).
    pub formant_scale: f64,
    pub formant_offsets: [f64; N_FORMANTS],
    /// Tokens per second.
    pub speaking_rate: f64,
    /// One-pole coefficient of the glottal low-pass (higher is darker).
    pub tilt: f64,
    /// Aspiration noise level relative to voicing.
    pub breathiness: f64,
}

impl SyntheticSpeakerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.speaker_id.is_empty() {
            return Err(Error::Config("speaker_id must be non-empty".into()));
        }
        if !(80.0..=300.0).contains(&self.base_f0) {
            return Err(Error::OutOfRange(format!("base_f0 {} outside [80, 300] Hz", self.base_f0)));
        }
        if !(self.formant_scale > 0.5 && self.formant_scale < 2.0) || self.speaking_rate <= 0.0 || !(0.0..1.0).contains(&self.tilt) {
            return Err(Error::OutOfRange(format!("speaker {} has implausible parameters", self.speaker_id)));
        }
        Ok(())
    }

    /// Number of parameters that differ from `other`.
    pub fn n_differences(&self, other: &Self) -> usize {
        let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
        [
            !close(self.base_f0, other.base_f0),
            !close(self.f0_std, other.f0_std),
            !close(self.formant_scale, other.formant_scale),
            self.formant_offsets.iter().zip(&other.formant_offsets).any(|(a, b)| !close(*a, *b)),
            !close(self.speaking_rate, other.speaking_rate),
            !close(self.tilt, other.tilt),
            !close(self.breathiness, other.breathiness),
        ]
        .iter()
        .filter(|&&d| d)
        .count()
    }
}

/// Eight well-separated default speakers; more are drawn from the seed.
pub fn default_speakers(n: usize, seed: u64) -> Vec<SyntheticSpeakerSpec> {
    let table: [(f64, f64, f64, f64, f64); 8] = [
        (98.0, 1.00, 4.5, 0.93, 0.02),
        (112.0, 0.90, 5.5, 0.88, 0.05),
        (128.0, 1.08, 4.0, 0.95, 0.03),
        (146.0, 0.95, 6.0, 0.85, 0.08),
        (178.0, 1.16, 5.0, 0.90, 0.04),
        (204.0, 1.04, 4.5, 0.80, 0.10),
        (232.0, 1.22, 5.5, 0.92, 0.06),
        (262.0, 0.98, 6.5, 0.86, 0.12),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bea_7e25);
    (0..n)
        .map(|i| {
            let (f0, scale, rate, tilt, breath) = if i < table.len() {
                table[i]
            } else {
                (
                    rng.gen_range(85.0..290.0),
                    rng.gen_range(0.85..1.25),
                    rng.gen_range(4.0..6.5),
                    rng.gen_range(0.8..0.95),
                    rng.gen_range(0.0..0.12),
                )
            };
            let mut offsets = [0.0; N_FORMANTS];
            let mut orng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64 * 7919));
            for o in offsets.iter_mut() {
                *o = orng.gen_range(-80.0..80.0);
            }
            SyntheticSpeakerSpec {
                speaker_id: format!("spk{i:02}"),
                base_f0: f0,
                f0_std: f0 * 0.06,
                formant_scale: scale,
                formant_offsets: offsets,
                speaking_rate: rate,
                tilt,
                breathiness: breath,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub token: usize,
    pub start: usize,
    pub end: usize,
}

/// One synthesized utterance with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticUtterance {
    pub wav: Waveform,
    pub tokens: Vec<TokenSpan>,
    /// Ground-truth f0 sampled at frame centers `t * hop` (0 when unvoiced).
    pub f0: Vec<f64>,
}

struct Resonator {
    y1: f64,
    y2: f64,
    a: f64,
    b: f64,
    c: f64,
}

impl Resonator {
    fn new() -> Self {
        Self { y1: 0.0, y2: 0.0, a: 1.0, b: 0.0, c: 0.0 }
    }

    /// Unity gain at DC.
    fn set(&mut self, f: f64, bw: f64, fs: f64) {
        let r = (-PI * bw / fs).exp();
        self.c = -r * r;
        self.b = 2.0 * r * (TAU * f / fs).cos();
        self.a = 1.0 - self.b - self.c;
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Synthesizes one utterance of roughly `target_secs`.
pub fn synthesize_utterance(spec: &SyntheticSpeakerSpec, target_secs: f64, hop: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> SyntheticUtterance {
    let fs = sample_rate as f64;
    let inv = token_inventory();
    let silence = inv.len() - 1;
    let lead = (0.06 * fs) as usize;

    // Token sequence and spans.
    let mut spans = vec![TokenSpan { token: silence, start: 0, end: lead }];
    let mut pos = lead;
    let body_end = (target_secs * fs) as usize - lead;
    let mut prev = silence;
    while pos < body_end {
        let mut tok;
        loop {
            tok = if rng.gen_bool(0.75) { rng.gen_range(0..10) } else { rng.gen_range(10..inv.len()) };
            if tok != prev {
                break;
            }
        }
        let mut dur = rng.gen_range(0.7..1.3) / spec.speaking_rate;
        if inv[tok].kind != TokenKind::Vowel {
            dur *= 0.6;
        }
        let len = ((dur * fs) as usize).min(body_end + lead - pos).max(1);
        spans.push(TokenSpan { token: tok, start: pos, end: pos + len });
        pos += len;
        prev = tok;
    }
    spans.push(TokenSpan { token: silence, start: pos, end: pos + lead });
    let n = pos + lead;

    // Per-sample controls.
    let mut tok_at = vec![0usize; n];
    for s in &spans {
        tok_at[s.start..s.end].iter_mut().for_each(|t| *t = s.token);
    }
    let phases: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..TAU)).collect();
    let rates: Vec<f64> = (0..3).map(|_| rng.gen_range(0.4..2.0)).collect();
    let dur_s = n as f64 / fs;
    let f0_at = |i: usize| {
        let t = i as f64 / fs;
        let slow: f64 = (0..3).map(|k| (TAU * rates[k] * t + phases[k]).sin()).sum::<f64>() / 3f64.sqrt();
        spec.base_f0 * (1.0 + 0.06 * (0.5 - t / dur_s)) + spec.f0_std * slow
    };
    // Smoothed voicing, noise and formant trajectories.
    let smooth = (-1.0 / (0.012 * fs)).exp();
    let mut voice_amp = 0.0;
    let mut fric_amp = 0.0;
    let mut formants = [500.0, 1500.0, 2500.0, 3700.0];
    for (k, f) in formants.iter_mut().enumerate() {
        *f = *f * spec.formant_scale + spec.formant_offsets[k];
    }
    let mut res: Vec<Resonator> = (0..N_FORMANTS).map(|_| Resonator::new()).collect();
    let mut fric_res = Resonator::new();
    let mut phase = 0.0;
    let mut lp1 = 0.0;
    let mut lp2 = 0.0;
    let mut prev_src = 0.0;
    let mut out = vec![0.0; n];
    let mut voiced_gate = vec![0.0; n];
    let mut fric_center = FRICATIVE_CENTERS[0];
    let mut period_jitter = 1.0;
    for i in 0..n {
        let tok = &inv[tok_at[i]];
        let (v_target, f_target) = match tok.kind {
            TokenKind::Vowel => (1.0, 0.0),
            TokenKind::Fricative => (0.0, 1.0),
            TokenKind::Silence => (0.0, 0.0),
        };
        voice_amp = smooth * voice_amp + (1.0 - smooth) * v_target;
        fric_amp = smooth * fric_amp + (1.0 - smooth) * f_target;
        voiced_gate[i] = voice_amp;
        if i % CONTROL_BLOCK == 0 {
            let glide = (-(CONTROL_BLOCK as f64) / (0.05 * fs)).exp();
            if tok.kind == TokenKind::Vowel {
                for k in 0..N_FORMANTS {
                    let target = tok.formants[k] * spec.formant_scale + spec.formant_offsets[k];
                    formants[k] = glide * formants[k] + (1.0 - glide) * target;
                }
            }
            if tok.kind == TokenKind::Fricative {
                fric_center = tok.formants[0] * spec.formant_scale.sqrt();
            }
            for k in 0..N_FORMANTS {
                res[k].set(formants[k].clamp(150.0, 0.45 * fs), BANDWIDTHS[k] * spec.formant_scale, fs);
            }
            fric_res.set(fric_center, 900.0, fs);
        }
        // Glottal pulse train with per-period jitter; pulses split across two samples.
        let f0 = f0_at(i) * period_jitter;
        phase += f0 / fs;
        let mut src = 0.0;
        if phase >= 1.0 {
            phase -= 1.0;
            let frac = phase * fs / f0;
            src = 1.0 - frac.min(1.0);
            if i + 1 < n {
                prev_src = frac.min(1.0);
            }
            period_jitter = 1.0 + 0.003 * rng.sample::<f64, _>(StandardNormal);
        } else if prev_src > 0.0 {
            src = prev_src;
            prev_src = 0.0;
        }
        lp1 = spec.tilt * lp1 + (1.0 - spec.tilt) * src;
        lp2 = spec.tilt * lp2 + (1.0 - spec.tilt) * lp1;
        let noise: f64 = rng.sample(StandardNormal);
        let excitation = voice_amp * (lp2 * 40.0 + spec.breathiness * 0.05 * noise);
        let mut y = excitation;
        for r in res.iter_mut() {
            y = r.tick(y);
        }
        let f = fric_res.tick(noise) * fric_amp * 0.15;
        out[i] = y + f + 1e-4 * noise;
    }
    // Radiation (first difference) and peak normalization.
    let mut prev = 0.0;
    for s in out.iter_mut() {
        let d = *s - prev;
        prev = *s;
        *s = d;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    out.iter_mut().for_each(|s| *s *= 0.5 / peak);

    let n_frames = n.div_ceil(hop);
    let f0 = (0..n_frames)
        .map(|t| {
            let i = (t * hop).min(n - 1);
            // Only frames whose whole analysis neighbourhood is voiced count as voiced.
            let lo = i.saturating_sub(hop * 2);
            let hi = (i + hop * 2).min(n - 1);
            if voiced_gate[lo] > 0.9 && voiced_gate[hi] > 0.9 && voiced_gate[i] > 0.9 {
                f0_at(i)
            } else {
                0.0
            }
        })
        .collect();
    SyntheticUtterance { wav: Waveform { samples: out, sample_rate }, tokens: spans, f0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub utts_per_speaker: usize,
    pub min_secs: f64,
    pub max_secs: f64,
    pub n_test: usize,
    pub n_val: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub hop: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { utts_per_speaker: 50, min_secs: 1.0, max_secs: 1.6, n_test: 100, n_val: 20, seed: 0, sample_rate: 22050, hop: 256 }
    }
}

#[derive(Serialize)]
struct F0Row {
    frame_index: usize,
    f0_hz: f64,
    voiced: bool,
}

/// Writes WAVs, `<stem>.f0.csv` and `<stem>.tokens.json` sidecars, `speakers.json`
/// and `manifest.jsonl` under `out_dir`.
pub fn generate_corpus(specs: &[SyntheticSpeakerSpec], cfg: &CorpusConfig, out_dir: &Path) -> Result<Manifest> {
    if specs.len() < 2 {
        return Err(Error::Config(format!("corpus needs at least 2 speakers, got {}", specs.len())));
    }
    let mut seen = HashSet::new();
    for s in specs {
        s.validate()?;
        if !seen.insert(s.speaker_id.clone()) {
            return Err(Error::DuplicateSpeaker(s.speaker_id.clone()));
        }
    }
    for (i, a) in specs.iter().enumerate() {
        for b in &specs[i + 1..] {
            if a.n_differences(b) < 2 {
                return Err(Error::Config(format!("speakers {} and {} differ in fewer than 2 parameters", a.speaker_id, b.speaker_id)));
            }
        }
    }
    let total = specs.len() * cfg.utts_per_speaker;
    if cfg.n_test + cfg.n_val >= total {
        return Err(Error::Config(format!("{} test + {} val utterances leave no training data out of {total}", cfg.n_test, cfg.n_val)));
    }
    if !(cfg.min_secs > 0.1 && cfg.max_secs >= cfg.min_secs) {
        return Err(Error::Config("utterance length range is invalid".into()));
    }
    let wav_dir = out_dir.join("wavs");
    fs::create_dir_all(&wav_dir)?;

    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5b11_7000));
    let mut split = vec![Split::Train; total];
    for (rank, &i) in order.iter().enumerate() {
        if rank < cfg.n_test {
            split[i] = Split::Test;
        } else if rank < cfg.n_test + cfg.n_val {
            split[i] = Split::Val;
        }
    }

    let mut records = Vec::with_capacity(total);
    for (si, spec) in specs.iter().enumerate() {
        for u in 0..cfg.utts_per_speaker {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add((si * 100_000 + u) as u64));
            let secs = rng.gen_range(cfg.min_secs..=cfg.max_secs);
            let utt = synthesize_utterance(spec, secs, cfg.hop, cfg.sample_rate, &mut rng);
            let stem = format!("{}_{u:03}", spec.speaker_id);
            let rel = format!("wavs/{stem}.wav");
            save_wav(out_dir.join(&rel), &utt.wav)?;
            let mut w = csv::Writer::from_path(wav_dir.join(format!("{stem}.f0.csv")))?;
            for (t, &f) in utt.f0.iter().enumerate() {
                w.serialize(F0Row { frame_index: t, f0_hz: f, voiced: f > 0.0 })?;
            }
            w.flush()?;
            fs::write(wav_dir.join(format!("{stem}.tokens.json")), serde_json::to_vec(&utt.tokens)?)?;
            records.push(ManifestRecord {
                audio_path: rel,
                speaker_id: spec.speaker_id.clone(),
                duration_sec: utt.wav.duration_sec(),
                split: split[si * cfg.utts_per_speaker + u],
            });
        }
    }
    fs::write(out_dir.join("speakers.json"), serde_json::to_vec_pretty(specs)?)?;
    let manifest = Manifest { records, root: out_dir.to_path_buf() };
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Reads a ground-truth f0 sidecar written by [`generate_corpus`].
pub fn read_f0_sidecar(path: &Path) -> Result<Vec<f64>> {
    #[derive(Deserialize)]
    struct Row {
        f0_hz: f64,
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize::<Row>() {
        out.push(row?.f0_hz);
    }
    Ok(out)
}
