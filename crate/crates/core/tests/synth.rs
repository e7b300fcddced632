use std::time::Instant;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfvc_core::content::ContentSequence;
use selfvc_core::nn::{Ctx, Gradients, Mat};
use selfvc_core::pitch::NormalizedPitch;
use selfvc_core::speaker::SpeakerEmbedding;
use selfvc_core::synth::*;

fn tiny() -> SynthConfig {
    SynthConfig { content_dim: 8, speaker_dim: 12, hidden: 16, filter: 32, predictor_filter: 16, ..Default::default() }
}

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Array2::from_shape_simple_fn((r, c), || scale * rng.gen_range(-1.0..1.0))
}

fn random_item(cfg: &SynthConfig, rng: &mut ChaCha8Rng, n_tokens: usize) -> SynthItem {
    let durations: Vec<usize> = (0..n_tokens).map(|_| cfg.delta * rng.gen_range(1..4)).collect();
    let total: usize = durations.iter().sum();
    let t = total - rng.gen_range(0..cfg.delta);
    let pitch_mask: Vec<bool> = (0..n_tokens).map(|_| rng.gen_bool(0.7)).collect();
    let pitch = pitch_mask.iter().map(|&v| if v { rng.gen_range(-2.0..2.0) } else { 0.0 }).collect();
    SynthItem {
        z: random_mat(rng, n_tokens, cfg.content_dim, 1.0),
        durations,
        pitch,
        pitch_mask,
        speaker: (0..cfg.speaker_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        mel: random_mat(rng, t, cfg.stft.n_mels, 3.0).mapv(|v| v - 5.0),
    }
}

fn random_batch(cfg: &SynthConfig, seed: u64, n: usize) -> SynthBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SynthBatch { items: (0..n).map(|i| random_item(cfg, &mut rng, 3 + i)).collect() }
}

#[test]
fn gradient_check_on_tiny_model() {
    let t0 = Instant::now();
    let cfg = tiny();
    let mut model = SynthModel::new(cfg.clone(), 3);
    let batch = random_batch(&cfg, 4, 2);
    model.fit_normalization(&batch.items.iter().map(|i| &i.mel).collect::<Vec<_>>());
    let report = gradient_check(&mut model, &batch, 50, 1e-5, 9).unwrap();
    assert_eq!(report.groups.len(), SUBMODULES.len());
    for g in &report.groups {
        assert!(g.n_checked >= 50, "{} checked only {}", g.group, g.n_checked);
    }
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert!(t0.elapsed().as_secs() < 120);
}

/// Masked means recomputed from the teacher-forced outputs.
#[test]
fn loss_matches_direct_computation() {
    let cfg = tiny();
    let mut model = SynthModel::new(cfg.clone(), 1);
    let batch = random_batch(&cfg, 2, 3);
    model.fit_normalization(&batch.items.iter().map(|i| &i.mel).collect::<Vec<_>>());
    let (mean, std) = model.mel_normalization();
    let mut cx = Ctx::eval(&model.ps);
    let (mut mel_sse, mut n_mel, mut p_sse, mut n_p, mut d_sse, mut n_d) = (0.0, 0usize, 0.0, 0usize, 0.0, 0usize);
    for item in &batch.items {
        let out = model.forward_item(&mut cx, item).unwrap();
        let y = cx.g.value(out.mel);
        assert_eq!(y.nrows(), item.total_frames());
        for i in 0..item.mel.nrows() {
            for j in 0..80 {
                mel_sse += (y[[i, j]] - (item.mel[[i, j]] - mean) / std).powi(2);
                n_mel += 1;
            }
        }
        let p = cx.g.value(out.pitch);
        let d = cx.g.value(out.log_dur);
        for t in 0..item.n_tokens() {
            if item.pitch_mask[t] {
                p_sse += (p[[t, 0]] - item.pitch[t]).powi(2);
                n_p += 1;
            }
            d_sse += (d[[t, 0]] - ((item.durations[t] / cfg.delta) as f64).ln()).powi(2);
            n_d += 1;
        }
    }
    let r = model.evaluate(&batch).unwrap();
    assert!((r.mel_mse - mel_sse / n_mel as f64).abs() < 1e-10);
    assert!((r.pitch_mse - p_sse / n_p as f64).abs() < 1e-10);
    assert!((r.dur_mse - d_sse / n_d as f64).abs() < 1e-10);
    assert_eq!(r.total, r.weighted_sum());
    assert_eq!((r.lambda_pitch, r.lambda_dur), (0.1, 0.1));
}

#[test]
fn weighted_sum_arithmetic() {
    let r = SynthLossReport::new(1.0, 4.0, 9.0);
    assert!((r.total - 2.3).abs() < 1e-15);
    assert_eq!(SynthLossReport::new(0.0, 0.0, 0.0).total, 0.0);
}

#[test]
fn perfect_predictions_give_zero_loss_and_gradient() {
    let cfg = tiny();
    let mut model = SynthModel::new(cfg.clone(), 6);
    // Duration head emits exactly log(1) so unit durations are predicted perfectly.
    for name in ["synth.duration.out.w", "synth.duration.out.b"] {
        let id = model.ps.id_of(name).unwrap();
        model.ps.get_mut(id).fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut item = random_item(&cfg, &mut rng, 5);
    item.durations = vec![cfg.delta; 5];
    item.mel = Mat::zeros((5 * cfg.delta, 80));
    // Pitch predictions do not depend on the pitch input; the mel does.
    let mut cx = Ctx::eval(&model.ps);
    let out = model.forward_item(&mut cx, &item).unwrap();
    item.pitch = cx.g.value(out.pitch).iter().copied().collect();
    let mut cx = Ctx::eval(&model.ps);
    let out = model.forward_item(&mut cx, &item).unwrap();
    item.mel = cx.g.value(out.mel).clone();
    drop(cx);
    let batch = SynthBatch { items: vec![item] };
    let mut cx = Ctx::eval(&model.ps);
    let (loss, report) = model.loss(&mut cx, &batch).unwrap();
    assert_eq!(report.total, 0.0);
    let mut grads = Gradients::zeros_like(&model.ps);
    cx.g.backward(loss, &mut grads);
    assert_eq!(grads.global_norm(), 0.0);
}

#[test]
fn masked_positions_do_not_contribute() {
    let cfg = tiny();
    let model = SynthModel::new(cfg.clone(), 8);
    let mut batch = random_batch(&cfg, 5, 2);
    batch.items[0].pitch_mask[1] = false;
    let base = model.evaluate(&batch).unwrap();
    let mut changed = batch.clone();
    changed.items[0].pitch[1] += 100.0;
    let after = model.evaluate(&changed).unwrap();
    assert_eq!(after.pitch_mse, base.pitch_mse);
    assert_eq!(after.dur_mse, base.dur_mse);
}

#[test]
fn item_validation() {
    let cfg = tiny();
    let model = SynthModel::new(cfg.clone(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let good = random_item(&cfg, &mut rng, 4);
    let check = |f: &dyn Fn(&mut SynthItem)| {
        let mut it = good.clone();
        f(&mut it);
        model.evaluate(&SynthBatch { items: vec![it] }).is_err()
    };
    assert!(!check(&|_| {}));
    assert!(check(&|it| it.durations[0] = 3));
    assert!(check(&|it| it.durations[0] = 0));
    assert!(check(&|it| it.pitch.pop().map(|_| ()).unwrap()));
    assert!(check(&|it| it.mel = Mat::zeros((it.total_frames() + 1, 80))));
    assert!(check(&|it| it.mel = Mat::zeros((it.total_frames() - cfg.delta, 80))));
    assert!(check(&|it| it.z[[0, 0]] = f64::NAN));
    assert!(model.evaluate(&SynthBatch::default()).is_err());
}

#[test]
fn regulation_semantics() {
    let k = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let r = duration_regulate(&k, &[12, 4], 4).unwrap();
    assert_eq!(r, Array2::from_shape_vec((4, 2), vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 3.0, 4.0]).unwrap());
    assert_eq!(duration_regulate(&k, &[4, 4], 4).unwrap(), k);
    assert!(duration_regulate(&k, &[0, 4], 4).is_err());
    assert!(duration_regulate(&k, &[5, 4], 4).is_err());
    assert!(duration_regulate(&k, &[4], 4).is_err());
}

proptest! {
    #[test]
    fn regulation_permutes_blocks(d in prop::collection::vec(1usize..5, 1..8), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let n = d.len();
        let k = Array2::from_shape_fn((n, 3), |(i, j)| (10 * i + j) as f64);
        let dur: Vec<usize> = d.iter().map(|x| 4 * x).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let kp = k.select(ndarray::Axis(0), &perm);
        let dp: Vec<usize> = perm.iter().map(|&i| dur[i]).collect();
        let out = duration_regulate(&kp, &dp, 4).unwrap();
        let mut row = 0;
        for &i in &perm {
            for _ in 0..d[i] {
                prop_assert_eq!(out.row(row), k.row(i));
                row += 1;
            }
        }
        prop_assert_eq!(row, out.nrows());
    }

    #[test]
    fn guided_output_length_is_sum_of_durations(d in prop::collection::vec(1usize..6, 1..12), seed in 0u64..1000) {
        let cfg = tiny();
        let model = SynthModel::new(cfg.clone(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let durations: Vec<usize> = d.iter().map(|x| cfg.delta * x).collect();
        let content = ContentSequence { z: random_mat(&mut rng, d.len(), cfg.content_dim, 1.0), durations: durations.clone(), delta: cfg.delta };
        let s = SpeakerEmbedding { s: vec![0.5; cfg.speaker_dim] };
        let out = model.infer(&content, &s, &InferMode::Guided { durations: durations.clone(), pitch: vec![0.3; d.len()] }).unwrap();
        prop_assert_eq!(out.mel.n_frames(), durations.iter().sum::<usize>());
        prop_assert_eq!(out.mel.n_mels(), 80);
        let dg = model.infer(&content, &s, &InferMode::DurationGuided { durations: durations.clone() }).unwrap();
        prop_assert_eq!(dg.mel.n_frames(), durations.iter().sum::<usize>());
    }

    #[test]
    fn token_pitch_preserves_voiced_mean(p in prop::collection::vec((-3.0f64..3.0, any::<bool>()), 1..80), cuts in prop::collection::vec(1usize..5, 1..40)) {
        let voiced: Vec<bool> = p.iter().map(|x| x.1).collect();
        prop_assume!(voiced.iter().any(|&v| v));
        let frames = NormalizedPitch { p: p.iter().map(|x| if x.1 { x.0 } else { 0.0 }).collect(), voiced };
        let mut durations: Vec<usize> = Vec::new();
        let mut covered = 0;
        for c in cuts.iter().cycle() {
            if covered >= frames.p.len() {
                break;
            }
            durations.push(4 * c);
            covered += 4 * c;
        }
        let (tp, mask) = token_pitch(&frames, &durations);
        let frame_mean = frames.p.iter().zip(&frames.voiced).filter(|x| *x.1).map(|x| x.0).sum::<f64>()
            / frames.voiced.iter().filter(|&&v| v).count() as f64;
        let mut start = 0;
        let (mut num, mut den) = (0.0, 0.0);
        for (t, &d) in durations.iter().enumerate() {
            let end = (start + d).min(frames.p.len());
            let nv = frames.voiced[start.min(end)..end].iter().filter(|&&v| v).count() as f64;
            prop_assert_eq!(mask[t], nv > 0.0);
            num += nv * tp[t];
            den += nv;
            start += d;
        }
        prop_assert!((num / den - frame_mean).abs() < 1e-9);
    }
}

#[test]
fn token_pitch_duration_weighted_mean_when_fully_voiced() {
    let frames = NormalizedPitch { p: (0..24).map(|i| (i as f64 * 0.37).sin()).collect(), voiced: vec![true; 24] };
    let durations = [8, 4, 12];
    let (tp, mask) = token_pitch(&frames, &durations);
    assert!(mask.iter().all(|&m| m));
    let weighted = tp.iter().zip(durations).map(|(p, d)| p * d as f64).sum::<f64>() / 24.0;
    let mean = frames.p.iter().sum::<f64>() / 24.0;
    assert!((weighted - mean).abs() < 1e-6);
}

#[test]
fn speaker_conditioning_and_predictive_determinism() {
    let cfg = tiny();
    let model = SynthModel::new(cfg.clone(), 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let content = ContentSequence { z: random_mat(&mut rng, 6, cfg.content_dim, 1.0), durations: vec![8; 6], delta: cfg.delta };
    let a = SpeakerEmbedding { s: (0..cfg.speaker_dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let b = SpeakerEmbedding { s: (0..cfg.speaker_dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let mode = InferMode::Guided { durations: vec![8; 6], pitch: vec![0.0; 6] };
    let ya = model.infer(&content, &a, &mode).unwrap();
    let ya2 = model.infer(&content, &a.clone(), &mode).unwrap();
    let yb = model.infer(&content, &b, &mode).unwrap();
    assert_eq!(ya.mel, ya2.mel);
    let mse = (&ya.mel.frames - &yb.mel.frames).mapv(|v| v * v).mean().unwrap();
    assert!(mse > 0.0);

    let p1 = model.infer(&content, &a, &InferMode::Predictive).unwrap();
    let p2 = model.infer(&content, &a, &InferMode::Predictive).unwrap();
    assert_eq!(p1.mel, p2.mel);
    assert_eq!(p1.durations, p2.durations);
    assert!(p1.durations.iter().all(|&d| d >= cfg.delta && d % cfg.delta == 0));
    assert_eq!(p1.mel.n_frames(), p1.durations.iter().sum::<usize>());
}

#[test]
fn negative_duration_output_clamps_to_delta() {
    let cfg = tiny();
    let mut model = SynthModel::new(cfg.clone(), 4);
    let w = model.ps.id_of("synth.duration.out.w").unwrap();
    let b = model.ps.id_of("synth.duration.out.b").unwrap();
    model.ps.get_mut(w).fill(0.0);
    model.ps.get_mut(b).fill(-5.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let content = ContentSequence { z: random_mat(&mut rng, 5, cfg.content_dim, 1.0), durations: vec![8; 5], delta: cfg.delta };
    let s = SpeakerEmbedding { s: vec![0.1; cfg.speaker_dim] };
    let out = model.infer(&content, &s, &InferMode::Predictive).unwrap();
    assert_eq!(out.durations, vec![cfg.delta; 5]);
    model.ps.get_mut(b).fill(2f64.ln());
    let out = model.infer(&content, &s, &InferMode::Predictive).unwrap();
    assert_eq!(out.durations, vec![2 * cfg.delta; 5]);
}

#[test]
fn infer_rejects_mismatched_guides() {
    let cfg = tiny();
    let model = SynthModel::new(cfg.clone(), 4);
    let content = ContentSequence { z: Mat::zeros((3, cfg.content_dim)), durations: vec![4; 3], delta: 4 };
    let s = SpeakerEmbedding { s: vec![0.1; cfg.speaker_dim] };
    assert!(model.infer(&content, &s, &InferMode::Guided { durations: vec![4; 2], pitch: vec![0.0; 3] }).is_err());
    assert!(model.infer(&content, &s, &InferMode::DurationGuided { durations: vec![4, 3, 4] }).is_err());
    assert!(model.infer(&content, &SpeakerEmbedding { s: vec![0.0; 5] }, &InferMode::Predictive).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let cfg = tiny();
    let mut model = SynthModel::new(cfg.clone(), 4);
    let batch = random_batch(&cfg, 1, 2);
    model.fit_normalization(&batch.items.iter().map(|i| &i.mel).collect::<Vec<_>>());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synth.ckpt");
    model.save(&path, 4, "h").unwrap();
    let (loaded, header) = SynthModel::load(&path).unwrap();
    assert_eq!(header.kind, CHECKPOINT_KIND);
    assert_eq!(loaded.cfg, cfg);
    let a = model.evaluate(&batch).unwrap();
    let b = loaded.evaluate(&batch).unwrap();
    assert!((a.total - b.total).abs() < 1e-4 * a.total);
}
