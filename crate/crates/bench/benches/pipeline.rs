use std::f64::consts::TAU;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfvc_core::content::{group_content, ContentFrames, DEFAULT_TAU};
use selfvc_core::dsp::{griffin_lim_invert, mel_spectrogram, StftConfig, Waveform};
use selfvc_core::nn::{Ctx, Gradients};
use selfvc_core::perturb::{g2, PerturbConfig};
use selfvc_core::pitch::{estimate_f0, YinConfig};
use selfvc_core::speaker::{compute_eer, VerificationTrials};
use selfvc_core::synth::{SynthBatch, SynthConfig, SynthItem, SynthModel};

const SR: u32 = 22050;

/// One second of a 150 Hz tone with eight harmonics.
fn voiced_second() -> Waveform {
    let samples = (0..SR as usize)
        .map(|i| {
            let ph = TAU * 150.0 * i as f64 / SR as f64;
            0.2 * (1..=8).map(|h| (h as f64 * ph).sin() / h as f64).sum::<f64>()
        })
        .collect();
    Waveform::new(samples, SR).unwrap()
}

fn dsp(c: &mut Criterion) {
    let w = voiced_second();
    let cfg = StftConfig::default();
    let mel = mel_spectrogram(&w, &cfg).unwrap();
    c.bench_function("mel_spectrogram_1s", |b| b.iter(|| mel_spectrogram(black_box(&w), &cfg).unwrap()));
    c.bench_function("griffin_lim_32_iters_1s", |b| b.iter(|| griffin_lim_invert(black_box(&mel), &cfg, 32).unwrap()));
    c.bench_function("estimate_f0_1s", |b| b.iter(|| estimate_f0(black_box(&w), 256, &YinConfig::default()).unwrap()));
    let pcfg = PerturbConfig::default();
    c.bench_function("perturb_g2_1s", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        b.iter(|| g2(black_box(&w), &pcfg, &mut rng).unwrap())
    });
}

fn grouping(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = ContentFrames::new(Array2::from_shape_simple_fn((200, 64), || rng.gen_range(-1.0..1.0)));
    c.bench_function("group_content_200x64", |b| b.iter(|| group_content(black_box(&z), DEFAULT_TAU).unwrap()));
}

fn synth_step(c: &mut Criterion) {
    let cfg = SynthConfig { hidden: 64, filter: 128, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let items = (0..16)
        .map(|_| {
            let n = 16;
            let durations = vec![cfg.delta * 2; n];
            let frames = durations.iter().sum();
            SynthItem {
                z: Array2::from_shape_simple_fn((n, cfg.content_dim), || rng.gen_range(-1.0..1.0)),
                durations,
                pitch: vec![0.0; n],
                pitch_mask: vec![true; n],
                speaker: (0..cfg.speaker_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                mel: Array2::from_shape_simple_fn((frames, cfg.stft.n_mels), || rng.gen_range(-8.0..0.0)),
            }
        })
        .collect();
    let batch = SynthBatch { items };
    let model = SynthModel::new(cfg, 4);
    let mut group = c.benchmark_group("synth");
    group.sample_size(10);
    group.bench_function("loss_and_backward_batch16", |b| {
        b.iter(|| {
            let mut cx = Ctx::eval(&model.ps);
            let (loss, _) = model.loss(&mut cx, &batch).unwrap();
            let mut grads = Gradients::zeros_like(&model.ps);
            cx.g.backward(loss, &mut grads);
            grads
        })
    });
    group.finish();
}

fn eer(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scores: Vec<(f64, bool)> = (0..320)
        .map(|i| {
            let pos = i % 2 == 0;
            (rng.gen_range(-1.0..1.0) + if pos { 0.8 } else { 0.0 }, pos)
        })
        .collect();
    let trials = VerificationTrials::from_scores(&scores);
    c.bench_function("compute_eer_320_trials", |b| b.iter(|| compute_eer(black_box(&trials)).unwrap()));
}

criterion_group!(benches, dsp, grouping, synth_step, eer);
criterion_main!(benches);
