use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use selfvc_core::data::ExperimentConfig;

fn selfvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfvc")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = selfvc(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.speakers.n_speakers = 3;
    c.speakers.seed = 5;
    c.corpus.utts_per_speaker = 10;
    c.corpus.n_test = 9;
    c.corpus.n_val = 3;
    c.corpus.seed = 5;
    c.encoder.hidden = 16;
    c.encoder.dim = 8;
    c.encoder.n_blocks = 1;
    c.encoder.filter = 32;
    c.pretrain.steps = 4;
    c.pretrain.batch_size = 2;
    c.speaker.channels = 16;
    c.speaker.n_blocks = 1;
    c.speaker.dim = 12;
    c.speaker_train.steps = 4;
    c.speaker_train.batch_size = 4;
    c.evaluator_train.steps = 4;
    c.evaluator_train.batch_size = 4;
    c.prepare.pool_size = 2;
    c.synth.content_dim = 8;
    c.synth.speaker_dim = 12;
    c.synth.hidden = 16;
    c.synth.filter = 32;
    c.synth.predictor_filter = 16;
    c.synth.n_layers = 1;
    c.train.total_iters = 6;
    c.train.warmup_iters = 2;
    c.train.batch_size = 2;
    c.train.snapshot_every = 2;
    c.eval.trials.n_targets = 2;
    c.eval.trials.n_sources = 2;
    c.eval.trials.n_references = 2;
    c.eval.griffin_lim_iters = 4;
    c
}

/// A tiny corpus with trained encoder, speaker models and synthesizer, all
/// produced through the command line.
struct Pipeline {
    dir: tempfile::TempDir,
}

impl Pipeline {
    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.p(name).to_string_lossy().into_owned()
    }

    fn model_args(&self) -> Vec<String> {
        ["--encoder", &self.s("enc.ckpt"), "--speaker", &self.s("spk.ckpt"), "--synth", &self.s("run1/synth.ckpt")]
            .map(String::from)
            .to_vec()
    }
}

fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let p = Pipeline { dir: tempfile::tempdir().unwrap() };
        tiny_config().save(&p.p("cfg.toml")).unwrap();
        let cfg = p.s("cfg.toml");
        let manifest = p.s("corpus/manifest.jsonl");
        ok(&["--config", &cfg, "generate-corpus", "--out", &p.s("corpus")]);
        ok(&["--config", &cfg, "pretrain-content", "--manifest", &manifest, "--out", &p.s("enc.ckpt")]);
        ok(&["--config", &cfg, "train-speaker", "--manifest", &manifest, "--out", &p.s("spk.ckpt")]);
        ok(&["--config", &cfg, "train-speaker", "--evaluator", "--manifest", &manifest, "--out", &p.s("eval.ckpt")]);
        for run in ["run1", "run2"] {
            ok(&[
                "--config", &cfg, "train", "--manifest", &manifest, "--encoder", &p.s("enc.ckpt"), "--speaker", &p.s("spk.ckpt"),
                "--out-dir", &p.s(run),
            ]);
        }
        p
    })
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn help_and_bad_arguments() {
    assert_eq!(selfvc(&["--help"]).status.code(), Some(0));
    assert_eq!(selfvc(&["no-such-verb"]).status.code(), Some(1));
    assert_eq!(selfvc(&["train"]).status.code(), Some(1));
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl").to_string_lossy().into_owned();
    let out = selfvc(&["pretrain-content", "--manifest", &missing, "--out", "x.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "schema_version = 9\n").unwrap();
    let out = selfvc(&["--config", &bad.to_string_lossy(), "generate-corpus", "--out", &dir.path().join("c").to_string_lossy()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let p = pipeline();
    let wav = p.s("corpus/wavs");
    let first = fs::read_dir(&wav).unwrap().map(|e| e.unwrap().path()).find(|x| x.extension().is_some_and(|e| e == "wav")).unwrap();
    let out = selfvc(&["perturb", "--input", &first.to_string_lossy(), "--out", "/nonexistent-dir/x.wav"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_verb_writes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    ok(&["config", "--out", &path.to_string_lossy()]);
    assert_eq!(ExperimentConfig::load(&path).unwrap(), ExperimentConfig::default());
}

#[test]
fn generate_corpus_is_reproducible() {
    let p = pipeline();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("again");
    ok(&["--config", &p.s("cfg.toml"), "generate-corpus", "--out", &out.to_string_lossy()]);
    assert_eq!(files_in(&p.p("corpus/wavs")), files_in(&out.join("wavs")));
    assert_eq!(fs::read(p.p("corpus/manifest.jsonl")).unwrap(), fs::read(out.join("manifest.jsonl")).unwrap());
    let other = dir.path().join("other");
    ok(&["--config", &p.s("cfg.toml"), "generate-corpus", "--seed", "6", "--out", &other.to_string_lossy()]);
    assert_ne!(files_in(&p.p("corpus/wavs")), files_in(&other.join("wavs")));
}

#[test]
fn train_is_reproducible() {
    let p = pipeline();
    assert_eq!(fs::read(p.p("run1/synth.ckpt")).unwrap(), fs::read(p.p("run2/synth.ckpt")).unwrap());
    assert_eq!(fs::read(p.p("run1/train_log.csv")).unwrap(), fs::read(p.p("run2/train_log.csv")).unwrap());
    let log = fs::read_to_string(p.p("run1/train_log.csv")).unwrap();
    assert!(log.starts_with("step,total,mel,pitch,dur,transform_mode,n_fallback,grad_norm"));
    assert_eq!(log.lines().count(), 7);
}

#[test]
fn convert_is_reproducible() {
    let p = pipeline();
    let models = p.model_args();
    let m: Vec<&str> = models.iter().map(String::as_str).collect();
    let cfg = p.s("cfg.toml");
    let targets = p.p("targets");
    fs::create_dir_all(&targets).unwrap();
    let wavs: Vec<PathBuf> = {
        let mut v: Vec<PathBuf> = fs::read_dir(p.p("corpus/wavs")).unwrap().map(|e| e.unwrap().path()).filter(|x| x.extension().is_some_and(|e| e == "wav")).collect();
        v.sort();
        v
    };
    for w in wavs.iter().filter(|w| w.file_name().unwrap().to_string_lossy().starts_with("spk01")).take(3) {
        fs::copy(w, targets.join(w.file_name().unwrap())).unwrap();
    }
    let source = wavs[0].to_string_lossy().into_owned();
    let target_dir = targets.to_string_lossy().into_owned();
    let mut outs = Vec::new();
    for name in ["a.wav", "b.wav"] {
        let out = p.s(name);
        let mut args = vec!["--config", &cfg, "convert"];
        args.extend(&m);
        args.extend(["--source", &source, "--target-dir", &target_dir, "--out", &out]);
        ok(&args);
        outs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    let mut args = vec!["--config", &cfg, "convert"];
    args.extend(&m);
    let empty = p.p("empty");
    fs::create_dir_all(&empty).unwrap();
    let empty = empty.to_string_lossy().into_owned();
    args.extend(["--source", &source, "--target-dir", &empty, "--out", "/tmp/never.wav"]);
    assert_eq!(selfvc(&args).status.code(), Some(1));
}

#[test]
fn planned_conversions_evaluate_end_to_end() {
    let p = pipeline();
    let models = p.model_args();
    let m: Vec<&str> = models.iter().map(String::as_str).collect();
    let cfg = p.s("cfg.toml");
    let manifest = p.s("corpus/manifest.jsonl");
    let mut args = vec!["--config", &cfg, "convert"];
    args.extend(&m);
    let conv = p.s("converted");
    args.extend(["--manifest", &manifest, "--out-dir", &conv]);
    ok(&args);
    assert_eq!(fs::read_dir(&conv).unwrap().count(), 4);
    let mut args = vec!["--config", &cfg, "reconstruct"];
    args.extend(&m);
    let rec = p.s("recon");
    args.extend(["--manifest", &manifest, "--out-dir", &rec]);
    ok(&args);
    assert_eq!(fs::read_dir(&rec).unwrap().count(), 9);
    let report = p.s("report");
    let out = ok(&[
        "--config", &cfg, "evaluate", "--manifest", &manifest, "--converted-dir", &conv, "--evaluator", &p.s("eval.ckpt"),
        "--reconstructions", &rec, "--out-dir", &report,
    ]);
    assert!(out.contains("sv_eer"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.p("report/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_trials"], 8);
    assert!(summary["gpe"].as_f64().unwrap().is_finite());
    assert!(summary["cer"].is_null());
    assert!(p.p("report/trials.csv").exists());
    let missing = p.s("nothing.ckpt");
    let out = selfvc(&["--config", &cfg, "evaluate", "--manifest", &manifest, "--converted-dir", &conv, "--evaluator", &missing, "--out-dir", &report]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn perturb_writes_audio_and_parameters() {
    let p = pipeline();
    let wav = fs::read_dir(p.p("corpus/wavs")).unwrap().map(|e| e.unwrap().path()).find(|x| x.extension().is_some_and(|e| e == "wav")).unwrap();
    let input = wav.to_string_lossy().into_owned();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.wav");
    let b = dir.path().join("b.wav");
    for out in [&a, &b] {
        ok(&["perturb", "--input", &input, "--out", &out.to_string_lossy(), "--seed", "3", "--transform", "g2"]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let params: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(params["composition"], "peq_pitch_formant");
    assert_ne!(fs::read(&a).unwrap(), fs::read(&wav).unwrap());
}
