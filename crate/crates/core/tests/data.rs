use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use selfvc_core::data::*;
use selfvc_core::dsp::load_wav;
use selfvc_core::pitch::{estimate_f0, YinConfig};
use selfvc_core::Error;

/// Full default corpus, generated once per test binary.
fn corpus() -> &'static (tempfile::TempDir, Manifest) {
    static CORPUS: OnceLock<(tempfile::TempDir, Manifest)> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_corpus(&default_speakers(8, 7), &CorpusConfig { seed: 7, ..Default::default() }, dir.path()).unwrap();
        (dir, m)
    })
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn eight_speakers_by_fifty_gives_four_hundred_rows() {
    let (dir, m) = corpus();
    assert_eq!(m.records.len(), 400);
    let wavs = fs::read_dir(dir.path().join("wavs")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "wav")).count();
    assert_eq!(wavs, 400);
    let loaded = Manifest::load(&dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(loaded.records, m.records);
    assert_eq!(loaded.speakers().len(), 8);
    assert_eq!(loaded.split(Split::Test).len(), 100);
    assert_eq!(loaded.split(Split::Val).len(), 20);
    for r in &m.records {
        let stem = m.resolve(r).with_extension("");
        assert!(stem.with_extension("f0.csv").exists());
        assert!(stem.with_extension("tokens.json").exists());
        assert!(r.duration_sec >= 0.9 && r.duration_sec <= 1.7, "{}", r.duration_sec);
    }
}

#[test]
fn same_seed_is_byte_identical_and_seed_matters() {
    let cfg = CorpusConfig { utts_per_speaker: 4, n_test: 2, n_val: 1, seed: 3, ..Default::default() };
    let specs = default_speakers(3, 3);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    generate_corpus(&specs, &cfg, a.path()).unwrap();
    generate_corpus(&specs, &cfg, b.path()).unwrap();
    generate_corpus(&specs, &CorpusConfig { seed: 4, ..cfg.clone() }, c.path()).unwrap();
    let (ta, tb, tc) = (tree(a.path()), tree(b.path()), tree(c.path()));
    assert_eq!(ta.len(), 3 * 4 * 3 + 2);
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
}

#[test]
fn duplicate_and_indistinct_speakers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CorpusConfig { utts_per_speaker: 2, n_test: 1, n_val: 0, ..Default::default() };
    let mut specs = default_speakers(2, 0);
    specs[1].speaker_id = specs[0].speaker_id.clone();
    assert!(matches!(generate_corpus(&specs, &cfg, dir.path()), Err(Error::DuplicateSpeaker(_))));

    let mut near = default_speakers(2, 0);
    near[1] = SyntheticSpeakerSpec { speaker_id: "twin".into(), base_f0: near[0].base_f0 + 5.0, ..near[0].clone() };
    assert!(generate_corpus(&near, &cfg, dir.path()).is_err());

    assert!(generate_corpus(&default_speakers(1, 0), &cfg, dir.path()).is_err());
    let mut low = default_speakers(2, 0);
    low[0].base_f0 = 60.0;
    assert!(generate_corpus(&low, &cfg, dir.path()).is_err());
}

#[test]
fn manifest_round_trip_and_validation() {
    let root = Path::new("/data");
    let m = Manifest {
        records: vec![
            ManifestRecord { audio_path: "a/x.wav".into(), speaker_id: "s1".into(), duration_sec: 1.25, split: Split::Train },
            ManifestRecord { audio_path: "/abs/y.wav".into(), speaker_id: "s2".into(), duration_sec: 0.5, split: Split::Test },
        ],
        root: root.to_path_buf(),
    };
    let text = m.to_jsonl().unwrap();
    assert_eq!(Manifest::parse(&text, root).unwrap(), m);
    assert_eq!(m.resolve(&m.records[0]), Path::new("/data/a/x.wav"));
    assert_eq!(m.resolve(&m.records[1]), Path::new("/abs/y.wav"));
    assert_eq!(m.records[0].utterance_id(), "x");
    assert!(text.contains("\"split\":\"train\""));

    assert!(Manifest::parse(r#"{"audio_path":"a.wav","speaker_id":"","duration_sec":1.0,"split":"train"}"#, root).is_err());
    assert!(Manifest::parse(r#"{"audio_path":"a.wav","speaker_id":"s","duration_sec":0.0,"split":"train"}"#, root).is_err());
    assert!(Manifest::parse(r#"{"audio_path":"a.wav","speaker_id":"s","duration_sec":1.0,"split":"dev"}"#, root).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    Manifest { root: dir.path().to_path_buf(), ..m.clone() }.save(&path).unwrap();
    assert!(matches!(Manifest::load(&path), Err(Error::MissingFile(_))));
}

#[test]
fn content_hash_tracks_audio() {
    let cfg = CorpusConfig { utts_per_speaker: 2, n_test: 1, n_val: 0, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let m = generate_corpus(&default_speakers(2, 0), &cfg, dir.path()).unwrap();
    let h = m.content_hash().unwrap();
    assert_eq!(h.len(), 64);
    let p = m.resolve(&m.records[0]);
    let mut bytes = fs::read(&p).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&p, bytes).unwrap();
    assert_ne!(m.content_hash().unwrap(), h);
}

#[test]
fn sidecar_f0_matches_pitch_estimate() {
    let (_, m) = corpus();
    let (mut ok, mut total) = (0usize, 0usize);
    for r in &m.records {
        let path = m.resolve(r);
        let w = load_wav(&path, 22050).unwrap();
        let est = estimate_f0(&w, 256, &YinConfig::default()).unwrap();
        let truth = read_f0_sidecar(&path.with_extension("f0.csv")).unwrap();
        assert_eq!(truth.len(), est.len());
        for (e, g) in est.f0.iter().zip(&truth) {
            if *g > 0.0 {
                total += 1;
                if *e > 0.0 && (e - g).abs() <= 0.02 * g {
                    ok += 1;
                }
            }
        }
    }
    let rate = ok as f64 / total as f64;
    assert!(total > 10_000, "{total}");
    assert!(rate >= 0.95, "agreement {rate:.4} over {total} voiced frames");
}

#[test]
fn tokens_cover_the_whole_utterance() {
    let (_, m) = corpus();
    for r in m.records.iter().take(20) {
        let path = m.resolve(r);
        let spans: Vec<serde_json::Value> = serde_json::from_slice(&fs::read(path.with_extension("tokens.json")).unwrap()).unwrap();
        let n = load_wav(&path, 22050).unwrap().len() as u64;
        let mut pos = 0;
        for s in &spans {
            assert_eq!(s["start"].as_u64().unwrap(), pos);
            pos = s["end"].as_u64().unwrap();
        }
        assert_eq!(pos, n);
    }
}
