use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub audio_path: String,
    pub speaker_id: String,
    pub duration_sec: f64,
    pub split: Split,
}

impl ManifestRecord {
    /// Identifier derived from the file stem.
    pub fn utterance_id(&self) -> String {
        Path::new(&self.audio_path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

/// JSON-lines dataset index. Relative audio paths resolve against `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub root: PathBuf,
}

impl Manifest {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Config(format!("manifest line {}: {e}", i + 1)))?;
            if r.speaker_id.is_empty() {
                return Err(Error::Config(format!("manifest line {}: empty speaker_id", i + 1)));
            }
            if !(r.duration_sec > 0.0) {
                return Err(Error::Config(format!("manifest line {}: duration must be positive", i + 1)));
            }
            records.push(r);
        }
        Ok(Self { records, root: root.to_path_buf() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    /// Loads a manifest; audio paths resolve relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut text = String::new();
        for line in BufReader::new(fs::File::open(path)?).lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, &root)?;
        for r in &m.records {
            let p = m.resolve(r);
            if !p.exists() {
                return Err(Error::MissingFile(p));
            }
        }
        Ok(m)
    }

    pub fn resolve(&self, r: &ManifestRecord) -> PathBuf {
        let p = Path::new(&r.audio_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Speaker ids in first-appearance order.
    pub fn speakers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.speaker_id) {
                out.push(r.speaker_id.clone());
            }
        }
        out
    }

    /// SHA-256 over the manifest text and every referenced audio file.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.to_jsonl()?.as_bytes());
        for r in &self.records {
            h.update(fs::read(self.resolve(r))?);
        }
        Ok(hex::encode(h.finalize()))
    }
}
