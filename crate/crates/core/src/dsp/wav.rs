use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

/// Reads a 16-bit PCM WAV file. Multi-channel files are averaged down to mono.
/// No resampling is performed: a rate other than `expected_rate` is an error.
pub fn load_wav(path: impl AsRef<Path>, expected_rate: u32) -> Result<Waveform> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedEncoding(format!(
            "{:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate != expected_rate {
        return Err(Error::SampleRateMismatch { expected: expected_rate, found: spec.sample_rate });
    }
    let channels = spec.channels.max(1) as usize;
    let raw = reader.samples::<i16>().collect::<std::result::Result<Vec<_>, _>>()?;
    let samples = raw
        .chunks(channels)
        .map(|frame| frame.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Writes mono 16-bit PCM, clipping to `[-1, 1]`.
pub fn save_wav(path: impl AsRef<Path>, wav: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &wav.samples {
        writer.write_sample(quantize(s))?;
    }
    writer.finalize()?;
    Ok(())
}

fn quantize(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_file_has_rate_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let samples: Vec<f64> = (0..22050).map(|i| 0.5 * (i as f64 * 0.05).sin()).collect();
        save_wav(&path, &Waveform::new(samples, 22050).unwrap()).unwrap();
        let w = load_wav(&path, 22050).unwrap();
        assert_eq!(w.len(), 22050);
        assert_eq!(w.sample_rate, 22050);
        assert!(w.samples.iter().all(|s| s.abs() <= 1.0));
    }

    #[test]
    fn silence_round_trips_to_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.wav");
        save_wav(&path, &Waveform::silence(1000, 22050)).unwrap();
        let w = load_wav(&path, 22050).unwrap();
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn rate_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("16k.wav");
        save_wav(&path, &Waveform::silence(1600, 16000)).unwrap();
        match load_wav(&path, 22050) {
            Err(Error::SampleRateMismatch { expected: 22050, found: 16000 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_and_float_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_wav(dir.path().join("nope.wav"), 22050), Err(Error::MissingFile(_))));

        let path = dir.path().join("float.wav");
        let spec = WavSpec { channels: 1, sample_rate: 22050, bits_per_sample: 32, sample_format: SampleFormat::Float };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(0.1f32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&path, 22050), Err(Error::UnsupportedEncoding(_))));
    }

    #[test]
    fn stereo_is_downmixed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = WavSpec { channels: 2, sample_rate: 22050, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(16384i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let wav = load_wav(&path, 22050).unwrap();
        assert_eq!(wav.len(), 10);
        assert!((wav.samples[0] - 0.25).abs() < 1e-9);
    }
}
