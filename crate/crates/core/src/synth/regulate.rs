use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::pitch::NormalizedPitch;

/// Row indices repeating token `t` `durations[t] / delta` times.
pub fn regulate_index(durations: &[usize], delta: usize) -> Result<Vec<usize>> {
    if delta == 0 {
        return Err(Error::OutOfRange("delta must be positive".into()));
    }
    let mut idx = Vec::with_capacity(durations.iter().sum::<usize>() / delta);
    for (t, &d) in durations.iter().enumerate() {
        if d == 0 || d % delta != 0 {
            return Err(Error::OutOfRange(format!("duration {d} of token {t} is not a positive multiple of {delta}")));
        }
        idx.extend(std::iter::repeat(t).take(d / delta));
    }
    Ok(idx)
}

/// Repeats each row of `k` by its duration in units of `delta`.
pub fn duration_regulate(k: &Mat, durations: &[usize], delta: usize) -> Result<Mat> {
    if k.nrows() != durations.len() {
        return Err(Error::LengthMismatch(k.nrows(), durations.len()));
    }
    let idx = regulate_index(durations, delta)?;
    Ok(k.select(ndarray::Axis(0), &idx))
}

/// Token-level pitch: the mean of the voiced frames inside each token's span.
/// Tokens without voiced frames get 0 and a false mask. Frames past the end of
/// the contour are ignored.
pub fn token_pitch(frames: &NormalizedPitch, durations: &[usize]) -> (Vec<f64>, Vec<bool>) {
    let mut pitch = Vec::with_capacity(durations.len());
    let mut mask = Vec::with_capacity(durations.len());
    let mut start = 0;
    for &d in durations {
        let end = (start + d).min(frames.p.len());
        let (mut sum, mut n) = (0.0, 0usize);
        for i in start.min(end)..end {
            if frames.voiced[i] {
                sum += frames.p[i];
                n += 1;
            }
        }
        pitch.push(if n > 0 { sum / n as f64 } else { 0.0 });
        mask.push(n > 0);
        start += d;
    }
    (pitch, mask)
}
