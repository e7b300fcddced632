use ndarray::Array1;

use super::{ContentFrames, ContentSequence};
use crate::error::{Error, Result};
use crate::nn::Mat;

pub const DEFAULT_TAU: f64 = 0.925;

/// Cosine similarity; any zero vector compares as -1.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return -1.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Merges consecutive content vectors whose cosine similarity with the running
/// average of the current group exceeds `tau`. Each input vector spans `delta`
/// mel frames.
pub fn group_content(z: &ContentFrames, tau: f64) -> Result<ContentSequence> {
    let (t_prime, dim) = z.z.dim();
    if t_prime == 0 {
        return Err(Error::Empty("content frames"));
    }
    if !(tau > -1.0 && tau < 1.0) {
        return Err(Error::OutOfRange(format!("grouping threshold {tau} outside (-1, 1)")));
    }
    let delta = z.delta;
    let mut groups: Vec<Array1<f64>> = vec![z.z.row(0).to_owned()];
    let mut durations = vec![delta];
    let mut n = 1usize;
    for t in 1..t_prime {
        let zt = z.z.row(t);
        let last = groups.last_mut().expect("non-empty");
        if cosine(zt.as_slice().expect("contiguous"), last.as_slice().expect("contiguous")) > tau {
            let nf = n as f64;
            last.zip_mut_with(&zt, |avg, &x| *avg = (x + nf * *avg) / (nf + 1.0));
            *durations.last_mut().expect("non-empty") = delta * (n + 1);
            n += 1;
        } else {
            groups.push(zt.to_owned());
            durations.push(delta);
            n = 1;
        }
    }
    let mut out = Mat::zeros((groups.len(), dim));
    for (mut row, g) in out.rows_mut().into_iter().zip(&groups) {
        row.assign(g);
    }
    Ok(ContentSequence { z: out, durations, delta })
}

/// Averages content vectors over a given segmentation. `durations` are in mel
/// frames and must be positive multiples of `z.delta` covering every vector.
pub fn pool_content(z: &ContentFrames, durations: &[usize]) -> Result<ContentSequence> {
    let delta = z.delta;
    if durations.is_empty() {
        return Err(Error::Empty("segmentation"));
    }
    if durations.iter().any(|&d| d == 0 || d % delta != 0) {
        return Err(Error::OutOfRange(format!("durations must be positive multiples of {delta}")));
    }
    let covered: usize = durations.iter().map(|d| d / delta).sum();
    if covered != z.len() {
        return Err(Error::LengthMismatch(z.len(), covered));
    }
    let mut out = Mat::zeros((durations.len(), z.z.ncols()));
    let mut start = 0;
    for (mut row, &d) in out.rows_mut().into_iter().zip(durations) {
        let n = d / delta;
        let span = z.z.slice(ndarray::s![start..start + n, ..]);
        row.assign(&span.mean_axis(ndarray::Axis(0)).expect("non-empty span"));
        start += n;
    }
    Ok(ContentSequence { z: out, durations: durations.to_vec(), delta })
}
