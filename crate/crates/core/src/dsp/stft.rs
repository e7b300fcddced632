use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

/// Complex STFT, frames along rows and `n_fft / 2 + 1` frequency bins along columns.
pub type Spectrogram = Array2<Complex64>;

/// Periodic Hann window of `win_length` samples, zero-padded (centered) to `n_fft`.
pub fn hann_window(win_length: usize, n_fft: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_fft];
    let offset = (n_fft - win_length) / 2;
    for i in 0..win_length {
        w[offset + i] = 0.5 - 0.5 * (2.0 * PI * i as f64 / win_length as f64).cos();
    }
    w
}

/// Index into `x` with numpy-style reflect padding (edge sample not repeated).
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Center-padded STFT. Frame `t` is centered on sample `t * hop`, giving
/// `ceil(len / hop)` frames.
pub fn stft(samples: &[f64], n_fft: usize, hop: usize, window: &[f64]) -> Spectrogram {
    let n_frames = samples.len().div_ceil(hop);
    let n_freqs = n_fft / 2 + 1;
    let half = (n_fft / 2) as isize;
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut out = Array2::zeros((n_frames, n_freqs));
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..n_frames {
        let start = (t * hop) as isize - half;
        for (i, b) in buf.iter_mut().enumerate() {
            let idx = reflect_index(start + i as isize, samples.len());
            *b = Complex64::new(samples[idx] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_freqs {
            out[[t, k]] = buf[k];
        }
    }
    out
}

/// Weighted overlap-add inverse of [`stft`], trimmed to `length` samples.
pub fn istft(spec: &Spectrogram, n_fft: usize, hop: usize, window: &[f64], length: usize) -> Vec<f64> {
    let n_frames = spec.nrows();
    let n_freqs = n_fft / 2 + 1;
    let half = n_fft / 2;
    let ifft = FftPlanner::new().plan_fft_inverse(n_fft);
    let padded_len = (n_frames.saturating_sub(1)) * hop + n_fft;
    let mut acc = vec![0.0; padded_len];
    let mut norm = vec![0.0; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..n_frames {
        for k in 0..n_freqs {
            buf[k] = spec[[t, k]];
        }
        for k in n_freqs..n_fft {
            buf[k] = spec[[t, n_fft - k]].conj();
        }
        // Hermitian symmetry requires real DC and Nyquist bins.
        buf[0].im = 0.0;
        if n_fft % 2 == 0 {
            buf[n_fft / 2].im = 0.0;
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..n_fft {
            acc[start + i] += buf[i].re / n_fft as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    (0..length)
        .map(|i| {
            let j = i + half;
            if j < padded_len && norm[j] > 1e-10 {
                acc[j] / norm[j]
            } else {
                0.0
            }
        })
        .collect()
}

pub fn magnitude(spec: &Spectrogram) -> Array2<f64> {
    spec.mapv(|c| c.norm())
}
