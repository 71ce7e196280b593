//! Short-time Fourier analysis and least-squares overlap-add synthesis.
//!
//! Framing is uncentered: frame `t` covers samples `[t*hop, t*hop + win)` and
//! the frame count is `(len - win) / hop + 1`. Windowed frames are zero-padded
//! to `fft_size` before the transform.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Periodic Hann window (`w[0] = 0`), the standard choice for overlap-add.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn frame_count(len: usize, win: usize, hop: usize) -> Option<usize> {
    if len < win {
        None
    } else {
        Some((len - win) / hop + 1)
    }
}

/// Complex STFT: `T x (fft/2 + 1)` rows of non-negative-frequency bins.
pub fn stft(samples: &[f64], win: usize, hop: usize, fft_size: usize) -> Vec<Vec<Complex<f64>>> {
    let t_len = frame_count(samples.len(), win, hop).unwrap_or(0);
    let window = hann_window(win);
    let n_bins = fft_size / 2 + 1;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(fft_size);
    let mut out = Vec::with_capacity(t_len);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for t in 0..t_len {
        let start = t * hop;
        for i in 0..fft_size {
            let v = if i < win { samples[start + i] * window[i] } else { 0.0 };
            buf[i] = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..n_bins].to_vec());
    }
    out
}

/// Magnitudes of [`stft`], same layout.
pub fn stft_magnitude(samples: &[f64], win: usize, hop: usize, fft_size: usize) -> Vec<Vec<f64>> {
    stft(samples, win, hop, fft_size)
        .into_iter()
        .map(|row| row.into_iter().map(|c| c.norm()).collect())
        .collect()
}

/// Least-squares inverse STFT: windowed overlap-add divided by the summed
/// squared window. Output length is `win + (T-1)*hop`.
pub fn istft(
    spec: &[Vec<Complex<f64>>],
    win: usize,
    hop: usize,
    fft_size: usize,
) -> Vec<f64> {
    let t_len = spec.len();
    if t_len == 0 {
        return Vec::new();
    }
    let window = hann_window(win);
    let out_len = win + (t_len - 1) * hop;
    let mut num = vec![0.0; out_len];
    let mut den = vec![0.0; out_len];
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    let scale = 1.0 / fft_size as f64;
    for (t, row) in spec.iter().enumerate() {
        // Hermitian expansion of the half spectrum.
        buf[..row.len()].copy_from_slice(row);
        for k in 1..fft_size / 2 {
            buf[fft_size - k] = row[k].conj();
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..win {
            num[start + i] += buf[i].re * scale * window[i];
            den[start + i] += window[i] * window[i];
        }
    }
    let den_floor = 1e-8 * den.iter().cloned().fold(0.0, f64::max);
    num.iter()
        .zip(&den)
        .map(|(&n, &d)| if d > den_floor { n / d } else { 0.0 })
        .collect()
}
