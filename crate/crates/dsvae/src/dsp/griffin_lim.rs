//! Griffin-Lim phase reconstruction by alternating projection.

use rustfft::num_complex::Complex;

use super::stft::{istft, stft};
use super::{FeatureConfig, Waveform};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub struct GriffinLimResult {
    pub waveform: Waveform,
    /// `||  |STFT(x_k)| - mag ||_F` measured at each iteration; non-increasing.
    pub objectives: Vec<f64>,
}

/// Reconstructs a waveform from a `T x n_bins` linear magnitude spectrogram.
/// The initial phase is all-zero, so the result is deterministic.
pub fn griffin_lim(mag: &Tensor, cfg: &FeatureConfig, iters: usize) -> Result<GriffinLimResult> {
    if iters == 0 {
        return Err(Error::InvalidInput("griffin_lim needs at least 1 iteration".into()));
    }
    let n_bins = cfg.n_bins();
    if mag.rank() != 2 || mag.cols() != n_bins {
        return Err(Error::shape(
            "griffin_lim",
            format!("magnitude {:?}, expected [T x {n_bins}]", mag.shape()),
        ));
    }
    if mag.data().iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::InvalidInput(
            "griffin_lim magnitudes must be finite and non-negative".into(),
        ));
    }
    let (win, hop, fft) = (cfg.win_samples(), cfg.hop_samples(), cfg.fft_size);
    let t_len = mag.rows();

    // Zero-phase initialization.
    let mut spec: Vec<Vec<Complex<f64>>> = (0..t_len)
        .map(|t| mag.row(t).iter().map(|&m| Complex::new(m, 0.0)).collect())
        .collect();
    let mut x = istft(&spec, win, hop, fft);
    let mut objectives = Vec::with_capacity(iters);
    for _ in 0..iters {
        let s = stft(&x, win, hop, fft);
        let mut obj = 0.0;
        for (t, row) in s.iter().enumerate() {
            let target = mag.row(t);
            for (k, c) in row.iter().enumerate() {
                let norm = c.norm();
                let d = norm - target[k];
                obj += d * d;
                spec[t][k] = if norm > 0.0 {
                    c * (target[k] / norm)
                } else {
                    Complex::new(target[k], 0.0)
                };
            }
        }
        objectives.push(obj.sqrt());
        x = istft(&spec, win, hop, fft);
    }
    Ok(GriffinLimResult {
        waveform: Waveform::new(x, cfg.sample_rate)?,
        objectives,
    })
}

/// Final relative spectral error `||  |STFT(x)| - mag ||_F / ||mag||_F`.
pub fn spectral_relative_error(w: &Waveform, mag: &Tensor, cfg: &FeatureConfig) -> f64 {
    let s = stft(&w.samples, cfg.win_samples(), cfg.hop_samples(), cfg.fft_size);
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, row) in s.iter().enumerate().take(mag.rows()) {
        let target = mag.row(t);
        for (k, c) in row.iter().enumerate() {
            let d = c.norm() - target[k];
            num += d * d;
            den += target[k] * target[k];
        }
    }
    (num / den.max(1e-300)).sqrt()
}
