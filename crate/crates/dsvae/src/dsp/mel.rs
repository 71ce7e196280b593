//! Triangular mel filterbank and its right pseudo-inverse.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `weights` is `d_mel x n_bins`; `pseudo_inverse` is `n_bins x d_mel` and
/// satisfies `weights . pseudo_inverse = I` (right inverse), so
/// `pseudo_inverse . weights` projects onto the filterbank's row space.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Tensor,
    pub pseudo_inverse: Tensor,
    pub n_mels: usize,
    pub n_bins: usize,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl MelFilterbank {
    pub fn new(n_mels: usize, fft_size: usize, sample_rate: u32) -> Result<Self> {
        if n_mels == 0 || fft_size == 0 || sample_rate == 0 {
            return Err(Error::Config("mel filterbank dims must be positive".into()));
        }
        let n_bins = fft_size / 2 + 1;
        let f_max = sample_rate as f64 / 2.0;
        let mel_pts: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(hz_to_mel(f_max) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mut w = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, mid, hi) = (mel_pts[m], mel_pts[m + 1], mel_pts[m + 2]);
            let row = &mut w[m * n_bins..(m + 1) * n_bins];
            for (k, slot) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                if f > lo && f < hi {
                    *slot = if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    };
                }
            }
            if row.iter().all(|&v| v == 0.0) {
                // Filter narrower than one bin: place unit weight at its peak.
                let peak = (mid / bin_hz).round() as usize;
                row[peak.min(n_bins - 1)] = 1.0;
            }
        }
        let weights = Tensor::new(vec![n_mels, n_bins], w)?;
        let pseudo_inverse = right_pseudo_inverse(&weights)?;
        Ok(MelFilterbank {
            weights,
            pseudo_inverse,
            n_mels,
            n_bins,
        })
    }

    /// Maps one linear-magnitude frame to mel magnitudes.
    pub fn apply(&self, linear: &[f64]) -> Vec<f64> {
        debug_assert_eq!(linear.len(), self.n_bins);
        let w = self.weights.data();
        (0..self.n_mels)
            .map(|m| {
                let row = &w[m * self.n_bins..(m + 1) * self.n_bins];
                row.iter().zip(linear).map(|(&a, &b)| a * b).sum()
            })
            .collect()
    }

    /// Maps mel magnitudes back to non-negative linear bins.
    pub fn invert(&self, mel: &[f64]) -> Vec<f64> {
        debug_assert_eq!(mel.len(), self.n_mels);
        let p = self.pseudo_inverse.data();
        (0..self.n_bins)
            .map(|k| {
                let row = &p[k * self.n_mels..(k + 1) * self.n_mels];
                let v: f64 = row.iter().zip(mel).map(|(&a, &b)| a * b).sum();
                v.max(0.0)
            })
            .collect()
    }
}

/// `W^T (W W^T)^-1` for a full-row-rank `W`.
fn right_pseudo_inverse(w: &Tensor) -> Result<Tensor> {
    let (m, n) = (w.rows(), w.cols());
    let wd = w.data();
    // Gram matrix G = W W^T.
    let mut g = vec![0.0; m * m];
    for i in 0..m {
        for j in i..m {
            let mut s = 0.0;
            for k in 0..n {
                s += wd[i * n + k] * wd[j * n + k];
            }
            g[i * m + j] = s;
            g[j * m + i] = s;
        }
    }
    let g_inv = invert_dense(&mut g, m).ok_or_else(|| {
        Error::InvalidInput("mel filterbank rows are linearly dependent".into())
    })?;
    // P = W^T G^{-1}, stored n x m.
    let mut p = vec![0.0; n * m];
    for k in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for i in 0..m {
                s += wd[i * n + k] * g_inv[i * m + j];
            }
            p[k * m + j] = s;
        }
    }
    Tensor::new(vec![n, m], p)
}

/// Gauss-Jordan inversion with partial pivoting; returns None if singular.
fn invert_dense(a: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).unwrap()
        })?;
        if a[pivot * n + col].abs() < 1e-12 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
                inv.swap(col * n + k, pivot * n + k);
            }
        }
        let d = a[col * n + col];
        for k in 0..n {
            a[col * n + k] /= d;
            inv[col * n + k] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                a[r * n + k] -= f * a[col * n + k];
                inv[r * n + k] -= f * inv[col * n + k];
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sum_positive() {
        let fb = MelFilterbank::new(80, 1024, 16000).unwrap();
        for m in 0..80 {
            let s: f64 = fb.weights.row(m).iter().sum();
            assert!(s > 0.0, "row {m} sums to {s}");
        }
    }

    #[test]
    fn right_inverse_is_identity() {
        let fb = MelFilterbank::new(20, 256, 16000).unwrap();
        // W . P should be I (20 x 20).
        let w = fb.weights.data();
        let p = fb.pseudo_inverse.data();
        let (m, n) = (20, 129);
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for k in 0..n {
                    s += w[i * n + k] * p[k * m + j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-8, "({i},{j}) = {s}");
            }
        }
    }

    #[test]
    fn projection_fixes_row_space() {
        // For v in the row space, P W v = v.
        let fb = MelFilterbank::new(12, 128, 8000).unwrap();
        let (m, n) = (fb.n_mels, fb.n_bins);
        let w = fb.weights.data();
        // v = W^T a for an arbitrary coefficient vector a.
        let a: Vec<f64> = (0..m).map(|i| (i as f64 * 0.37).sin() + 1.5).collect();
        let v: Vec<f64> = (0..n)
            .map(|k| (0..m).map(|i| w[i * n + k] * a[i]).sum())
            .collect();
        let mel = fb.apply(&v);
        let back = fb.invert(&mel);
        for k in 0..n {
            assert!((back[k] - v[k]).abs() < 1e-7, "bin {k}: {} vs {}", back[k], v[k]);
        }
    }
}
