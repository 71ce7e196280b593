//! Audio I/O, feature extraction and inversion, segmentation, noise mixing.
//!
//! Features are log-magnitude (floor 1e-5) STFT or mel spectrograms with
//! optional dataset-level per-bin mean/stddev normalization. All functions
//! here are pure on immutable inputs and safe to call from many threads.

pub mod feat_io;
pub mod griffin_lim;
pub mod mel;
pub mod mix;
pub mod segment;
pub mod stft;
pub mod wav;

pub use feat_io::{read_features, write_features};
pub use griffin_lim::{griffin_lim, spectral_relative_error, GriffinLimResult};
pub use mel::MelFilterbank;
pub use mix::mix_at_snr;
pub use segment::{concat_segments, segment, Segment, SegmentMode};
pub use wav::{read_wav, write_wav_f32, write_wav_pcm16};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Magnitudes below this are clipped before the log.
pub const LOG_FLOOR: f64 = 1e-5;

/// Mono audio in nominal `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample_rate must be positive".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("waveform contains NaN/Inf samples".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    StftMagnitude,
    Mel,
}

impl FeatureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureKind::StftMagnitude => "stft_magnitude",
            FeatureKind::Mel => "mel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stft_magnitude" => Ok(FeatureKind::StftMagnitude),
            "mel" => Ok(FeatureKind::Mel),
            other => Err(Error::Config(format!("unknown feature_kind '{other}'"))),
        }
    }
}

/// Dataset-level per-bin statistics applied after the log.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Fits per-bin mean/stddev over rows of un-normalized log features.
    pub fn fit<'a>(frames: impl Iterator<Item = &'a Tensor>, dim: usize) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        for f in frames {
            if f.cols() != dim {
                return Err(Error::shape(
                    "Normalization::fit",
                    format!("{} cols, expected {dim}", f.cols()),
                ));
            }
            for r in 0..f.rows() {
                for (c, v) in f.row(r).iter().enumerate() {
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
            }
            count += f.rows();
        }
        if count == 0 {
            return Err(Error::InvalidInput("no frames to fit normalization".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let std: Vec<f64> = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| ((sq / count as f64 - m * m).max(0.0)).sqrt().max(1e-8))
            .collect();
        Ok(Normalization { mean, std })
    }

    pub fn apply(&self, frames: &mut Tensor) {
        let d = frames.cols();
        debug_assert_eq!(d, self.mean.len());
        let data = frames.data_mut();
        for (i, v) in data.iter_mut().enumerate() {
            let c = i % d;
            *v = (*v - self.mean[c]) / self.std[c];
        }
    }

    pub fn unapply(&self, frames: &mut Tensor) {
        let d = frames.cols();
        let data = frames.data_mut();
        for (i, v) in data.iter_mut().enumerate() {
            let c = i % d;
            *v = *v * self.std[c] + self.mean[c];
        }
    }
}

/// Framing and feature-space configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub win_ms: u32,
    pub hop_ms: u32,
    /// Power of two, at least the window length in samples.
    pub fft_size: usize,
    pub feature_dim: usize,
    pub feature_kind: FeatureKind,
    pub normalization: Option<Normalization>,
}

impl FeatureConfig {
    /// 200-dim STFT features, 25ms/10ms at 16 kHz.
    pub fn stft_16k_200() -> Self {
        FeatureConfig {
            sample_rate: 16000,
            win_ms: 25,
            hop_ms: 10,
            fft_size: 512,
            feature_dim: 200,
            feature_kind: FeatureKind::StftMagnitude,
            normalization: None,
        }
    }

    /// 80-dim mel features, 64ms/16ms at 16 kHz.
    pub fn mel_16k_80() -> Self {
        FeatureConfig {
            sample_rate: 16000,
            win_ms: 64,
            hop_ms: 16,
            fft_size: 1024,
            feature_dim: 80,
            feature_kind: FeatureKind::Mel,
            normalization: None,
        }
    }

    pub fn win_samples(&self) -> usize {
        (self.sample_rate as usize * self.win_ms as usize) / 1000
    }

    pub fn hop_samples(&self) -> usize {
        (self.sample_rate as usize * self.hop_ms as usize) / 1000
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if self.hop_ms == 0 || self.win_ms == 0 {
            return Err(Error::Config("win_ms and hop_ms must be positive".into()));
        }
        if self.hop_ms > self.win_ms {
            return Err(Error::Config(format!(
                "hop_ms {} exceeds win_ms {}",
                self.hop_ms, self.win_ms
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::Config(format!("fft_size {} is not a power of two", self.fft_size)));
        }
        if self.fft_size < self.win_samples() {
            return Err(Error::Config(format!(
                "fft_size {} shorter than window ({} samples)",
                self.fft_size,
                self.win_samples()
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.feature_kind == FeatureKind::StftMagnitude && self.feature_dim > self.n_bins() {
            return Err(Error::Config(format!(
                "feature_dim {} exceeds fft_size/2+1 = {}",
                self.feature_dim,
                self.n_bins()
            )));
        }
        if let Some(n) = &self.normalization {
            if n.mean.len() != self.feature_dim || n.std.len() != self.feature_dim {
                return Err(Error::Config("normalization stats do not match feature_dim".into()));
            }
        }
        Ok(())
    }

    /// The standard mel filterbank implied by this config.
    pub fn mel_filterbank(&self) -> Result<MelFilterbank> {
        MelFilterbank::new(self.feature_dim, self.fft_size, self.sample_rate)
    }
}

/// Time-major matrix of normalized log-magnitude features.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub frames: Tensor,
    pub config: FeatureConfig,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// Waveform to normalized log-magnitude features.
///
/// The frame count is `(len - win) / hop + 1`; an input shorter than one
/// window is an error.
pub fn compute_features(w: &Waveform, cfg: &FeatureConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::InvalidInput(format!(
            "waveform rate {} Hz does not match config rate {} Hz",
            w.sample_rate, cfg.sample_rate
        )));
    }
    if w.samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("waveform contains NaN/Inf samples".into()));
    }
    let win = cfg.win_samples();
    let hop = cfg.hop_samples();
    if w.samples.len() < win {
        return Err(Error::InvalidInput(format!(
            "input too short: {} samples, window is {win}",
            w.samples.len()
        )));
    }
    let mags = stft::stft_magnitude(&w.samples, win, hop, cfg.fft_size);
    let mut frames = match cfg.feature_kind {
        FeatureKind::StftMagnitude => {
            let rows: Vec<Vec<f64>> = mags
                .iter()
                .map(|row| {
                    row[..cfg.feature_dim]
                        .iter()
                        .map(|&m| m.max(LOG_FLOOR).ln())
                        .collect()
                })
                .collect();
            Tensor::from_rows(&rows)?
        }
        FeatureKind::Mel => {
            let fb = cfg.mel_filterbank()?;
            let linear = Tensor::from_rows(&mags)?;
            mel_project(&linear, &fb)?
        }
    };
    if let Some(n) = &cfg.normalization {
        n.apply(&mut frames);
    }
    Ok(Spectrogram { frames, config: cfg.clone() })
}

/// Projects linear magnitudes (`T x n_bins`) through the filterbank and takes
/// the floored log: `log(max(W x, 1e-5))`.
pub fn mel_project(linear_mag: &Tensor, fb: &MelFilterbank) -> Result<Tensor> {
    if linear_mag.rank() != 2 || linear_mag.cols() != fb.n_bins {
        return Err(Error::shape(
            "mel_project",
            format!("input {:?}, filterbank expects {} bins", linear_mag.shape(), fb.n_bins),
        ));
    }
    let rows: Vec<Vec<f64>> = (0..linear_mag.rows())
        .map(|t| {
            fb.apply(linear_mag.row(t))
                .into_iter()
                .map(|v| v.max(LOG_FLOOR).ln())
                .collect()
        })
        .collect();
    Tensor::from_rows(&rows)
}

/// Features back to a waveform: denormalize, exponentiate, lift mel features
/// through the filterbank pseudo-inverse, then Griffin-Lim. The output is
/// trimmed/padded to exactly `T * hop` samples.
pub fn invert_features(
    s: &Spectrogram,
    fb: Option<&MelFilterbank>,
    gl_iters: usize,
) -> Result<Waveform> {
    let cfg = &s.config;
    cfg.validate()?;
    if !s.frames.is_finite() {
        return Err(Error::InvalidInput("spectrogram contains NaN/Inf".into()));
    }
    let mut feats = s.frames.clone();
    if let Some(n) = &cfg.normalization {
        n.unapply(&mut feats);
    }
    let t_len = feats.rows();
    let n_bins = cfg.n_bins();
    let mut mag = vec![0.0; t_len * n_bins];
    match cfg.feature_kind {
        FeatureKind::StftMagnitude => {
            for t in 0..t_len {
                for (c, &v) in feats.row(t).iter().enumerate() {
                    mag[t * n_bins + c] = v.exp();
                }
                // Bins above feature_dim stay zero.
            }
        }
        FeatureKind::Mel => {
            let fb = fb.ok_or_else(|| {
                Error::InvalidInput("mel features need a filterbank to invert".into())
            })?;
            if fb.n_mels != cfg.feature_dim || fb.n_bins != n_bins {
                return Err(Error::shape(
                    "invert_features",
                    format!(
                        "filterbank {}x{} vs config {}x{}",
                        fb.n_mels, fb.n_bins, cfg.feature_dim, n_bins
                    ),
                ));
            }
            for t in 0..t_len {
                let mel: Vec<f64> = feats.row(t).iter().map(|&v| v.exp()).collect();
                let lin = fb.invert(&mel);
                mag[t * n_bins..(t + 1) * n_bins].copy_from_slice(&lin);
            }
        }
    }
    let mag = Tensor::new(vec![t_len, n_bins], mag)?;
    let res = griffin_lim(&mag, cfg, gl_iters)?;
    let mut samples = res.waveform.samples;
    samples.resize(t_len * cfg.hop_samples(), 0.0);
    Waveform::new(samples, cfg.sample_rate)
}
