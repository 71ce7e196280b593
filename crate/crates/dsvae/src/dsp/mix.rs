//! SNR-controlled additive noise mixing.

use super::Waveform;
use crate::error::{Error, Result};

/// Augmentation policy: SNR range in dB and the noise categories to draw from.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMixSpec {
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub categories: Vec<String>,
}

impl NoiseMixSpec {
    /// 3-10 dB over balanced noise/music/babble categories.
    pub fn default_range() -> Self {
        NoiseMixSpec {
            snr_db_min: 3.0,
            snr_db_max: 10.0,
            categories: vec!["noise".into(), "music".into(), "babble".into()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db_min > self.snr_db_max {
            return Err(Error::Config(format!(
                "snr_db_min {} exceeds snr_db_max {}",
                self.snr_db_min, self.snr_db_max
            )));
        }
        if self.categories.is_empty() {
            return Err(Error::Config("noise categories cannot be empty".into()));
        }
        Ok(())
    }
}

fn power(samples: &[f64]) -> f64 {
    samples.iter().map(|&v| v * v).sum::<f64>() / samples.len() as f64
}

/// `clean + g * noise` with `g` chosen so the clean-to-scaled-noise power
/// ratio equals `snr_db`. Noise is tiled/cropped to the clean length.
/// `snr_db = +inf` is the augmentation-disabled sentinel and returns the
/// clean signal unchanged.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    if snr_db == f64::INFINITY {
        return Ok(clean.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidInput(format!("snr_db {snr_db} is not finite")));
    }
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::InvalidInput(format!(
            "sample rate mismatch: clean {} Hz vs noise {} Hz",
            clean.sample_rate, noise.sample_rate
        )));
    }
    if noise.samples.is_empty() {
        return Err(Error::InvalidInput("degenerate noise: empty".into()));
    }
    let n = clean.samples.len();
    let tiled: Vec<f64> = noise.samples.iter().cycle().take(n).cloned().collect();
    let p_clean = power(&clean.samples);
    let p_noise = power(&tiled);
    if p_clean <= 0.0 {
        return Err(Error::InvalidInput("clean signal has zero power".into()));
    }
    if p_noise <= 0.0 {
        return Err(Error::InvalidInput("degenerate noise: zero power".into()));
    }
    let g = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = clean
        .samples
        .iter()
        .zip(&tiled)
        .map(|(&c, &nz)| c + g * nz)
        .collect();
    Waveform::new(samples, clean.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f64, len: usize) -> Waveform {
        let samples = (0..len)
            .map(|n| amp * (2.0 * std::f64::consts::PI * freq * n as f64 / 16000.0).sin())
            .collect();
        Waveform::new(samples, 16000).unwrap()
    }

    #[test]
    fn equal_power_zero_db_gain_is_one() {
        let clean = tone(440.0, 0.5, 16000);
        let noise = tone(440.0, 0.5, 16000); // identical power
        let mixed = mix_at_snr(&clean, &noise, 0.0).unwrap();
        // g = 1, so mixed = clean + noise exactly.
        for ((m, c), n) in mixed.samples.iter().zip(&clean.samples).zip(&noise.samples) {
            assert!((m - (c + n)).abs() < 1e-12);
        }
    }

    #[test]
    fn ten_db_gain_matches_hand_value() {
        // Equal-power signals at 10 dB: g = 10^(-1/2) = 0.31623, verified by
        // measuring the power ratio of the two addends.
        let clean = tone(300.0, 0.4, 8000);
        let noise = tone(700.0, 0.4, 8000);
        let mixed = mix_at_snr(&clean, &noise, 10.0).unwrap();
        let added: Vec<f64> = mixed
            .samples
            .iter()
            .zip(&clean.samples)
            .map(|(m, c)| m - c)
            .collect();
        let g = (power(&added) / power(&noise.samples)).sqrt();
        assert!((g - 0.31623).abs() < 1e-4, "g = {g}");
        let measured = 10.0 * (power(&clean.samples) / power(&added)).log10();
        assert!((measured - 10.0).abs() < 0.01, "measured snr {measured}");
    }

    #[test]
    fn infinite_snr_is_identity() {
        let clean = tone(440.0, 0.5, 4000);
        let noise = tone(100.0, 0.5, 4000);
        let mixed = mix_at_snr(&clean, &noise, f64::INFINITY).unwrap();
        assert_eq!(mixed.samples, clean.samples);
    }

    #[test]
    fn zero_power_noise_rejected() {
        let clean = tone(440.0, 0.5, 4000);
        let silence = Waveform::new(vec![0.0; 100], 16000).unwrap();
        let err = mix_at_snr(&clean, &silence, 5.0).unwrap_err();
        assert!(err.to_string().contains("degenerate noise"));
    }

    #[test]
    fn short_noise_is_tiled() {
        let clean = tone(440.0, 0.5, 4000);
        let noise = tone(913.0, 0.3, 333);
        let mixed = mix_at_snr(&clean, &noise, 6.0).unwrap();
        assert_eq!(mixed.samples.len(), clean.samples.len());
        let added: Vec<f64> = mixed
            .samples
            .iter()
            .zip(&clean.samples)
            .map(|(m, c)| m - c)
            .collect();
        let measured = 10.0 * (power(&clean.samples) / power(&added)).log10();
        assert!((measured - 6.0).abs() < 0.01);
    }
}
