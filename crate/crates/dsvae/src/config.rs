//! Key=value configuration files and the checkpoint config echo.
//!
//! One file carries model, feature, and training keys. Lines are
//! `key=value`; `#` starts a comment. Unknown keys are rejected so typos
//! fail loudly. Floats render in shortest round-trip form, so an echoed
//! config reproduces the original values exactly.

use crate::dsp::mix::NoiseMixSpec;
use crate::dsp::{FeatureConfig, FeatureKind, Normalization};
use crate::error::{Error, Result};
use crate::model::{ArchVariant, KlDirection, ModelConfig};
use crate::train::TrainConfig;

/// Ordered key=value pairs with consume-on-read semantics.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    pairs: Vec<(String, String)>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key=value, got '{raw}'",
                    lineno + 1
                )));
            };
            let key = k.trim().to_string();
            if pairs.iter().any(|(existing, _)| existing == &key) {
                return Err(Error::Config(format!("duplicate key '{key}'")));
            }
            pairs.push((key, v.trim().to_string()));
        }
        Ok(KvConfig { pairs })
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        let idx = self.pairs.iter().position(|(k, _)| k == key)?;
        Some(self.pairs.remove(idx).1)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    fn parse_with<T>(&mut self, key: &str, f: impl Fn(&str) -> Result<T>) -> Result<T> {
        let v = self.require(key)?;
        f(&v).map_err(|e| Error::Config(format!("key '{key}': {e}")))
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse::<T>()
            .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'")))
    }

    fn num_opt<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'"))),
        }
    }

    pub fn remaining_keys(&self) -> Vec<&str> {
        self.pairs.iter().map(|(k, _)| k.as_str()).collect()
    }

    pub fn reject_unknown(&self) -> Result<()> {
        if self.pairs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown keys: {}",
                self.remaining_keys().join(", ")
            )))
        }
    }
}

/// Everything a run needs: model, features, training.
#[derive(Debug, Clone)]
pub struct FullConfig {
    pub model: ModelConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
}

fn floats_to_csv(vals: &[f64]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn csv_to_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad float '{p}'")))
        })
        .collect()
}

impl FullConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvConfig::parse(text)?;

        let variant = kv.parse_with("variant", ArchVariant::parse)?;
        let kl_direction = kv.parse_with("kl_direction", KlDirection::parse)?;
        let feature_dim: usize = kv.num("feature_dim")?;
        let model = ModelConfig {
            feature_dim,
            seg_len: kv.num("seg_len")?,
            shared_dim: kv.num("shared_dim")?,
            speaker_dim: kv.num("speaker_dim")?,
            content_dim: kv.num("content_dim")?,
            variant,
            alpha: kv.num("alpha")?,
            beta: kv.num("beta")?,
            kl_direction,
            enc_hidden: kv.num("enc_hidden")?,
            enc_rnn_hidden: kv.num("enc_rnn_hidden")?,
            head_hidden: kv.num("head_hidden")?,
            dec_hidden: kv.num("dec_hidden")?,
            prior_hidden: kv.num("prior_hidden")?,
        };
        model.validate()?;

        let feature_kind = kv.parse_with("feature_kind", FeatureKind::parse)?;
        let normalization = match (kv.take("norm_mean"), kv.take("norm_std")) {
            (Some(m), Some(s)) => Some(Normalization {
                mean: csv_to_floats(&m)?,
                std: csv_to_floats(&s)?,
            }),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "norm_mean and norm_std must be given together".into(),
                ))
            }
        };
        let features = FeatureConfig {
            sample_rate: kv.num("sample_rate")?,
            win_ms: kv.num("win_ms")?,
            hop_ms: kv.num("hop_ms")?,
            fft_size: kv.num("fft_size")?,
            feature_dim,
            feature_kind,
            normalization,
        };
        features.validate()?;

        let augment_flag: Option<String> = kv.take("augment");
        let augment = match augment_flag.as_deref() {
            None | Some("false") => None,
            Some("true") => {
                let spec = NoiseMixSpec {
                    snr_db_min: kv.num_opt("snr_db_min")?.unwrap_or(3.0),
                    snr_db_max: kv.num_opt("snr_db_max")?.unwrap_or(10.0),
                    categories: match kv.take("noise_categories") {
                        Some(s) => s.split(',').map(|c| c.trim().to_string()).collect(),
                        None => NoiseMixSpec::default_range().categories,
                    },
                };
                spec.validate()?;
                Some(spec)
            }
            Some(other) => {
                return Err(Error::Config(format!("augment must be true/false, got '{other}'")))
            }
        };
        // SNR keys without augment=true are dangling.
        for leftover in ["snr_db_min", "snr_db_max", "noise_categories"] {
            if kv.take(leftover).is_some() {
                return Err(Error::Config(format!(
                    "'{leftover}' given but augment is not true"
                )));
            }
        }
        let train = TrainConfig {
            batch_size: kv.num("batch_size")?,
            epochs: kv.num("epochs")?,
            lr_initial: kv.num("lr_initial")?,
            weight_decay: kv.num("weight_decay")?,
            augment,
            seed: kv.num("seed")?,
        };
        train.validate()?;

        kv.reject_unknown()?;
        if model.seg_len == 0 {
            return Err(Error::Config("seg_len must be positive".into()));
        }
        Ok(FullConfig { model, features, train })
    }

    /// Canonical serialization; `parse(render(c))` reproduces `c` exactly.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let m = &self.model;
        let f = &self.features;
        let t = &self.train;
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        push("variant", m.variant.as_str().into());
        push("feature_dim", m.feature_dim.to_string());
        push("seg_len", m.seg_len.to_string());
        push("shared_dim", m.shared_dim.to_string());
        push("speaker_dim", m.speaker_dim.to_string());
        push("content_dim", m.content_dim.to_string());
        push("alpha", m.alpha.to_string());
        push("beta", m.beta.to_string());
        push("kl_direction", m.kl_direction.as_str().into());
        push("enc_hidden", m.enc_hidden.to_string());
        push("enc_rnn_hidden", m.enc_rnn_hidden.to_string());
        push("head_hidden", m.head_hidden.to_string());
        push("dec_hidden", m.dec_hidden.to_string());
        push("prior_hidden", m.prior_hidden.to_string());
        push("sample_rate", f.sample_rate.to_string());
        push("win_ms", f.win_ms.to_string());
        push("hop_ms", f.hop_ms.to_string());
        push("fft_size", f.fft_size.to_string());
        push("feature_kind", f.feature_kind.as_str().into());
        if let Some(n) = &f.normalization {
            push("norm_mean", floats_to_csv(&n.mean));
            push("norm_std", floats_to_csv(&n.std));
        }
        push("batch_size", t.batch_size.to_string());
        push("epochs", t.epochs.to_string());
        push("lr_initial", t.lr_initial.to_string());
        push("weight_decay", t.weight_decay.to_string());
        push("seed", t.seed.to_string());
        match &t.augment {
            None => push("augment", "false".into()),
            Some(spec) => {
                push("augment", "true".into());
                push("snr_db_min", spec.snr_db_min.to_string());
                push("snr_db_max", spec.snr_db_max.to_string());
                push("noise_categories", spec.categories.join(","));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_full() -> FullConfig {
        FullConfig {
            model: ModelConfig::desk(),
            features: FeatureConfig {
                sample_rate: 16000,
                win_ms: 16,
                hop_ms: 8,
                fft_size: 256,
                feature_dim: 64,
                feature_kind: FeatureKind::StftMagnitude,
                normalization: None,
            },
            train: TrainConfig::desk(),
        }
    }

    #[test]
    fn render_parse_round_trip() {
        let mut cfg = desk_full();
        cfg.features.normalization = Some(Normalization {
            mean: vec![0.1, -2.567891234567e-3, 1.0 / 3.0],
            std: vec![1.5, 0.25, 7.0],
        });
        cfg.features.feature_dim = 3;
        cfg.model.feature_dim = 3;
        cfg.train.augment = Some(NoiseMixSpec::default_range());
        let text = cfg.render();
        let back = FullConfig::parse(&text).unwrap();
        assert_eq!(back.render(), text);
        // Floats reproduce exactly thanks to shortest round-trip rendering.
        let n = back.features.normalization.unwrap();
        assert_eq!(n.mean[2].to_bits(), (1.0f64 / 3.0).to_bits());
    }

    #[test]
    fn unknown_key_rejected() {
        let mut text = desk_full().render();
        text.push_str("mystery_knob=42\n");
        let err = FullConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("mystery_knob"));
    }

    #[test]
    fn missing_key_names_it() {
        let text = desk_full().render().replace("alpha=", "# alpha=");
        let err = FullConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("alpha"));
    }

    #[test]
    fn duplicate_key_rejected() {
        let mut text = desk_full().render();
        text.push_str("alpha=2\n");
        assert!(FullConfig::parse(&text).is_err());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let mut text = String::from("# a comment\n\n");
        text.push_str(&desk_full().render());
        assert!(FullConfig::parse(&text).is_ok());
    }
}
