//! Utterance-level embeddings, speaker-verification EER, and the beta/alpha
//! sweep.
//!
//! `mu_S(U)` is the mean over segments of the speaker-posterior means;
//! `mu_C(U)` additionally averages the per-step content means over time.
//! Posterior means (not samples) make inference deterministic.

pub mod csv_io;
pub mod eer;
pub mod sweep;
pub mod synth;

pub use eer::{
    compute_eer, compute_eer_brute_force, cosine_similarity, generate_trials, score_trials,
    EerResult, ScoredTrial, Trial, TrialLabel, TrialMode,
};
pub use sweep::{render_sweep_tsv, sweep_beta_alpha, SweepRow};
pub use synth::{synth_corpus, synth_noise_corpus, SynthCorpusSpec};

use std::collections::BTreeMap;
use std::path::Path;

use crate::dsp::{compute_features, read_wav, segment, FeatureConfig, SegmentMode, Spectrogram};
use crate::error::{Error, Result};
use crate::model::DsvaeModel;
use crate::threads;

/// Pooled per-utterance embeddings; `speaker_id` is metadata for trial
/// labeling only.
#[derive(Debug, Clone)]
pub struct UtteranceEmbedding {
    pub utt_id: String,
    pub speaker_id: String,
    pub mu_s: Vec<f64>,
    pub mu_c: Vec<f64>,
}

/// An utterance ready for embedding extraction or conversion.
#[derive(Debug, Clone)]
pub struct EvalUtterance {
    pub utt_id: String,
    pub speaker_id: String,
    pub features: Spectrogram,
}

/// Loads utterances with a fixed feature config (normalization comes from the
/// checkpoint, never refitted here).
pub fn load_utterances(dir: &Path, cfg: &FeatureConfig) -> Result<Vec<EvalUtterance>> {
    let mut files: Vec<_> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                files.push(path);
            }
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no .wav files under {}", dir.display())));
    }
    let mut out = Vec::with_capacity(files.len());
    for path in &files {
        let wave = match read_wav(path) {
            Ok(w) => w,
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
                continue;
            }
        };
        let features = compute_features(&wave, cfg)?;
        let utt_id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let speaker_id = {
            let parent = path.parent().unwrap_or(dir);
            if parent != dir {
                parent.file_name().unwrap_or_default().to_string_lossy().into_owned()
            } else {
                utt_id.split('_').next().unwrap_or(&utt_id).to_string()
            }
        };
        out.push(EvalUtterance { utt_id, speaker_id, features });
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no readable utterances".into()));
    }
    Ok(out)
}

/// Embeds one utterance: segment (inference mode, padded remainder), encode
/// each segment, pool posterior means.
pub fn embed_utterance(
    model: &DsvaeModel,
    utt: &EvalUtterance,
) -> Result<UtteranceEmbedding> {
    let segs = segment(&utt.features, model.config.seg_len, SegmentMode::Inference)?;
    if segs.iter().any(|s| s.padded) {
        eprintln!(
            "note: utterance '{}' has a padded segment ({} frames short)",
            utt.utt_id,
            model.config.seg_len - segs.last().unwrap().true_len
        );
    }
    let d_s = model.config.speaker_dim;
    let d_c = model.config.content_dim;
    let mut mu_s = vec![0.0; d_s];
    let mut mu_c = vec![0.0; d_c];
    for seg in &segs {
        let (spk, cnt) = model.posteriors(&seg.frames)?;
        for (acc, v) in mu_s.iter_mut().zip(spk.mean.data()) {
            *acc += v;
        }
        // Mean over time of the per-step content means.
        let t_len = cnt.mean.rows();
        for t in 0..t_len {
            for (acc, v) in mu_c.iter_mut().zip(cnt.mean.row(t)) {
                *acc += v / t_len as f64;
            }
        }
    }
    let k = segs.len() as f64;
    for v in &mut mu_s {
        *v /= k;
    }
    for v in &mut mu_c {
        *v /= k;
    }
    Ok(UtteranceEmbedding {
        utt_id: utt.utt_id.clone(),
        speaker_id: utt.speaker_id.clone(),
        mu_s,
        mu_c,
    })
}

/// Embeds a batch of utterances on the worker pool (order preserved).
pub fn extract_embeddings(
    model: &DsvaeModel,
    utterances: &[EvalUtterance],
) -> Result<Vec<UtteranceEmbedding>> {
    threads::pool().install(|| {
        use rayon::prelude::*;
        utterances.par_iter().map(|u| embed_utterance(model, u)).collect()
    })
}

/// Which pooled embedding a speaker-verification run scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    Speaker,
    Content,
}

impl EmbeddingKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EmbeddingKind::Speaker => "speaker",
            EmbeddingKind::Content => "content",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "speaker" => Ok(EmbeddingKind::Speaker),
            "content" => Ok(EmbeddingKind::Content),
            other => Err(Error::Config(format!("unknown embedding kind '{other}'"))),
        }
    }
}

pub fn embedding_map(
    embeddings: &[UtteranceEmbedding],
    kind: EmbeddingKind,
) -> BTreeMap<String, Vec<f64>> {
    embeddings
        .iter()
        .map(|e| {
            let v = match kind {
                EmbeddingKind::Speaker => e.mu_s.clone(),
                EmbeddingKind::Content => e.mu_c.clone(),
            };
            (e.utt_id.clone(), v)
        })
        .collect()
}

/// All-pairs EER over one embedding kind.
pub fn eer_over_embeddings(
    embeddings: &[UtteranceEmbedding],
    kind: EmbeddingKind,
) -> Result<EerResult> {
    let utts: Vec<(String, String)> = embeddings
        .iter()
        .map(|e| (e.utt_id.clone(), e.speaker_id.clone()))
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let trials = generate_trials(&utts, TrialMode::AllPairs, &mut rng)?;
    let scored = score_trials(&embedding_map(embeddings, kind), &trials)?;
    compute_eer(&scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchVariant, KlDirection, ModelConfig};
    use crate::tensor::Tensor;

    fn tiny_model() -> DsvaeModel {
        let cfg = ModelConfig {
            feature_dim: 8,
            seg_len: 4,
            shared_dim: 6,
            speaker_dim: 3,
            content_dim: 3,
            variant: ArchVariant::TimitMlp,
            alpha: 1.0,
            beta: 1.0,
            kl_direction: KlDirection::QToP,
            enc_hidden: 4,
            enc_rnn_hidden: 4,
            head_hidden: 4,
            dec_hidden: 6,
            prior_hidden: 4,
        };
        DsvaeModel::new(cfg, 42).unwrap()
    }

    fn utt_with(frames: Tensor) -> EvalUtterance {
        EvalUtterance {
            utt_id: "u0".into(),
            speaker_id: "s0".into(),
            features: Spectrogram {
                frames,
                config: crate::dsp::FeatureConfig {
                    sample_rate: 16000,
                    win_ms: 16,
                    hop_ms: 8,
                    fft_size: 256,
                    feature_dim: 8,
                    feature_kind: crate::dsp::FeatureKind::StftMagnitude,
                    normalization: None,
                },
            },
        }
    }

    #[test]
    fn single_segment_embedding_equals_posterior_mean() {
        let model = tiny_model();
        let frames = Tensor::new(vec![4, 8], (0..32).map(|i| (i as f64 * 0.1).sin()).collect())
            .unwrap();
        let utt = utt_with(frames.clone());
        let emb = embed_utterance(&model, &utt).unwrap();
        let (spk, _) = model.posteriors(&frames).unwrap();
        for (a, b) in emb.mu_s.iter().zip(spk.mean.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn two_segment_embedding_is_arithmetic_mean() {
        let model = tiny_model();
        let frames = Tensor::new(vec![8, 8], (0..64).map(|i| (i as f64 * 0.07).cos()).collect())
            .unwrap();
        let utt = utt_with(frames.clone());
        let emb = embed_utterance(&model, &utt).unwrap();
        let seg1 = Tensor::new(vec![4, 8], frames.data()[..32].to_vec()).unwrap();
        let seg2 = Tensor::new(vec![4, 8], frames.data()[32..].to_vec()).unwrap();
        let (p1, _) = model.posteriors(&seg1).unwrap();
        let (p2, _) = model.posteriors(&seg2).unwrap();
        for i in 0..3 {
            let expect = (p1.mean.data()[i] + p2.mean.data()[i]) / 2.0;
            assert!((emb.mu_s[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn embedding_dims_follow_config() {
        let model = tiny_model();
        let frames = Tensor::zeros(&[4, 8]);
        let emb = embed_utterance(&model, &utt_with(frames)).unwrap();
        assert_eq!(emb.mu_s.len(), 3);
        assert_eq!(emb.mu_c.len(), 3);
    }

    #[test]
    fn duplicating_segments_leaves_pooled_embeddings_unchanged() {
        let model = tiny_model();
        let frames = Tensor::new(vec![8, 8], (0..64).map(|i| (i as f64 * 0.11).sin()).collect())
            .unwrap();
        let doubled = {
            let mut d = frames.data().to_vec();
            d.extend_from_slice(frames.data());
            Tensor::new(vec![16, 8], d).unwrap()
        };
        let a = embed_utterance(&model, &utt_with(frames)).unwrap();
        let b = embed_utterance(&model, &utt_with(doubled)).unwrap();
        for (x, y) in a.mu_s.iter().zip(&b.mu_s) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in a.mu_c.iter().zip(&b.mu_c) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
