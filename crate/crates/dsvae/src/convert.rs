//! Zero-shot voice conversion: source content + target speaker embedding.
//!
//! The converted utterance is `D(mu_S(target), Z_C(source segment k))` for
//! every source segment, stitched in order with padding trimmed, then
//! inverted to audio with Griffin-Lim. Posterior means and zero-phase
//! initialization make the whole path deterministic.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::dsp::{
    concat_segments, invert_features, read_features, segment, write_features, write_wav_pcm16,
    FeatureConfig, FeatureKind, MelFilterbank, SegmentMode, Spectrogram, Waveform,
};
use crate::error::{Error, Result};
use crate::eval::EvalUtterance;
use crate::model::DsvaeModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ConversionRequest {
    /// WAV file or DSFEAT1 feature dump.
    pub source: PathBuf,
    pub target: PathBuf,
    pub checkpoint: PathBuf,
    pub output: PathBuf,
    /// Griffin-Lim iterations (default 100).
    pub vocoder_iters: usize,
    /// Also dump the converted features in DSFEAT1 format.
    pub dump_features: Option<PathBuf>,
}

impl ConversionRequest {
    pub fn validate(&self) -> Result<()> {
        if self.source == self.output {
            return Err(Error::InvalidInput("source and output paths must differ".into()));
        }
        if self.vocoder_iters == 0 {
            return Err(Error::InvalidInput("vocoder_iters must be >= 1".into()));
        }
        Ok(())
    }
}

pub struct ConversionOutput {
    pub waveform: Waveform,
    /// Converted features in the normalized domain.
    pub spectrogram: Spectrogram,
    /// MSE between converted and source features (the padding-trimmed
    /// reconstruction error when source == target).
    pub mse: f64,
    pub segment_count: usize,
}

/// Loads an utterance for conversion: a WAV is featurized with the
/// checkpoint's config; a DSFEAT1 dump is taken as features directly.
pub fn load_conversion_input(path: &Path, cfg: &FeatureConfig) -> Result<Spectrogram> {
    let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if is_wav {
        let wave = crate::dsp::read_wav(path)?;
        crate::dsp::compute_features(&wave, cfg)
    } else {
        let frames = read_features(path)?;
        if frames.cols() != cfg.feature_dim {
            return Err(Error::shape(
                "load_conversion_input",
                format!(
                    "{}: {} feature dims, checkpoint expects {}",
                    path.display(),
                    frames.cols(),
                    cfg.feature_dim
                ),
            ));
        }
        Ok(Spectrogram { frames, config: cfg.clone() })
    }
}

/// Mean over segments of the target's speaker-posterior means.
pub fn speaker_embedding(model: &DsvaeModel, target: &Spectrogram) -> Result<Tensor> {
    let segs = segment(target, model.config.seg_len, SegmentMode::Inference)?;
    let d_s = model.config.speaker_dim;
    let mut mu = vec![0.0; d_s];
    for seg in &segs {
        let (spk, _) = model.posteriors(&seg.frames)?;
        for (acc, v) in mu.iter_mut().zip(spk.mean.data()) {
            *acc += v;
        }
    }
    for v in &mut mu {
        *v /= segs.len() as f64;
    }
    Tensor::new(vec![1, d_s], mu)
}

/// Feature-domain conversion: per-segment content means from the source,
/// decoded against a fixed speaker embedding, stitched to the source length.
pub fn convert_features(
    model: &DsvaeModel,
    source: &Spectrogram,
    mu_s: &Tensor,
) -> Result<(Tensor, usize)> {
    let segs = segment(source, model.config.seg_len, SegmentMode::Inference)?;
    let mut decoded = Vec::with_capacity(segs.len());
    for seg in &segs {
        let (_, content) = model.posteriors(&seg.frames)?;
        let frames = model.decode(mu_s, &content.mean)?;
        decoded.push(crate::dsp::segment::Segment {
            frames,
            true_len: seg.true_len,
            padded: seg.padded,
            start_frame: seg.start_frame,
        });
    }
    let stitched = concat_segments(&decoded, model.config.feature_dim)?;
    Ok((stitched, segs.len()))
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let n = a.numel() as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// In-memory conversion used by both `convert` and `reconstruct`.
pub fn convert_spectrograms(
    model: &DsvaeModel,
    cfg: &FeatureConfig,
    source: &Spectrogram,
    target: &Spectrogram,
    vocoder_iters: usize,
) -> Result<ConversionOutput> {
    if source.dim() != model.config.feature_dim || target.dim() != model.config.feature_dim {
        return Err(Error::shape(
            "convert",
            format!(
                "features {}x{} vs model feature_dim {}",
                source.dim(),
                target.dim(),
                model.config.feature_dim
            ),
        ));
    }
    let mu_s = speaker_embedding(model, target)?;
    let (frames, segment_count) = convert_features(model, source, &mu_s)?;
    let err = mse(&frames, &source.frames);
    let spec = Spectrogram { frames, config: cfg.clone() };
    let fb: Option<MelFilterbank> = match cfg.feature_kind {
        FeatureKind::Mel => Some(cfg.mel_filterbank()?),
        FeatureKind::StftMagnitude => None,
    };
    let waveform = invert_features(&spec, fb.as_ref(), vocoder_iters)?;
    Ok(ConversionOutput {
        waveform,
        spectrogram: spec,
        mse: err,
        segment_count,
    })
}

fn checkpoint_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Full file-to-file conversion: loads the checkpoint, runs the pipeline,
/// writes 16-bit PCM plus a key=value metadata sidecar (`<output>.meta`).
pub fn convert(req: &ConversionRequest) -> Result<ConversionOutput> {
    req.validate()?;
    let (model, full_cfg) = crate::train::load_checkpoint(&req.checkpoint)?;
    let cfg = &full_cfg.features;
    // Dimension compatibility is checked before any audio work.
    let source = load_conversion_input(&req.source, cfg)?;
    let target = load_conversion_input(&req.target, cfg)?;
    let out = convert_spectrograms(&model, cfg, &source, &target, req.vocoder_iters)?;
    if let Some(parent) = req.output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_wav_pcm16(&req.output, &out.waveform)?;
    if let Some(feat_path) = &req.dump_features {
        write_features(feat_path, &out.spectrogram.frames)?;
    }
    let meta = format!(
        "source={}\ntarget={}\ncheckpoint_sha256={}\nmse={}\nsegment_count={}\nvocoder_iters={}\n",
        req.source.display(),
        req.target.display(),
        checkpoint_hash(&req.checkpoint)?,
        out.mse,
        out.segment_count,
        req.vocoder_iters
    );
    let meta_path = {
        let mut s = req.output.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    };
    std::fs::write(meta_path, meta)?;
    Ok(out)
}

/// Self-conversion; the quality baseline.
pub fn reconstruct(
    model: &DsvaeModel,
    cfg: &FeatureConfig,
    utterance: &Spectrogram,
    vocoder_iters: usize,
) -> Result<ConversionOutput> {
    convert_spectrograms(model, cfg, utterance, utterance, vocoder_iters)
}

/// Given one utterance of each of two speakers, writes reconstruction plus
/// both cross-conversions as DSFEAT1 files for inspection.
pub fn double_sided_report(
    model: &DsvaeModel,
    cfg: &FeatureConfig,
    utt_a: &EvalUtterance,
    utt_b: &EvalUtterance,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mu_a = speaker_embedding(model, &utt_a.features)?;
    let mu_b = speaker_embedding(model, &utt_b.features)?;
    let (recon_a, _) = convert_features(model, &utt_a.features, &mu_a)?;
    let (recon_b, _) = convert_features(model, &utt_b.features, &mu_b)?;
    let (a_to_b, _) = convert_features(model, &utt_a.features, &mu_b)?;
    let (b_to_a, _) = convert_features(model, &utt_b.features, &mu_a)?;
    let _ = cfg;
    write_features(&out_dir.join(format!("recon_{}.feat", utt_a.utt_id)), &recon_a)?;
    write_features(&out_dir.join(format!("recon_{}.feat", utt_b.utt_id)), &recon_b)?;
    write_features(
        &out_dir.join(format!("{}_to_{}.feat", utt_a.utt_id, utt_b.utt_id)),
        &a_to_b,
    )?;
    write_features(
        &out_dir.join(format!("{}_to_{}.feat", utt_b.utt_id, utt_a.utt_id)),
        &b_to_a,
    )?;
    Ok(())
}
