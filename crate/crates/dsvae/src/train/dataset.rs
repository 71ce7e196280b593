//! Corpus loading, segmentation, and on-the-fly noise augmentation.
//!
//! A dataset owns the source waveforms (augmentation re-mixes and
//! re-featurizes at the waveform level), the fitted normalization statistics,
//! and the precomputed clean training segments. Speaker labels travel as
//! metadata only; nothing on any gradient path reads them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::dsp::mix::NoiseMixSpec;
use crate::dsp::{
    compute_features, mix_at_snr, read_wav, segment, FeatureConfig, Normalization, SegmentMode,
    Spectrogram, Waveform,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub waveform: Waveform,
    /// Normalized features of the full utterance.
    pub features: Spectrogram,
}

#[derive(Debug, Clone)]
pub struct TrainSegment {
    pub utt_index: usize,
    pub start_frame: usize,
    /// Clean normalized features, `seg_len x d`.
    pub features: Tensor,
}

#[derive(Debug, Clone)]
pub struct NoiseBank {
    /// Category name to clips, sorted by name for determinism.
    pub categories: Vec<(String, Vec<Waveform>)>,
}

impl NoiseBank {
    pub fn filtered(&self, wanted: &[String]) -> Result<NoiseBank> {
        let categories: Vec<_> = self
            .categories
            .iter()
            .filter(|(name, _)| wanted.iter().any(|w| w == name))
            .cloned()
            .collect();
        if categories.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no noise categories match {wanted:?}; bank has {:?}",
                self.categories.iter().map(|(n, _)| n).collect::<Vec<_>>()
            )));
        }
        Ok(NoiseBank { categories })
    }
}

pub struct Dataset {
    pub utterances: Vec<UtteranceRecord>,
    pub segments: Vec<TrainSegment>,
    /// Unique speaker ids, sorted.
    pub speakers: Vec<String>,
    /// Feature config with normalization fitted on this corpus.
    pub feature_config: FeatureConfig,
    pub seg_len: usize,
    pub noise: Option<NoiseBank>,
    /// Files skipped because they could not be read.
    pub skipped_files: usize,
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
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
    Ok(files)
}

/// Speaker id: the parent directory name when nested, otherwise the filename
/// prefix before the first underscore (`spk3_utt07.wav` -> `spk3`).
fn speaker_of(path: &Path, root: &Path) -> String {
    let parent = path.parent().unwrap_or(root);
    if parent != root {
        return parent.file_name().unwrap_or_default().to_string_lossy().into_owned();
    }
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    stem.split('_').next().unwrap_or(&stem).to_string()
}

/// Loads a corpus directory, fits normalization over it, and precomputes
/// non-overlapping training segments.
pub fn build_dataset(
    corpus_dir: &Path,
    noise_dir: Option<&Path>,
    cfg: &FeatureConfig,
    seg_len: usize,
) -> Result<Dataset> {
    cfg.validate()?;
    if seg_len == 0 {
        return Err(Error::Config("seg_len must be >= 1".into()));
    }
    let files = wav_files(corpus_dir)?;
    if files.is_empty() {
        return Err(Error::InvalidInput(format!(
            "empty corpus: no .wav files under {}",
            corpus_dir.display()
        )));
    }

    let mut raw_cfg = cfg.clone();
    raw_cfg.normalization = None;
    let mut skipped = 0usize;
    let mut loaded: Vec<(String, String, Waveform, Tensor)> = Vec::new();
    for path in &files {
        let wave = match read_wav(path) {
            Ok(w) => w,
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
                skipped += 1;
                continue;
            }
        };
        let feats = match compute_features(&wave, &raw_cfg) {
            Ok(s) => s.frames,
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
                skipped += 1;
                continue;
            }
        };
        let utt_id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let speaker = speaker_of(path, corpus_dir);
        loaded.push((utt_id, speaker, wave, feats));
    }
    if loaded.is_empty() {
        return Err(Error::InvalidInput("empty corpus: no readable utterances".into()));
    }

    // Dataset-level statistics over the training corpus only.
    let norm = Normalization::fit(loaded.iter().map(|(_, _, _, f)| f), cfg.feature_dim)?;
    let mut norm_cfg = cfg.clone();
    norm_cfg.normalization = Some(norm.clone());

    let mut utterances = Vec::with_capacity(loaded.len());
    let mut segments = Vec::new();
    let mut speakers: BTreeMap<String, ()> = BTreeMap::new();
    for (utt_id, speaker_id, waveform, mut frames) in loaded {
        norm.apply(&mut frames);
        let spec = Spectrogram { frames, config: norm_cfg.clone() };
        let utt_index = utterances.len();
        for seg in segment(&spec, seg_len, SegmentMode::Train)? {
            segments.push(TrainSegment {
                utt_index,
                start_frame: seg.start_frame,
                features: seg.frames,
            });
        }
        speakers.insert(speaker_id.clone(), ());
        utterances.push(UtteranceRecord {
            utt_id,
            speaker_id,
            waveform,
            features: spec,
        });
    }

    let noise = match noise_dir {
        Some(dir) => Some(load_noise_bank(dir)?),
        None => None,
    };

    Ok(Dataset {
        utterances,
        segments,
        speakers: speakers.into_keys().collect(),
        feature_config: norm_cfg,
        seg_len,
        noise,
        skipped_files: skipped,
    })
}

/// Noise bank layout: one subdirectory per category of WAV clips; a flat
/// directory becomes the single category "noise".
pub fn load_noise_bank(dir: &Path) -> Result<NoiseBank> {
    let mut categories: BTreeMap<String, Vec<Waveform>> = BTreeMap::new();
    let files = wav_files(dir)?;
    if files.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no noise .wav files under {}",
            dir.display()
        )));
    }
    for path in &files {
        let cat = {
            let parent = path.parent().unwrap_or(dir);
            if parent == dir {
                "noise".to_string()
            } else {
                parent.file_name().unwrap_or_default().to_string_lossy().into_owned()
            }
        };
        match read_wav(path) {
            Ok(w) => categories.entry(cat).or_default().push(w),
            Err(e) => eprintln!("warning: skipping noise {}: {e}", path.display()),
        }
    }
    if categories.is_empty() {
        return Err(Error::InvalidInput("no readable noise clips".into()));
    }
    Ok(NoiseBank {
        categories: categories.into_iter().collect(),
    })
}

/// One training batch. `augmented` equals `clean` when augmentation is off;
/// `speaker_labels` is metadata only and never reaches the loss.
#[derive(Debug, Clone)]
pub struct Batch {
    pub clean: Vec<Tensor>,
    pub augmented: Vec<Tensor>,
    pub speaker_labels: Vec<String>,
}

impl Dataset {
    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }

    /// Waveform span covered by a training segment.
    fn segment_span(&self, seg: &TrainSegment) -> (usize, usize) {
        let cfg = &self.feature_config;
        let start = seg.start_frame * cfg.hop_samples();
        let len = cfg.win_samples() + (self.seg_len - 1) * cfg.hop_samples();
        (start, len)
    }

    /// Re-extracts a segment's features from a noise-mixed copy of its
    /// source span.
    pub fn augment_segment(
        &self,
        seg: &TrainSegment,
        spec: &NoiseMixSpec,
        rng: &mut impl Rng,
    ) -> Result<Tensor> {
        let bank = self
            .noise
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("augmentation requires a noise bank".into()))?
            .filtered(&spec.categories)?;
        let utt = &self.utterances[seg.utt_index];
        let (start, len) = self.segment_span(seg);
        let clean_span = Waveform::new(
            utt.waveform.samples[start..start + len].to_vec(),
            utt.waveform.sample_rate,
        )?;

        let (_, clips) = &bank.categories[rng.gen_range(0..bank.categories.len())];
        let clip = &clips[rng.gen_range(0..clips.len())];
        let offset = rng.gen_range(0..clip.samples.len());
        let noise: Vec<f64> = clip
            .samples
            .iter()
            .cycle()
            .skip(offset)
            .take(len)
            .cloned()
            .collect();
        let noise = Waveform::new(noise, clip.sample_rate)?;
        let snr = if spec.snr_db_min == spec.snr_db_max {
            spec.snr_db_min
        } else {
            rng.gen_range(spec.snr_db_min..spec.snr_db_max)
        };
        let mixed = mix_at_snr(&clean_span, &noise, snr)?;
        let feats = compute_features(&mixed, &self.feature_config)?;
        debug_assert_eq!(feats.n_frames(), self.seg_len);
        Ok(feats.frames)
    }

    /// Uniformly sampled batch; deterministic for a fixed RNG state.
    pub fn next_batch(
        &self,
        batch_size: usize,
        augment: Option<&NoiseMixSpec>,
        rng: &mut impl Rng,
    ) -> Result<Batch> {
        if self.segments.is_empty() {
            return Err(Error::InvalidInput(
                "dataset has no training segments (all utterances shorter than seg_len?)".into(),
            ));
        }
        let indices: Vec<usize> =
            (0..batch_size).map(|_| rng.gen_range(0..self.segments.len())).collect();
        self.batch_from_indices(&indices, augment, rng)
    }

    pub fn batch_from_indices(
        &self,
        indices: &[usize],
        augment: Option<&NoiseMixSpec>,
        rng: &mut impl Rng,
    ) -> Result<Batch> {
        let mut clean = Vec::with_capacity(indices.len());
        let mut augmented = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let seg = &self.segments[i];
            clean.push(seg.features.clone());
            augmented.push(match augment {
                Some(spec) => self.augment_segment(seg, spec, rng)?,
                None => seg.features.clone(),
            });
            labels.push(self.utterances[seg.utt_index].speaker_id.clone());
        }
        Ok(Batch {
            clean,
            augmented,
            speaker_labels: labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{write_wav_pcm16, FeatureKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk_cfg() -> FeatureConfig {
        FeatureConfig {
            sample_rate: 16000,
            win_ms: 16,
            hop_ms: 8,
            fft_size: 256,
            feature_dim: 48,
            feature_kind: FeatureKind::StftMagnitude,
            normalization: None,
        }
    }

    fn write_tone(path: &Path, freq: f64, secs: f64, seed: u64) {
        use rand::prelude::*;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (16000.0 * secs) as usize;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                0.4 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()
                    + 0.01 * rng.gen_range(-1.0..1.0)
            })
            .collect();
        write_wav_pcm16(path, &Waveform::new(samples, 16000).unwrap()).unwrap();
    }

    fn make_corpus(dir: &Path, speakers: usize, utts: usize) {
        for s in 0..speakers {
            for u in 0..utts {
                let path = dir.join(format!("spk{s}_utt{u}.wav"));
                write_tone(&path, 200.0 + 60.0 * s as f64, 0.3, (s * 100 + u) as u64);
            }
        }
    }

    #[test]
    fn dataset_counts_speakers_from_filenames() {
        let dir = tempfile::tempdir().unwrap();
        make_corpus(dir.path(), 8, 3);
        let ds = build_dataset(dir.path(), None, &desk_cfg(), 20).unwrap();
        assert_eq!(ds.n_speakers(), 8);
        assert_eq!(ds.utterances.len(), 24);
        assert!(ds.feature_config.normalization.is_some());
    }

    #[test]
    fn empty_corpus_is_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(build_dataset(dir.path(), None, &desk_cfg(), 20).is_err());
    }

    #[test]
    fn short_utterance_contributes_no_training_segments() {
        let dir = tempfile::tempdir().unwrap();
        // 0.05 s -> 5 frames with the desk config, below seg_len 20.
        write_tone(&dir.path().join("a_short.wav"), 300.0, 0.05, 1);
        write_tone(&dir.path().join("b_long.wav"), 300.0, 0.4, 2);
        let ds = build_dataset(dir.path(), None, &desk_cfg(), 20).unwrap();
        let from_short = ds
            .segments
            .iter()
            .filter(|s| ds.utterances[s.utt_index].utt_id == "a_short")
            .count();
        assert_eq!(from_short, 0);
        assert!(!ds.segments.is_empty());
    }

    #[test]
    fn unreadable_file_is_skipped_with_count() {
        let dir = tempfile::tempdir().unwrap();
        make_corpus(dir.path(), 2, 2);
        std::fs::write(dir.path().join("zz_garbage.wav"), b"not a wav").unwrap();
        let ds = build_dataset(dir.path(), None, &desk_cfg(), 20).unwrap();
        assert_eq!(ds.skipped_files, 1);
        assert_eq!(ds.utterances.len(), 4);
    }

    #[test]
    fn batch_without_augmentation_is_bitwise_clean() {
        let dir = tempfile::tempdir().unwrap();
        make_corpus(dir.path(), 3, 2);
        let ds = build_dataset(dir.path(), None, &desk_cfg(), 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = ds.next_batch(6, None, &mut rng).unwrap();
        for (c, a) in batch.clean.iter().zip(&batch.augmented) {
            assert_eq!(c.data(), a.data());
        }
    }

    #[test]
    fn fixed_seed_gives_identical_batches() {
        let dir = tempfile::tempdir().unwrap();
        make_corpus(dir.path(), 3, 2);
        let ds = build_dataset(dir.path(), None, &desk_cfg(), 20).unwrap();
        let a = ds
            .next_batch(5, None, &mut ChaCha8Rng::seed_from_u64(7))
            .unwrap();
        let b = ds
            .next_batch(5, None, &mut ChaCha8Rng::seed_from_u64(7))
            .unwrap();
        for (x, y) in a.clean.iter().zip(&b.clean) {
            assert_eq!(x.data(), y.data());
        }
        assert_eq!(a.speaker_labels, b.speaker_labels);
    }

    #[test]
    fn augmented_batch_differs_and_spans_snr_range() {
        let dir = tempfile::tempdir().unwrap();
        make_corpus(dir.path(), 2, 2);
        let noise_dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(noise_dir.path().join("noise")).unwrap();
        write_tone(&noise_dir.path().join("noise/n0.wav"), 1234.0, 0.5, 9);
        let ds = build_dataset(dir.path(), Some(noise_dir.path()), &desk_cfg(), 20).unwrap();
        let spec = NoiseMixSpec {
            snr_db_min: 3.0,
            snr_db_max: 10.0,
            categories: vec!["noise".into()],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = ds.next_batch(4, Some(&spec), &mut rng).unwrap();
        for (c, a) in batch.clean.iter().zip(&batch.augmented) {
            assert_eq!(c.shape(), a.shape());
            assert!(c.data() != a.data(), "augmentation changed nothing");
        }
    }
}
