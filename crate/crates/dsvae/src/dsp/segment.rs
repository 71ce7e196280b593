//! Fixed-length segmentation of feature sequences.

use super::Spectrogram;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentMode {
    /// Trailing remainder shorter than `seg_len` is dropped.
    Train,
    /// Trailing remainder is zero-padded and flagged, with its true length
    /// recorded so padding can be stripped after decoding.
    Inference,
}

#[derive(Debug, Clone)]
pub struct Segment {
    /// Always `seg_len x d`.
    pub frames: Tensor,
    /// Number of real (non-padding) frames.
    pub true_len: usize,
    pub padded: bool,
    /// Frame index of this segment's start within the source spectrogram.
    pub start_frame: usize,
}

/// Consecutive non-overlapping windows of `seg_len` frames.
pub fn segment(s: &Spectrogram, seg_len: usize, mode: SegmentMode) -> Result<Vec<Segment>> {
    if seg_len == 0 {
        return Err(Error::Config("seg_len must be >= 1".into()));
    }
    let t_total = s.frames.rows();
    let d = s.frames.cols();
    let full = t_total / seg_len;
    let mut out = Vec::with_capacity(full + 1);
    for k in 0..full {
        let start = k * seg_len;
        let data = s.frames.data()[start * d..(start + seg_len) * d].to_vec();
        out.push(Segment {
            frames: Tensor::new(vec![seg_len, d], data)?,
            true_len: seg_len,
            padded: false,
            start_frame: start,
        });
    }
    let rem = t_total - full * seg_len;
    if mode == SegmentMode::Inference && (rem > 0 || full == 0) {
        let start = full * seg_len;
        let mut data = vec![0.0; seg_len * d];
        data[..rem * d].copy_from_slice(&s.frames.data()[start * d..(start + rem) * d]);
        out.push(Segment {
            frames: Tensor::new(vec![seg_len, d], data)?,
            true_len: rem,
            padded: true,
            start_frame: start,
        });
    }
    Ok(out)
}

/// Inverse of [`segment`] in inference mode: concatenates segments in order
/// with padding stripped.
pub fn concat_segments(segments: &[Segment], d: usize) -> Result<Tensor> {
    let total: usize = segments.iter().map(|s| s.true_len).sum();
    if total == 0 {
        return Err(Error::InvalidInput("no frames to concatenate".into()));
    }
    let mut data = Vec::with_capacity(total * d);
    for seg in segments {
        if seg.frames.cols() != d {
            return Err(Error::shape(
                "concat_segments",
                format!("segment has {} cols, expected {d}", seg.frames.cols()),
            ));
        }
        data.extend_from_slice(&seg.frames.data()[..seg.true_len * d]);
    }
    Tensor::new(vec![total, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{FeatureConfig, FeatureKind};

    fn spec(t: usize, d: usize) -> Spectrogram {
        let data: Vec<f64> = (0..t * d).map(|i| i as f64 * 0.01).collect();
        Spectrogram {
            frames: Tensor::new(vec![t, d], data).unwrap(),
            config: FeatureConfig {
                sample_rate: 16000,
                win_ms: 25,
                hop_ms: 10,
                fft_size: 512,
                feature_dim: d,
                feature_kind: FeatureKind::StftMagnitude,
                normalization: None,
            },
        }
    }

    #[test]
    fn hundred_frames_make_five_segments_of_twenty() {
        let s = spec(100, 4);
        let segs = segment(&s, 20, SegmentMode::Train).unwrap();
        assert_eq!(segs.len(), 5);
        assert!(segs.iter().all(|x| !x.padded && x.true_len == 20));
    }

    #[test]
    fn exact_length_is_single_segment() {
        let s = spec(20, 4);
        let segs = segment(&s, 20, SegmentMode::Train).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].frames.data(), s.frames.data());
    }

    #[test]
    fn training_drops_remainder() {
        let s = spec(45, 4);
        let segs = segment(&s, 20, SegmentMode::Train).unwrap();
        assert_eq!(segs.len(), 2);
    }

    #[test]
    fn inference_pads_remainder_and_flags_it() {
        let s = spec(45, 4);
        let segs = segment(&s, 20, SegmentMode::Inference).unwrap();
        assert_eq!(segs.len(), 3);
        assert!(segs[2].padded);
        assert_eq!(segs[2].true_len, 5);
        // Padding region is zero.
        assert!(segs[2].frames.data()[5 * 4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_input_yields_single_padded_segment() {
        let s = spec(7, 4);
        let segs = segment(&s, 20, SegmentMode::Inference).unwrap();
        assert_eq!(segs.len(), 1);
        assert!(segs[0].padded);
        assert_eq!(segs[0].true_len, 7);
    }

    #[test]
    fn segment_then_concat_round_trips() {
        for t in [7usize, 20, 45, 100, 101] {
            let s = spec(t, 3);
            let segs = segment(&s, 20, SegmentMode::Inference).unwrap();
            let back = concat_segments(&segs, 3).unwrap();
            assert_eq!(back.data(), s.frames.data(), "t = {t}");
        }
    }
}
