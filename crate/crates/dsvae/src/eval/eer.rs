//! Trial scoring and equal error rate.
//!
//! Scores are cosine similarities; accepting means `score >= threshold`. The
//! EER is the point where false-accept and false-reject rates cross, linearly
//! interpolated between adjacent ROC operating points when there is no exact
//! crossing.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialLabel {
    Target,
    NonTarget,
}

/// A verification trial over two distinct utterances.
#[derive(Debug, Clone)]
pub struct Trial {
    pub label: TrialLabel,
    pub utt_a: String,
    pub utt_b: String,
}

#[derive(Debug, Clone, Copy)]
pub struct ScoredTrial {
    pub label: TrialLabel,
    pub score: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EerResult {
    /// Fraction in [0, 1].
    pub eer: f64,
    /// Decision threshold at the crossing.
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = (na * nb).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        dot / denom
    }
}

/// ROC sweep with linear interpolation at the crossing.
pub fn compute_eer(scored: &[ScoredTrial]) -> Result<EerResult> {
    let mut targets: Vec<f64> = Vec::new();
    let mut nontargets: Vec<f64> = Vec::new();
    for s in scored {
        if !s.score.is_finite() {
            return Err(Error::InvalidInput("non-finite trial score".into()));
        }
        match s.label {
            TrialLabel::Target => targets.push(s.score),
            TrialLabel::NonTarget => nontargets.push(s.score),
        }
    }
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::InvalidInput(
            "EER needs at least one target and one nontarget trial".into(),
        ));
    }
    targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nontargets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nt = targets.len() as f64;
    let nn = nontargets.len() as f64;

    // Operating points at every unique score, ascending, plus a sentinel
    // above the maximum (FAR 0, FRR 1).
    let mut thresholds: Vec<f64> = targets.iter().chain(&nontargets).cloned().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let count_ge = |sorted: &[f64], theta: f64| -> usize {
        sorted.len() - sorted.partition_point(|&v| v < theta)
    };
    let far_frr = |theta: f64| -> (f64, f64) {
        let fa = count_ge(&nontargets, theta) as f64 / nn;
        let fr = (targets.len() - count_ge(&targets, theta)) as f64 / nt;
        (fa, fr)
    };

    let mut prev_theta = thresholds[0];
    let (mut prev_far, mut prev_frr) = far_frr(prev_theta);
    if prev_far <= prev_frr {
        // Crossing at or before the lowest score.
        return Ok(EerResult {
            eer: (prev_far + prev_frr) / 2.0,
            threshold: prev_theta,
            n_target: targets.len(),
            n_nontarget: nontargets.len(),
        });
    }
    let last = *thresholds.last().unwrap();
    let sentinel = if last.abs() < 1.0 { last + 1.0 } else { last * 2.0 };
    for &theta in thresholds.iter().skip(1).chain(std::iter::once(&sentinel)) {
        let (far, frr) = far_frr(theta);
        if far <= frr {
            // Crossing between the previous point and this one.
            let d_prev = prev_far - prev_frr;
            let d_this = far - frr;
            let (eer, t) = if d_prev == d_this {
                ((far + frr) / 2.0, 1.0)
            } else {
                let t = d_prev / (d_prev - d_this);
                (prev_far + t * (far - prev_far), t)
            };
            return Ok(EerResult {
                eer,
                threshold: prev_theta + t * (theta - prev_theta),
                n_target: targets.len(),
                n_nontarget: nontargets.len(),
            });
        }
        prev_theta = theta;
        prev_far = far;
        prev_frr = frr;
    }
    unreachable!("FAR-FRR must cross by the sentinel point");
}

/// Exhaustive-threshold reference implementation: naive counting loops at
/// every candidate operating point. Kept independent of [`compute_eer`] as
/// its oracle.
pub fn compute_eer_brute_force(scored: &[ScoredTrial]) -> Result<f64> {
    let targets: Vec<f64> = scored
        .iter()
        .filter(|s| s.label == TrialLabel::Target)
        .map(|s| s.score)
        .collect();
    let nontargets: Vec<f64> = scored
        .iter()
        .filter(|s| s.label == TrialLabel::NonTarget)
        .map(|s| s.score)
        .collect();
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::InvalidInput("need both trial classes".into()));
    }
    let mut candidates: Vec<f64> = scored.iter().map(|s| s.score).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    let hi = candidates.last().unwrap() + 1.0 + candidates.last().unwrap().abs();
    candidates.push(hi);

    let mut prev: Option<(f64, f64)> = None;
    for &theta in &candidates {
        let mut fa = 0usize;
        for &n in &nontargets {
            if n >= theta {
                fa += 1;
            }
        }
        let mut fr = 0usize;
        for &t in &targets {
            if t < theta {
                fr += 1;
            }
        }
        let far = fa as f64 / nontargets.len() as f64;
        let frr = fr as f64 / targets.len() as f64;
        if far <= frr {
            return Ok(match prev {
                None => (far + frr) / 2.0,
                Some((pf, pr)) => {
                    let d_prev = pf - pr;
                    let d_this = far - frr;
                    if d_prev == d_this {
                        (far + frr) / 2.0
                    } else {
                        let t = d_prev / (d_prev - d_this);
                        pf + t * (far - pf)
                    }
                }
            });
        }
        prev = Some((far, frr));
    }
    unreachable!("sentinel guarantees a crossing");
}

#[derive(Debug, Clone, Copy)]
pub enum TrialMode {
    /// Every unordered utterance pair, labeled by speaker equality.
    AllPairs,
    /// A uniform sample of `n` trials of each label.
    Balanced(usize),
}

/// Builds trials from `(utt_id, speaker_id)` pairs.
pub fn generate_trials(
    utterances: &[(String, String)],
    mode: TrialMode,
    rng: &mut impl rand::Rng,
) -> Result<Vec<Trial>> {
    if utterances.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 utterances for trials".into()));
    }
    let speakers: std::collections::BTreeSet<&str> =
        utterances.iter().map(|(_, s)| s.as_str()).collect();
    if speakers.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 speakers for trials".into()));
    }
    let mut all = Vec::new();
    for i in 0..utterances.len() {
        for j in i + 1..utterances.len() {
            let label = if utterances[i].1 == utterances[j].1 {
                TrialLabel::Target
            } else {
                TrialLabel::NonTarget
            };
            all.push(Trial {
                label,
                utt_a: utterances[i].0.clone(),
                utt_b: utterances[j].0.clone(),
            });
        }
    }
    match mode {
        TrialMode::AllPairs => Ok(all),
        TrialMode::Balanced(n) => {
            use rand::seq::SliceRandom;
            let mut targets: Vec<Trial> =
                all.iter().filter(|t| t.label == TrialLabel::Target).cloned().collect();
            let mut nons: Vec<Trial> =
                all.iter().filter(|t| t.label == TrialLabel::NonTarget).cloned().collect();
            if targets.len() < n || nons.len() < n {
                return Err(Error::InvalidInput(format!(
                    "balanced({n}) needs {n} of each label; have {} target / {} nontarget",
                    targets.len(),
                    nons.len()
                )));
            }
            targets.shuffle(rng);
            nons.shuffle(rng);
            targets.truncate(n);
            nons.truncate(n);
            targets.extend(nons);
            Ok(targets)
        }
    }
}

/// Scores trials with cosine similarity over the selected embedding.
pub fn score_trials(
    vectors: &std::collections::BTreeMap<String, Vec<f64>>,
    trials: &[Trial],
) -> Result<Vec<ScoredTrial>> {
    let mut out = Vec::with_capacity(trials.len());
    for t in trials {
        let a = vectors
            .get(&t.utt_a)
            .ok_or_else(|| Error::MissingId(format!("utterance '{}' in trials", t.utt_a)))?;
        let b = vectors
            .get(&t.utt_b)
            .ok_or_else(|| Error::MissingId(format!("utterance '{}' in trials", t.utt_b)))?;
        out.push(ScoredTrial {
            label: t.label,
            score: cosine_similarity(a, b),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn scored(targets: &[f64], nons: &[f64]) -> Vec<ScoredTrial> {
        targets
            .iter()
            .map(|&s| ScoredTrial { label: TrialLabel::Target, score: s })
            .chain(nons.iter().map(|&s| ScoredTrial { label: TrialLabel::NonTarget, score: s }))
            .collect()
    }

    #[test]
    fn perfectly_separated_is_zero() {
        let res = compute_eer(&scored(&[0.9, 0.8, 0.7], &[0.3, 0.2, 0.1])).unwrap();
        assert_eq!(res.eer, 0.0);
    }

    #[test]
    fn fully_reversed_is_one() {
        let res = compute_eer(&scored(&[0.1, 0.2], &[0.8, 0.9])).unwrap();
        assert_eq!(res.eer, 1.0);
    }

    #[test]
    fn frozen_example_is_one_third() {
        // Brute-force sweep over all unique scores confirms 1/3 exactly.
        let s = scored(&[0.9, 0.7, 0.6], &[0.8, 0.4, 0.3]);
        let res = compute_eer(&s).unwrap();
        assert_eq!(res.eer, 1.0 / 3.0);
        assert_eq!(compute_eer_brute_force(&s).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn single_class_is_error() {
        assert!(compute_eer(&scored(&[0.5], &[])).is_err());
        assert!(compute_eer(&scored(&[], &[0.5])).is_err());
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for case in 0..300 {
            let nt = rng.gen_range(1..=100);
            let nn = rng.gen_range(1..=100);
            // Ties on purpose: quantize scores.
            let t: Vec<f64> = (0..nt)
                .map(|_| (rng.gen_range(-1.0f64..1.0) * 8.0).round() / 8.0 + 0.1)
                .collect();
            let n: Vec<f64> = (0..nn)
                .map(|_| (rng.gen_range(-1.0f64..1.0) * 8.0).round() / 8.0)
                .collect();
            let s = scored(&t, &n);
            let fast = compute_eer(&s).unwrap().eer;
            let brute = compute_eer_brute_force(&s).unwrap();
            assert!(
                (fast - brute).abs() < 1e-9,
                "case {case}: fast {fast} vs brute {brute}"
            );
        }
    }

    #[test]
    fn invariant_under_strictly_increasing_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let t: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let base = compute_eer(&scored(&t, &n)).unwrap().eer;
            let warp = |v: f64| (3.0 * v).tanh() * 2.0 + v; // strictly increasing
            let tw: Vec<f64> = t.iter().map(|&v| warp(v)).collect();
            let nw: Vec<f64> = n.iter().map(|&v| warp(v)).collect();
            let warped = compute_eer(&scored(&tw, &nw)).unwrap().eer;
            assert!((base - warped).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_basics_and_oracle() {
        let v = vec![0.3, -0.4, 0.5];
        assert!((cosine_similarity(&v, &v) - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Naive loop oracle.
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..64 {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        let oracle = dot / (na.sqrt() * nb.sqrt());
        assert!((cosine_similarity(&a, &b) - oracle).abs() < 1e-12);
    }

    #[test]
    fn all_pairs_counts() {
        let utts: Vec<(String, String)> = (0..4)
            .map(|i| (format!("u{i}"), format!("s{}", i % 2)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trials = generate_trials(&utts, TrialMode::AllPairs, &mut rng).unwrap();
        assert_eq!(trials.len(), 6); // C(4,2)
        // 2 speakers x 2 utterances each: 2 target + 4 nontarget.
        let targets = trials.iter().filter(|t| t.label == TrialLabel::Target).count();
        assert_eq!(targets, 2);
        assert_eq!(trials.len() - targets, 4);
    }

    #[test]
    fn balanced_sampling() {
        let utts: Vec<(String, String)> = (0..8)
            .map(|i| (format!("u{i}"), format!("s{}", i % 2)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trials = generate_trials(&utts, TrialMode::Balanced(5), &mut rng).unwrap();
        assert_eq!(trials.len(), 10);
        let targets = trials.iter().filter(|t| t.label == TrialLabel::Target).count();
        assert_eq!(targets, 5);
    }

    #[test]
    fn missing_id_is_reported() {
        let mut vectors = std::collections::BTreeMap::new();
        vectors.insert("a".to_string(), vec![1.0, 0.0]);
        let trials = vec![Trial {
            label: TrialLabel::Target,
            utt_a: "a".into(),
            utt_b: "ghost".into(),
        }];
        let err = score_trials(&vectors, &trials).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }
}
