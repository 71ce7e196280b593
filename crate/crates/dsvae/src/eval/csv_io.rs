//! Embedding CSV export/import and the trials file format.
//!
//! Embedding CSV: header `utt_id,speaker_id,e0..e{d-1}`, one row per
//! utterance, one file per embedding type. Floats render in shortest
//! round-trip form so a read-back reproduces the written values exactly.
//!
//! Trials file: one line per trial, space-separated `<0|1> <utt_a> <utt_b>`
//! with `1` marking a target (same-speaker) trial.

use std::path::Path;

use super::eer::{Trial, TrialLabel};
use super::{EmbeddingKind, UtteranceEmbedding};
use crate::error::{Error, Result};

pub fn write_embeddings_csv(
    path: &Path,
    embeddings: &[UtteranceEmbedding],
    kind: EmbeddingKind,
) -> Result<()> {
    if embeddings.is_empty() {
        return Err(Error::InvalidInput("no embeddings to write".into()));
    }
    let dim = match kind {
        EmbeddingKind::Speaker => embeddings[0].mu_s.len(),
        EmbeddingKind::Content => embeddings[0].mu_c.len(),
    };
    let mut out = String::from("utt_id,speaker_id");
    for i in 0..dim {
        out.push_str(&format!(",e{i}"));
    }
    out.push('\n');
    for e in embeddings {
        if e.utt_id.contains(',') || e.speaker_id.contains(',') {
            return Err(Error::InvalidInput(format!(
                "id '{}' contains a comma and cannot be written as CSV",
                e.utt_id
            )));
        }
        let v = match kind {
            EmbeddingKind::Speaker => &e.mu_s,
            EmbeddingKind::Content => &e.mu_c,
        };
        out.push_str(&e.utt_id);
        out.push(',');
        out.push_str(&e.speaker_id);
        for x in v {
            out.push(',');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads one embedding CSV back as `(utt_id, speaker_id, vector)` rows.
pub fn read_embeddings_csv(path: &Path) -> Result<Vec<(String, String, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?;
    if !header.starts_with("utt_id,speaker_id,e0") {
        return Err(Error::Format(format!(
            "{}: unexpected header '{header}'",
            path.display()
        )));
    }
    let dim = header.split(',').count() - 2;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != dim + 2 {
            return Err(Error::Format(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                i + 2,
                parts.len(),
                dim + 2
            )));
        }
        let vec: Result<Vec<f64>> = parts[2..]
            .iter()
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad float '{p}' in {}", path.display())))
            })
            .collect();
        rows.push((parts[0].to_string(), parts[1].to_string(), vec?));
    }
    if rows.is_empty() {
        return Err(Error::Format(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

pub fn write_trials(path: &Path, trials: &[Trial]) -> Result<()> {
    let mut out = String::new();
    for t in trials {
        let label = match t.label {
            TrialLabel::Target => '1',
            TrialLabel::NonTarget => '0',
        };
        out.push(label);
        out.push(' ');
        out.push_str(&t.utt_a);
        out.push(' ');
        out.push_str(&t.utt_b);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    let text = std::fs::read_to_string(path)?;
    let mut trials = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Format(format!(
                "{}: line {} is not '<0|1> <utt_a> <utt_b>'",
                path.display(),
                i + 1
            )));
        }
        let label = match parts[0] {
            "1" => TrialLabel::Target,
            "0" => TrialLabel::NonTarget,
            other => {
                return Err(Error::Format(format!(
                    "{}: line {}: label '{other}' is not 0 or 1",
                    path.display(),
                    i + 1
                )))
            }
        };
        if parts[1] == parts[2] {
            return Err(Error::Format(format!(
                "{}: line {}: trial pairs an utterance with itself",
                path.display(),
                i + 1
            )));
        }
        trials.push(Trial {
            label,
            utt_a: parts[1].to_string(),
            utt_b: parts[2].to_string(),
        });
    }
    if trials.is_empty() {
        return Err(Error::Format(format!("{}: no trials", path.display())));
    }
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_embeddings() -> Vec<UtteranceEmbedding> {
        vec![
            UtteranceEmbedding {
                utt_id: "spk0_utt0".into(),
                speaker_id: "spk0".into(),
                mu_s: vec![0.1, -0.2, 1.0 / 3.0],
                mu_c: vec![2.0, 3.0, 4.0],
            },
            UtteranceEmbedding {
                utt_id: "spk1_utt0".into(),
                speaker_id: "spk1".into(),
                mu_s: vec![-1.5, 2.5e-8, 0.0],
                mu_c: vec![0.5, -0.5, 0.25],
            },
        ]
    }

    #[test]
    fn embedding_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("speaker.csv");
        let embeds = sample_embeddings();
        write_embeddings_csv(&path, &embeds, EmbeddingKind::Speaker).unwrap();
        let rows = read_embeddings_csv(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].0, "spk0_utt0");
        assert_eq!(rows[0].1, "spk0");
        for (a, b) in rows[0].2.iter().zip(&embeds[0].mu_s) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("utt_id,speaker_id,e0,e1,e2\n"));
    }

    #[test]
    fn trials_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.txt");
        let trials = vec![
            Trial { label: TrialLabel::Target, utt_a: "a".into(), utt_b: "b".into() },
            Trial { label: TrialLabel::NonTarget, utt_a: "a".into(), utt_b: "c".into() },
        ];
        write_trials(&path, &trials).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "1 a b\n0 a c\n");
        let back = read_trials(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].label, TrialLabel::Target);
        assert_eq!(back[1].utt_b, "c");
    }

    #[test]
    fn self_trial_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "1 a a\n").unwrap();
        assert!(read_trials(&path).is_err());
    }
}
