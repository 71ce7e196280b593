//! Noise-invariant training loop.
//!
//! Each epoch is one shuffled pass over all training segments. Posteriors are
//! computed on the (optionally noise-augmented) input while reconstruction is
//! scored against the clean features, so the latents learn to discard
//! additive noise. Per-segment gradients inside a batch are independent and
//! computed on the worker pool; reduction order is fixed, so results are
//! bit-identical regardless of thread count.

pub mod dataset;

pub use dataset::{build_dataset, load_noise_bank, Batch, Dataset, NoiseBank, TrainSegment};

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::FullConfig;
use crate::dsp::mix::NoiseMixSpec;
use crate::error::{Error, Result};
use crate::model::loss::{segment_loss_g, LossBreakdown};
use crate::model::posterior::standard_normal_like;
use crate::model::{DsvaeModel, ModelConfig};
use crate::tensor::graph::Graph;
use crate::tensor::{checkpoint, lr_for_epoch, AdamState, Tensor};
use crate::threads;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub weight_decay: f64,
    /// `None` disables augmentation; the batch's augmented view then equals
    /// the clean view bitwise.
    pub augment: Option<NoiseMixSpec>,
    pub seed: u64,
}

impl TrainConfig {
    /// Paper-scale hyper-parameters.
    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 256,
            epochs: 100,
            lr_initial: 5e-4,
            weight_decay: 1e-4,
            augment: None,
            seed: 0,
        }
    }

    /// Desk-scale defaults for synthetic-corpus experiments.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 30,
            lr_initial: 5e-4,
            weight_decay: 1e-4,
            augment: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr_initial > 0.0) {
            return Err(Error::Config("lr_initial must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// One tab-separated log row per epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl_speaker: f64,
    pub kl_content: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

impl EpochLog {
    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.3}",
            self.epoch, self.total, self.recon, self.kl_speaker, self.kl_content, self.lr,
            self.wall_seconds
        )
    }
}

pub const EPOCH_LOG_HEADER: &str = "epoch\ttotal\trecon\tkl_speaker\tkl_content\tlr\twall_seconds";

pub struct TrainOutcome {
    pub model: DsvaeModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_total: f64,
}

/// Mean loss and summed parameter gradients over one batch.
fn batch_gradients(
    model: &DsvaeModel,
    batch: &Batch,
    noise: &[(Tensor, Tensor)],
) -> Result<(Vec<Vec<f64>>, LossBreakdown)> {
    let items: Vec<(usize, &Tensor, &Tensor)> = batch
        .augmented
        .iter()
        .zip(&batch.clean)
        .enumerate()
        .map(|(i, (a, c))| (i, a, c))
        .collect();
    let per_segment: Vec<Result<(Vec<Vec<f64>>, LossBreakdown)>> = threads::pool().install(|| {
        use rayon::prelude::*;
        items
            .par_iter()
            .map(|(i, aug, clean)| {
                let (eps_s, eps_c) = &noise[*i];
                let mut g = Graph::with_params(&model.store);
                let fwd = segment_loss_g(model, &mut g, aug, clean, eps_s, eps_c)?;
                g.backward(fwd.total)?;
                Ok((g.param_grads(), fwd.breakdown))
            })
            .collect()
    });

    let b = batch.clean.len() as f64;
    let mut grads: Option<Vec<Vec<f64>>> = None;
    let mut sum = LossBreakdown { recon_nll: 0.0, kl_speaker: 0.0, kl_content: 0.0, total: 0.0 };
    for res in per_segment {
        let (g, bd) = res?;
        match &mut grads {
            None => {
                grads = Some(g);
            }
            Some(acc) => {
                for (a, gi) in acc.iter_mut().zip(&g) {
                    for (x, y) in a.iter_mut().zip(gi) {
                        *x += y;
                    }
                }
            }
        }
        sum.recon_nll += bd.recon_nll;
        sum.kl_speaker += bd.kl_speaker;
        sum.kl_content += bd.kl_content;
        sum.total += bd.total;
    }
    let mut grads = grads.expect("non-empty batch");
    for g in &mut grads {
        for v in g.iter_mut() {
            *v /= b;
        }
    }
    Ok((
        grads,
        LossBreakdown {
            recon_nll: sum.recon_nll / b,
            kl_speaker: sum.kl_speaker / b,
            kl_content: sum.kl_content / b,
            total: sum.total / b,
        },
    ))
}

/// Runs the full loop. When `out_dir` is given, a checkpoint is written per
/// epoch (`epoch_NNN.ckpt`), the lowest-total one is copied to `best.ckpt`,
/// and the epoch log goes to `train_log.tsv`. On divergence the error is
/// returned and the last good checkpoint stays on disk.
pub fn train(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if model_cfg.feature_dim != ds.feature_config.feature_dim {
        return Err(Error::Config(format!(
            "model feature_dim {} vs dataset {}",
            model_cfg.feature_dim, ds.feature_config.feature_dim
        )));
    }
    if model_cfg.seg_len != ds.seg_len {
        return Err(Error::Config(format!(
            "model seg_len {} vs dataset {}",
            model_cfg.seg_len, ds.seg_len
        )));
    }
    if ds.segments.is_empty() {
        return Err(Error::InvalidInput("dataset has no training segments".into()));
    }
    if train_cfg.augment.is_some() && ds.noise.is_none() {
        return Err(Error::Config("augmentation enabled but no noise bank loaded".into()));
    }

    let mut model = DsvaeModel::new(model_cfg.clone(), train_cfg.seed)?;
    let mut adam = AdamState::new(&model.store, train_cfg.lr_initial, train_cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let echo_cfg = FullConfig {
        model: model_cfg.clone(),
        features: ds.feature_config.clone(),
        train: train_cfg.clone(),
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut log = Vec::with_capacity(train_cfg.epochs);
    let mut best = (0usize, f64::INFINITY);
    for epoch in 0..train_cfg.epochs {
        let started = Instant::now();
        adam.learning_rate = lr_for_epoch(train_cfg.lr_initial, epoch);
        let mut order: Vec<usize> = (0..ds.segments.len()).collect();
        order.shuffle(&mut rng);

        let mut acc = LossBreakdown { recon_nll: 0.0, kl_speaker: 0.0, kl_content: 0.0, total: 0.0 };
        let mut batches = 0usize;
        for chunk in order.chunks(train_cfg.batch_size) {
            let batch = ds.batch_from_indices(chunk, train_cfg.augment.as_ref(), &mut rng)?;
            // Noise draws happen sequentially so results do not depend on
            // worker scheduling.
            let noise: Vec<(Tensor, Tensor)> = batch
                .clean
                .iter()
                .map(|x| {
                    (
                        standard_normal_like(&[1, model_cfg.speaker_dim], &mut rng),
                        standard_normal_like(&[x.rows(), model_cfg.content_dim], &mut rng),
                    )
                })
                .collect();
            let (grads, bd) = batch_gradients(&model, &batch, &noise)?;
            adam.step(&mut model.store, &grads)?;
            acc.recon_nll += bd.recon_nll;
            acc.kl_speaker += bd.kl_speaker;
            acc.kl_content += bd.kl_content;
            acc.total += bd.total;
            batches += 1;
        }
        let n = batches as f64;
        let entry = EpochLog {
            epoch,
            total: acc.total / n,
            recon: acc.recon_nll / n,
            kl_speaker: acc.kl_speaker / n,
            kl_content: acc.kl_content / n,
            lr: adam.learning_rate,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log.push(entry);

        if let Some(dir) = out_dir {
            let path = dir.join(format!("epoch_{epoch:03}.ckpt"));
            checkpoint::save(&path, &echo_cfg.render(), &model.store)?;
            if entry.total < best.1 {
                std::fs::copy(&path, dir.join("best.ckpt"))?;
            }
            let mut tsv = String::from(EPOCH_LOG_HEADER);
            tsv.push('\n');
            for e in &log {
                tsv.push_str(&e.tsv_line());
                tsv.push('\n');
            }
            std::fs::write(dir.join("train_log.tsv"), tsv)?;
        }
        if entry.total < best.1 {
            best = (epoch, entry.total);
        }
    }

    Ok(TrainOutcome {
        model,
        log,
        best_epoch: best.0,
        best_total: best.1,
    })
}

/// Loads a checkpoint back into a model; the echoed config is authoritative,
/// so no external config file is needed.
pub fn load_checkpoint(path: &Path) -> Result<(DsvaeModel, FullConfig)> {
    let (echo, store) = checkpoint::load(path)?;
    let cfg = FullConfig::parse(&echo)?;
    let model = DsvaeModel::from_store(cfg.model.clone(), store)?;
    Ok((model, cfg))
}
