//! The training objective and its per-term diagnostics.
//!
//! `total = recon + alpha * kl_speaker + beta * kl_content`, where recon is
//! the mean squared error of the reconstruction against the (clean) target
//! and both KL terms are closed-form diagonal-Gaussian divergences. The two
//! KL magnitudes double as variational mutual-information estimates: sweeping
//! `beta/alpha` moves information between the speaker and content latents
//! while their sum stays roughly fixed.

use rand::Rng;

use super::posterior::{standard_normal_like, KlDirection};
use super::DsvaeModel;
use crate::error::{Error, Result};
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Per-term loss values for one batch or segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub recon_nll: f64,
    pub kl_speaker: f64,
    pub kl_content: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn validate(&self) -> Result<()> {
        if !self.total.is_finite() {
            return Err(Error::Diverged(format!("loss is not finite: {self:?}")));
        }
        if self.kl_speaker < -1e-9 || self.kl_content < -1e-9 {
            return Err(Error::Diverged(format!("negative KL term: {self:?}")));
        }
        Ok(())
    }
}

/// Batch-mean KL magnitudes (variational mutual-information estimates) and
/// reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoFlowReport {
    pub kl_speaker: f64,
    pub kl_content: f64,
    pub kl_sum: f64,
    pub recon_nll: f64,
}

impl InfoFlowReport {
    pub fn new(kl_speaker: f64, kl_content: f64, recon_nll: f64) -> Self {
        InfoFlowReport {
            kl_speaker,
            kl_content,
            kl_sum: kl_speaker + kl_content,
            recon_nll,
        }
    }
}

/// Closed-form `KL(N(m_a, e^lv_a) || N(m_b, e^lv_b))` summed over elements,
/// as graph ops: `0.5 * sum(lv_b - lv_a + e^(lv_a - lv_b) + (m_a-m_b)^2 e^(-lv_b) - 1)`.
fn kl_diag_g(
    g: &mut Graph,
    m_a: NodeId,
    lv_a: NodeId,
    m_b: NodeId,
    lv_b: NodeId,
) -> Result<NodeId> {
    let d_lv = g.sub(lv_a, lv_b)?;
    let e = g.exp(d_lv);
    let dm = g.sub(m_a, m_b)?;
    let dm2 = g.mul(dm, dm)?;
    let neg_lvb = g.scale(lv_b, -1.0);
    let inv_vb = g.exp(neg_lvb);
    let quad = g.mul(dm2, inv_vb)?;
    let s = g.add(e, quad)?;
    let s = g.sub(s, d_lv)?;
    let s = g.add_scalar(s, -1.0);
    let total = g.sum_all(s);
    Ok(g.scale(total, 0.5))
}

/// KL between the speaker posterior and the standard normal prior, direction
/// per config.
pub fn kl_speaker_g(
    g: &mut Graph,
    mean: NodeId,
    log_var: NodeId,
    direction: KlDirection,
) -> Result<NodeId> {
    let shape = g.value(mean).shape().to_vec();
    let zero_m = g.constant(Tensor::zeros(&shape));
    let zero_lv = g.constant(Tensor::zeros(&shape));
    match direction {
        KlDirection::QToP => kl_diag_g(g, mean, log_var, zero_m, zero_lv),
        KlDirection::PToQ => kl_diag_g(g, zero_m, zero_lv, mean, log_var),
    }
}

/// Sum over steps of per-step Gaussian KL between the content posterior and
/// the autoregressive prior (already unrolled to `[T, d_C]` parameters).
pub fn kl_content_g(
    g: &mut Graph,
    q_mean: NodeId,
    q_log_var: NodeId,
    p_mean: NodeId,
    p_log_var: NodeId,
    direction: KlDirection,
) -> Result<NodeId> {
    match direction {
        KlDirection::QToP => kl_diag_g(g, q_mean, q_log_var, p_mean, p_log_var),
        KlDirection::PToQ => kl_diag_g(g, p_mean, p_log_var, q_mean, q_log_var),
    }
}

/// Node handles for one segment's forward pass.
pub struct SegmentForward {
    pub total: NodeId,
    pub breakdown: LossBreakdown,
}

/// Builds the full objective for one segment on `g`.
///
/// Posteriors are computed on `x_in` (the augmented input under
/// noise-invariant training) while the reconstruction error is measured
/// against `x_target` (the clean reference).
pub fn segment_loss_g(
    model: &DsvaeModel,
    g: &mut Graph,
    x_in: &Tensor,
    x_target: &Tensor,
    eps_s: &Tensor,
    eps_c: &Tensor,
) -> Result<SegmentForward> {
    if x_in.shape() != x_target.shape() {
        return Err(Error::shape(
            "segment_loss",
            format!("input {:?} vs target {:?}", x_in.shape(), x_target.shape()),
        ));
    }
    let cfg = &model.config;
    let x = g.constant(x_in.clone());
    let w = model.encode_shared_g(g, x)?;
    let (s_mean, s_lv) = model.encode_speaker_g(g, w)?;
    let (c_mean, c_lv) = model.encode_content_g(g, w)?;

    // Reparameterized draws: z = mean + exp(lv/2) * eps.
    let z_s = {
        let e = g.constant(eps_s.clone());
        let half = g.scale(s_lv, 0.5);
        let std = g.exp(half);
        let noise = g.mul(std, e)?;
        g.add(s_mean, noise)?
    };
    let z_c = {
        let e = g.constant(eps_c.clone());
        let half = g.scale(c_lv, 0.5);
        let std = g.exp(half);
        let noise = g.mul(std, e)?;
        g.add(c_mean, noise)?
    };

    let (p_mean, p_lv) = model.prior_unroll_g(g, z_c)?;
    let x_hat = model.decode_g(g, z_s, z_c)?;

    let target = g.constant(x_target.clone());
    let diff = g.sub(x_hat, target)?;
    let sq = g.mul(diff, diff)?;
    let recon = g.mean_all(sq);

    let kls = kl_speaker_g(g, s_mean, s_lv, cfg.kl_direction)?;
    let klc = kl_content_g(g, c_mean, c_lv, p_mean, p_lv, cfg.kl_direction)?;

    let kls_w = g.scale(kls, cfg.alpha);
    let klc_w = g.scale(klc, cfg.beta);
    let partial = g.add(recon, kls_w)?;
    let total = g.add(partial, klc_w)?;

    let breakdown = LossBreakdown {
        recon_nll: g.value(recon).data()[0],
        kl_speaker: g.value(kls).data()[0],
        kl_content: g.value(klc).data()[0],
        total: g.value(total).data()[0],
    };
    breakdown.validate()?;
    Ok(SegmentForward { total, breakdown })
}

/// One-segment objective with fresh noise; the non-batched public entry.
pub fn segment_loss(
    model: &DsvaeModel,
    x: &Tensor,
    rng: &mut impl Rng,
) -> Result<LossBreakdown> {
    let cfg = &model.config;
    let eps_s = standard_normal_like(&[1, cfg.speaker_dim], rng);
    let eps_c = standard_normal_like(&[x.rows(), cfg.content_dim], rng);
    let mut g = Graph::with_params_frozen(&model.store);
    let fwd = segment_loss_g(model, &mut g, x, x, &eps_s, &eps_c)?;
    Ok(fwd.breakdown)
}

/// Deterministic diagnostics over a set of segments: posterior means stand in
/// for samples, so repeated calls agree bit-for-bit.
pub fn info_flow_report(model: &DsvaeModel, segments: &[Tensor]) -> Result<InfoFlowReport> {
    if segments.is_empty() {
        return Err(Error::InvalidInput("info_flow_report needs at least one segment".into()));
    }
    let cfg = &model.config;
    let mut kls_acc = 0.0;
    let mut klc_acc = 0.0;
    let mut recon_acc = 0.0;
    for x in segments {
        let eps_s = Tensor::zeros(&[1, cfg.speaker_dim]);
        let eps_c = Tensor::zeros(&[x.rows(), cfg.content_dim]);
        let mut g = Graph::with_params_frozen(&model.store);
        let fwd = segment_loss_g(model, &mut g, x, x, &eps_s, &eps_c)?;
        kls_acc += fwd.breakdown.kl_speaker;
        klc_acc += fwd.breakdown.kl_content;
        recon_acc += fwd.breakdown.recon_nll;
    }
    let n = segments.len() as f64;
    Ok(InfoFlowReport::new(kls_acc / n, klc_acc / n, recon_acc / n))
}
