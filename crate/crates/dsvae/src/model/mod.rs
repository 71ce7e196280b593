//! The disentangled sequential VAE.
//!
//! A segment `X` (T x d features) passes through a shared encoder to a hidden
//! sequence `W`; a speaker encoder pools `W` over time into a single Gaussian
//! posterior `q(Z_S|X)` and a content encoder produces a per-step posterior
//! `q(Z_C|X)`. The speaker prior is standard normal; the content prior is an
//! autoregressive LSTM conditioned on the sampled latents. Decoding
//! broadcast-concatenates `Z_S` onto every step of `Z_C`.

pub mod loss;
pub mod posterior;

pub use loss::{segment_loss, InfoFlowReport, LossBreakdown};
pub use posterior::{
    kl_diag, kl_vs_standard_normal, reparameterize, sample_posterior, GaussianPosterior,
    KlDirection, LatentSample, LOG_VAR_CLAMP,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::layers::{instance_norm, BiLstm, Conv1d, Linear, LstmCell, Mlp, Rnn};
use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchVariant {
    /// Per-frame MLP shared encoder, MLP/BiLSTM decoder.
    TimitMlp,
    /// Convolutional shared encoder with instance normalization,
    /// convolutional/recurrent decoder.
    VctkConv,
}

impl ArchVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArchVariant::TimitMlp => "timit_mlp",
            ArchVariant::VctkConv => "vctk_conv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "timit_mlp" => Ok(ArchVariant::TimitMlp),
            "vctk_conv" => Ok(ArchVariant::VctkConv),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub seg_len: usize,
    /// Output width of the shared encoder.
    pub shared_dim: usize,
    pub speaker_dim: usize,
    pub content_dim: usize,
    pub variant: ArchVariant,
    pub alpha: f64,
    pub beta: f64,
    pub kl_direction: KlDirection,
    /// BiLSTM hidden size in the speaker/content encoders (2 layers).
    pub enc_hidden: usize,
    /// Recurrent layer after the BiLSTM stack.
    pub enc_rnn_hidden: usize,
    /// Hidden width of the posterior head MLPs.
    pub head_hidden: usize,
    pub dec_hidden: usize,
    pub prior_hidden: usize,
}

impl ModelConfig {
    /// Paper-scale STFT configuration (hidden 512, d_S = d_C = 64).
    pub fn timit_paper() -> Self {
        ModelConfig {
            feature_dim: 200,
            seg_len: 20,
            shared_dim: 256,
            speaker_dim: 64,
            content_dim: 64,
            variant: ArchVariant::TimitMlp,
            alpha: 1.0,
            beta: 20.0,
            kl_direction: KlDirection::QToP,
            enc_hidden: 512,
            enc_rnn_hidden: 512,
            head_hidden: 512,
            dec_hidden: 256,
            prior_hidden: 512,
        }
    }

    /// Paper-scale mel configuration (convolutional variant).
    pub fn vctk_paper() -> Self {
        ModelConfig {
            feature_dim: 80,
            seg_len: 100,
            shared_dim: 512,
            speaker_dim: 64,
            content_dim: 64,
            variant: ArchVariant::VctkConv,
            alpha: 0.01,
            beta: 10.0,
            kl_direction: KlDirection::QToP,
            enc_hidden: 512,
            enc_rnn_hidden: 512,
            head_hidden: 512,
            dec_hidden: 512,
            prior_hidden: 512,
        }
    }

    /// Small dimensions for desk-scale experiments on synthetic corpora.
    pub fn desk() -> Self {
        ModelConfig {
            feature_dim: 64,
            seg_len: 20,
            shared_dim: 48,
            speaker_dim: 16,
            content_dim: 16,
            variant: ArchVariant::TimitMlp,
            alpha: 0.02,
            beta: 0.2,
            kl_direction: KlDirection::QToP,
            enc_hidden: 32,
            enc_rnn_hidden: 32,
            head_hidden: 32,
            dec_hidden: 48,
            prior_hidden: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("feature_dim", self.feature_dim),
            ("seg_len", self.seg_len),
            ("shared_dim", self.shared_dim),
            ("speaker_dim", self.speaker_dim),
            ("content_dim", self.content_dim),
            ("enc_hidden", self.enc_hidden),
            ("enc_rnn_hidden", self.enc_rnn_hidden),
            ("head_hidden", self.head_hidden),
            ("dec_hidden", self.dec_hidden),
            ("prior_hidden", self.prior_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::Config("alpha and beta cannot both be zero".into()));
        }
        Ok(())
    }
}

/// Shared encoder: frames to the hidden sequence `W`.
#[derive(Debug, Clone)]
enum SharedEncoder {
    Mlp(Mlp),
    Conv(Vec<(Conv1d, Linear)>),
}

/// BiLSTM stack plus recurrent layer common to both posterior encoders.
#[derive(Debug, Clone)]
struct RecurrentTrunk {
    bilstm: BiLstm,
    rnn: Rnn,
}

impl RecurrentTrunk {
    fn forward(&self, g: &mut Graph, w: NodeId) -> Result<NodeId> {
        let h = self.bilstm.forward(g, w)?;
        self.rnn.forward(g, h)
    }
}

#[derive(Debug, Clone)]
struct PosteriorHead {
    trunk: Linear,
    mean: Linear,
    log_var: Linear,
}

impl PosteriorHead {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Self {
        PosteriorHead {
            trunk: Linear::new(store, rng, &format!("{name}.trunk"), input_dim, hidden),
            mean: Linear::new(store, rng, &format!("{name}.mean"), hidden, out_dim),
            log_var: Linear::new(store, rng, &format!("{name}.log_var"), hidden, out_dim),
        }
    }

    fn forward(&self, g: &mut Graph, x: NodeId) -> Result<(NodeId, NodeId)> {
        let h = self.trunk.forward(g, x)?;
        let h = g.tanh(h);
        let mean = self.mean.forward(g, h)?;
        let lv = self.log_var.forward(g, h)?;
        let lv = g.clamp(lv, -LOG_VAR_CLAMP, LOG_VAR_CLAMP);
        Ok((mean, lv))
    }
}

/// Autoregressive content prior: an LSTM over the sampled latents with
/// per-step mean/log-variance heads. Step `t` sees only `z_{<t}`.
#[derive(Debug, Clone)]
struct ContentPrior {
    cell: LstmCell,
    mean: Linear,
    log_var: Linear,
    dim: usize,
}

impl ContentPrior {
    /// Per-step prior parameters conditioned on the given latent sequence
    /// (teacher forcing: step t's input is `z_c[t-1]`, step 0 sees zeros).
    fn unroll(&self, g: &mut Graph, z_c: NodeId) -> Result<(NodeId, NodeId)> {
        let t_len = g.value(z_c).shape()[0];
        let mut h = g.constant(Tensor::zeros(&[1, self.cell.hidden]));
        let mut c = g.constant(Tensor::zeros(&[1, self.cell.hidden]));
        let mut means = Vec::with_capacity(t_len);
        let mut lvs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let input = if t == 0 {
                g.constant(Tensor::zeros(&[1, self.dim]))
            } else {
                g.row(z_c, t - 1)?
            };
            let (h2, c2) = self.cell.step(g, input, h, c)?;
            h = h2;
            c = c2;
            let m = self.mean.forward(g, h)?;
            let lv = self.log_var.forward(g, h)?;
            let lv = g.clamp(lv, -LOG_VAR_CLAMP, LOG_VAR_CLAMP);
            means.push(m);
            lvs.push(lv);
        }
        Ok((g.concat_rows(&means)?, g.concat_rows(&lvs)?))
    }
}

#[derive(Debug, Clone)]
enum Decoder {
    Mlp {
        pre: Linear,
        bilstm: BiLstm,
        out: Mlp,
    },
    Conv {
        prenet: Conv1d,
        rnn1: BiLstm,
        convs: Vec<Conv1d>,
        rnn2: BiLstm,
        proj: Linear,
    },
}

/// All trainable state: parameter store plus the layer wiring over it.
pub struct DsvaeModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    shared: SharedEncoder,
    speaker_trunk: RecurrentTrunk,
    speaker_head: PosteriorHead,
    content_trunk: RecurrentTrunk,
    content_head: PosteriorHead,
    prior: ContentPrior,
    decoder: Decoder,
}

impl DsvaeModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let c = &config;

        let shared = match c.variant {
            ArchVariant::TimitMlp => SharedEncoder::Mlp(Mlp::new(
                &mut store,
                rng,
                "shared",
                &[c.feature_dim, c.shared_dim, c.shared_dim],
                true,
            )),
            ArchVariant::VctkConv => {
                let mut blocks = Vec::with_capacity(3);
                for i in 0..3 {
                    let in_dim = if i == 0 { c.feature_dim } else { c.shared_dim };
                    let conv =
                        Conv1d::new(&mut store, rng, &format!("shared.conv{i}"), in_dim, c.shared_dim);
                    let lin =
                        Linear::new(&mut store, rng, &format!("shared.lin{i}"), c.shared_dim, c.shared_dim);
                    blocks.push((conv, lin));
                }
                SharedEncoder::Conv(blocks)
            }
        };

        let speaker_trunk = RecurrentTrunk {
            bilstm: BiLstm::new(&mut store, rng, "spk.bilstm", c.shared_dim, c.enc_hidden, 2),
            rnn: Rnn::new(&mut store, rng, "spk.rnn", 2 * c.enc_hidden, c.enc_rnn_hidden),
        };
        let speaker_head = PosteriorHead::new(
            &mut store,
            rng,
            "spk.head",
            c.enc_rnn_hidden,
            c.head_hidden,
            c.speaker_dim,
        );

        let content_trunk = RecurrentTrunk {
            bilstm: BiLstm::new(&mut store, rng, "cnt.bilstm", c.shared_dim, c.enc_hidden, 2),
            rnn: Rnn::new(&mut store, rng, "cnt.rnn", 2 * c.enc_hidden, c.enc_rnn_hidden),
        };
        let content_head = PosteriorHead::new(
            &mut store,
            rng,
            "cnt.head",
            c.enc_rnn_hidden,
            c.head_hidden,
            c.content_dim,
        );

        let prior = ContentPrior {
            cell: LstmCell::new(&mut store, rng, "prior.lstm", c.content_dim, c.prior_hidden),
            mean: Linear::new(&mut store, rng, "prior.mean", c.prior_hidden, c.content_dim),
            log_var: Linear::new(&mut store, rng, "prior.log_var", c.prior_hidden, c.content_dim),
            dim: c.content_dim,
        };

        let latent_dim = c.speaker_dim + c.content_dim;
        let decoder = match c.variant {
            ArchVariant::TimitMlp => Decoder::Mlp {
                pre: Linear::new(&mut store, rng, "dec.pre", latent_dim, c.dec_hidden),
                bilstm: BiLstm::new(&mut store, rng, "dec.bilstm", c.dec_hidden, c.dec_hidden, 2),
                out: Mlp::new(
                    &mut store,
                    rng,
                    "dec.out",
                    &[2 * c.dec_hidden, c.dec_hidden, c.feature_dim],
                    false,
                ),
            },
            ArchVariant::VctkConv => Decoder::Conv {
                prenet: Conv1d::new(&mut store, rng, "dec.prenet", latent_dim, c.dec_hidden),
                rnn1: BiLstm::new(&mut store, rng, "dec.rnn1", c.dec_hidden, c.dec_hidden, 1),
                convs: (0..3)
                    .map(|i| {
                        Conv1d::new(
                            &mut store,
                            rng,
                            &format!("dec.conv{i}"),
                            2 * c.dec_hidden,
                            2 * c.dec_hidden,
                        )
                    })
                    .collect(),
                rnn2: BiLstm::new(&mut store, rng, "dec.rnn2", 2 * c.dec_hidden, c.dec_hidden, 1),
                proj: Linear::new(&mut store, rng, "dec.proj", 2 * c.dec_hidden, c.feature_dim),
            },
        };

        Ok(DsvaeModel {
            config,
            store,
            shared,
            speaker_trunk,
            speaker_head,
            content_trunk,
            content_head,
            prior,
            decoder,
        })
    }

    /// Rebuilds the wiring over a loaded parameter store. The store must come
    /// from a checkpoint of a model with the same configuration.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<Self> {
        let fresh = DsvaeModel::new(config, 0)?;
        if fresh.store.len() != store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, model needs {}",
                store.len(),
                fresh.store.len()
            )));
        }
        for (a, b) in fresh.store.entries().iter().zip(store.entries()) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Format(format!(
                    "checkpoint parameter '{}' {:?} does not match model '{}' {:?}",
                    b.name,
                    b.tensor.shape(),
                    a.name,
                    a.tensor.shape()
                )));
            }
        }
        Ok(DsvaeModel { store, ..fresh })
    }

    // ---- graph-level forward pieces ---------------------------------------

    pub fn encode_shared_g(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let d = g.value(x).cols();
        if g.value(x).rank() != 2 || d != self.config.feature_dim {
            return Err(Error::shape(
                "encode_shared",
                format!("input {:?}, expected [T x {}]", g.value(x).shape(), self.config.feature_dim),
            ));
        }
        match &self.shared {
            SharedEncoder::Mlp(mlp) => mlp.forward(g, x),
            SharedEncoder::Conv(blocks) => {
                let mut h = x;
                for (conv, lin) in blocks {
                    h = conv.forward(g, h)?;
                    h = g.tanh(h);
                    h = lin.forward(g, h)?;
                    h = instance_norm(g, h)?;
                }
                Ok(h)
            }
        }
    }

    /// Speaker posterior `q(Z_S|X)`: recurrent trunk, time-average pooling,
    /// then the head MLP. Returns `([1,d_S] mean, [1,d_S] log_var)`.
    pub fn encode_speaker_g(&self, g: &mut Graph, w: NodeId) -> Result<(NodeId, NodeId)> {
        let h = self.speaker_trunk.forward(g, w)?;
        let pooled = g.mean_axis0(h)?;
        self.speaker_head.forward(g, pooled)
    }

    /// Content posterior `q(Z_C|X)`: per-step parameters `[T, d_C]`.
    pub fn encode_content_g(&self, g: &mut Graph, w: NodeId) -> Result<(NodeId, NodeId)> {
        let h = self.content_trunk.forward(g, w)?;
        self.content_head.forward(g, h)
    }

    /// Per-step content prior parameters, teacher-forced on `z_c`.
    pub fn prior_unroll_g(&self, g: &mut Graph, z_c: NodeId) -> Result<(NodeId, NodeId)> {
        self.prior.unroll(g, z_c)
    }

    /// Broadcast `z_s` over time, concatenate with `z_c`, decode to `[T, d]`.
    pub fn decode_g(&self, g: &mut Graph, z_s: NodeId, z_c: NodeId) -> Result<NodeId> {
        let t_len = g.value(z_c).rows();
        let (zs_r, zs_c) = (g.value(z_s).rows(), g.value(z_s).cols());
        if zs_r != 1 || zs_c != self.config.speaker_dim {
            return Err(Error::shape(
                "decode",
                format!("z_s {:?}, expected [1 x {}]", g.value(z_s).shape(), self.config.speaker_dim),
            ));
        }
        if g.value(z_c).cols() != self.config.content_dim {
            return Err(Error::shape(
                "decode",
                format!("z_c {:?}, expected [T x {}]", g.value(z_c).shape(), self.config.content_dim),
            ));
        }
        let zeros = g.constant(Tensor::zeros(&[t_len, self.config.speaker_dim]));
        let z_s_rep = g.bcast_add(zeros, z_s)?;
        let joint = g.concat_cols(&[z_s_rep, z_c])?;
        match &self.decoder {
            Decoder::Mlp { pre, bilstm, out } => {
                let h = pre.forward(g, joint)?;
                let h = g.tanh(h);
                let h = bilstm.forward(g, h)?;
                out.forward(g, h)
            }
            Decoder::Conv { prenet, rnn1, convs, rnn2, proj } => {
                let h = prenet.forward(g, joint)?;
                let mut h = g.tanh(h);
                h = rnn1.forward(g, h)?;
                for conv in convs {
                    h = conv.forward(g, h)?;
                    h = g.tanh(h);
                }
                h = rnn2.forward(g, h)?;
                proj.forward(g, h)
            }
        }
    }

    // ---- inference-level wrappers (no gradients) ---------------------------

    /// Speaker and content posteriors for one segment.
    pub fn posteriors(&self, x: &Tensor) -> Result<(GaussianPosterior, GaussianPosterior)> {
        let mut g = Graph::with_params_frozen(&self.store);
        let xi = g.constant(x.clone());
        let w = self.encode_shared_g(&mut g, xi)?;
        let (sm, slv) = self.encode_speaker_g(&mut g, w)?;
        let (cm, clv) = self.encode_content_g(&mut g, w)?;
        Ok((
            GaussianPosterior::new(g.value(sm).clone(), g.value(slv).clone())?,
            GaussianPosterior::new(g.value(cm).clone(), g.value(clv).clone())?,
        ))
    }

    /// Decodes given latents to a feature segment.
    pub fn decode(&self, z_s: &Tensor, z_c: &Tensor) -> Result<Tensor> {
        let mut g = Graph::with_params_frozen(&self.store);
        let zs = g.constant(z_s.clone());
        let zc = g.constant(z_c.clone());
        let out = self.decode_g(&mut g, zs, zc)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            feature_dim: 6,
            seg_len: 5,
            shared_dim: 8,
            speaker_dim: 3,
            content_dim: 4,
            variant: ArchVariant::TimitMlp,
            alpha: 1.0,
            beta: 2.0,
            kl_direction: KlDirection::QToP,
            enc_hidden: 5,
            enc_rnn_hidden: 6,
            head_hidden: 7,
            dec_hidden: 8,
            prior_hidden: 6,
        }
    }

    #[test]
    fn paper_presets_match_reported_sizes() {
        let t = ModelConfig::timit_paper();
        assert_eq!(t.feature_dim, 200);
        assert_eq!(t.seg_len, 20);
        assert_eq!(t.shared_dim, 256);
        assert_eq!((t.speaker_dim, t.content_dim), (64, 64));
        assert_eq!(t.enc_hidden, 512);
        assert_eq!((t.alpha, t.beta), (1.0, 20.0));
        let v = ModelConfig::vctk_paper();
        assert_eq!(v.feature_dim, 80);
        assert_eq!(v.seg_len, 100);
        assert_eq!((v.alpha, v.beta), (0.01, 10.0));
        assert_eq!(v.variant, ArchVariant::VctkConv);
    }

    #[test]
    fn alpha_beta_both_zero_rejected() {
        let mut cfg = tiny_cfg();
        cfg.alpha = 0.0;
        cfg.beta = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn shared_encoder_output_width() {
        let m = DsvaeModel::new(tiny_cfg(), 1).unwrap();
        let mut g = Graph::with_params_frozen(&m.store);
        let x = g.constant(Tensor::zeros(&[5, 6]));
        let w = m.encode_shared_g(&mut g, x).unwrap();
        assert_eq!(g.value(w).shape(), &[5, 8]);
    }

    #[test]
    fn zeroed_params_give_constant_shared_rows() {
        let mut m = DsvaeModel::new(tiny_cfg(), 1).unwrap();
        for e in m.store.entries_mut() {
            for v in e.tensor.data_mut() {
                *v = 0.0;
            }
        }
        let mut g = Graph::with_params_frozen(&m.store);
        let data: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let x = g.constant(Tensor::new(vec![5, 6], data).unwrap());
        let w = m.encode_shared_g(&mut g, x).unwrap();
        let first = g.value(w).row(0).to_vec();
        for t in 1..5 {
            assert_eq!(g.value(w).row(t), first.as_slice());
        }
    }

    #[test]
    fn vctk_variant_normalizes_channels() {
        let cfg = ModelConfig {
            variant: ArchVariant::VctkConv,
            feature_dim: 8,
            shared_dim: 6,
            ..tiny_cfg()
        };
        let m = DsvaeModel::new(cfg, 2).unwrap();
        let mut g = Graph::with_params_frozen(&m.store);
        use rand::prelude::*;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..100 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = g.constant(Tensor::new(vec![100, 8], data).unwrap());
        let w = m.encode_shared_g(&mut g, x).unwrap();
        assert_eq!(g.value(w).shape(), &[100, 6]);
        let wv = g.value(w);
        for c in 0..6 {
            let mean: f64 = (0..100).map(|t| wv.at2(t, c)).sum::<f64>() / 100.0;
            let var: f64 = (0..100).map(|t| (wv.at2(t, c) - mean).powi(2)).sum::<f64>() / 100.0;
            assert!(mean.abs() < 1e-9, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-2, "channel {c} var {var}");
        }
    }

    #[test]
    fn speaker_posterior_invariant_for_constant_input() {
        let m = DsvaeModel::new(tiny_cfg(), 4).unwrap();
        let row: Vec<f64> = vec![0.4, -0.2, 0.9, 0.0, -0.5, 0.3];
        let x = Tensor::from_rows(&vec![row.clone(); 5]).unwrap();
        // Any time permutation of a constant input is the same input.
        let (post_a, _) = m.posteriors(&x).unwrap();
        let (post_b, _) = m.posteriors(&x).unwrap();
        assert_eq!(post_a.mean.data(), post_b.mean.data());
        assert_eq!(post_a.mean.shape(), &[1, 3]);
    }

    #[test]
    fn content_posterior_shape_and_clamp() {
        let m = DsvaeModel::new(tiny_cfg(), 5).unwrap();
        use rand::prelude::*;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::new(
            vec![5, 6],
            (0..30).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        let (_, content) = m.posteriors(&x).unwrap();
        assert_eq!(content.mean.shape(), &[5, 4]);
        assert!(content
            .log_var
            .data()
            .iter()
            .all(|&v| (-LOG_VAR_CLAMP..=LOG_VAR_CLAMP).contains(&v)));
    }

    #[test]
    fn stateless_stack_gives_identical_posteriors_for_repeated_frames() {
        let mut m = DsvaeModel::new(tiny_cfg(), 6).unwrap();
        // Zero every recurrence and force LSTM forget gates shut so each step
        // is a pure function of its own frame.
        for e in m.store.entries_mut() {
            if e.name.ends_with(".w_hh") {
                for v in e.tensor.data_mut() {
                    *v = 0.0;
                }
            }
            if e.name.contains("bilstm") && e.name.ends_with(".b") {
                let h = e.tensor.numel() / 4;
                for i in h..2 * h {
                    e.tensor.data_mut()[i] = -30.0;
                }
            }
        }
        let row: Vec<f64> = vec![0.7, -0.1, 0.2, 0.5, -0.3, 0.8];
        let x = Tensor::from_rows(&vec![row; 5]).unwrap();
        let (_, content) = m.posteriors(&x).unwrap();
        let first = content.mean.row(0).to_vec();
        for t in 1..5 {
            for (a, b) in content.mean.row(t).iter().zip(&first) {
                assert!((a - b).abs() < 1e-12, "step {t}");
            }
        }
    }

    #[test]
    fn decode_shape_and_determinism() {
        let m = DsvaeModel::new(tiny_cfg(), 7).unwrap();
        let z_s = Tensor::new(vec![1, 3], vec![0.1, -0.4, 0.7]).unwrap();
        let z_c = Tensor::new(vec![5, 4], (0..20).map(|i| i as f64 * 0.05).collect()).unwrap();
        let a = m.decode(&z_s, &z_c).unwrap();
        let b = m.decode(&z_s, &z_c).unwrap();
        assert_eq!(a.shape(), &[5, 6]);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn decode_depends_on_speaker_latent_at_every_timestep() {
        // Non-zero Jacobian of each output frame w.r.t. z_s via autodiff.
        let m = DsvaeModel::new(tiny_cfg(), 9).unwrap();
        let z_c = Tensor::new(vec![5, 4], (0..20).map(|i| (i as f64 * 0.13).sin()).collect())
            .unwrap();
        for t in 0..5 {
            let mut g = Graph::with_params_frozen(&m.store);
            let zs = g.leaf(Tensor::new(vec![1, 3], vec![0.2, -0.3, 0.5]).unwrap(), true);
            let zc = g.constant(z_c.clone());
            let out = m.decode_g(&mut g, zs, zc).unwrap();
            let frame = g.row(out, t).unwrap();
            let s = g.sum_all(frame);
            g.backward(s).unwrap();
            let grad = g.grad(zs).unwrap();
            assert!(
                grad.iter().any(|&v| v.abs() > 1e-12),
                "frame {t} insensitive to z_s"
            );
        }
    }

    #[test]
    fn paired_draws_use_independent_noise() {
        // Covariance of z_s and z_c noise over repeated draws goes to zero.
        use rand::SeedableRng;
        let m = DsvaeModel::new(tiny_cfg(), 11).unwrap();
        let x = Tensor::new(vec![5, 6], (0..30).map(|i| (i as f64 * 0.21).cos()).collect())
            .unwrap();
        let (spk, cnt) = m.posteriors(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 10_000;
        let mut s_vals = Vec::with_capacity(n);
        let mut c_vals = Vec::with_capacity(n);
        for _ in 0..n {
            let (zs, _) = sample_posterior(&spk, &mut rng);
            let (zc, _) = sample_posterior(&cnt, &mut rng);
            s_vals.push(zs.data()[0]);
            c_vals.push(zc.data()[0]);
        }
        let ms = s_vals.iter().sum::<f64>() / n as f64;
        let mc = c_vals.iter().sum::<f64>() / n as f64;
        let mut cov = 0.0;
        let mut vs = 0.0;
        let mut vc = 0.0;
        for i in 0..n {
            cov += (s_vals[i] - ms) * (c_vals[i] - mc);
            vs += (s_vals[i] - ms).powi(2);
            vc += (c_vals[i] - mc).powi(2);
        }
        let corr = cov / (vs.sqrt() * vc.sqrt());
        assert!(corr.abs() < 0.05, "correlation {corr}");
    }
}
