//! The layer set used by the encoder/decoder stacks.
//!
//! Layers own [`ParamRef`]s into a shared [`ParamStore`]; `forward` replays
//! them on a [`Graph`] so gradients come from the tape. Weights are
//! initialized `U(+-sqrt(6/(fan_in+fan_out)))`, biases zero, except the LSTM
//! forget gate bias which starts at +1.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::graph::{Graph, NodeId};
use super::{ParamRef, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CONV_KERNEL: usize = 5;
const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    Lstm,
    BiLstm,
    Rnn,
    Conv,
    InstanceNorm2d,
    TimeAvgPool,
}

/// Declarative layer description; `layer_count` stacks recurrent layers.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_size: usize,
    pub layer_count: usize,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let need_dims: &[usize] = match self.kind {
            LayerKind::Linear => &[self.input_dim, self.output_dim],
            LayerKind::Lstm | LayerKind::BiLstm | LayerKind::Rnn => {
                &[self.input_dim, self.hidden_size, self.layer_count]
            }
            LayerKind::Conv => &[self.input_dim, self.output_dim],
            LayerKind::InstanceNorm2d | LayerKind::TimeAvgPool => &[],
        };
        if need_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("layer spec has zero dim: {self:?}")));
        }
        Ok(())
    }
}

fn uniform_init(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("init shape")
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamRef,
    pub b: ParamRef,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        output_dim: usize,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            uniform_init(rng, vec![input_dim, output_dim], input_dim, output_dim),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[1, output_dim]));
        Linear { w, b, input_dim, output_dim }
    }

    /// `[T,in] -> [T,out]`.
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.bcast_add(y, b)
    }
}

/// Gate packing order along the 4H axis: input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_ih: ParamRef,
    pub w_hh: ParamRef,
    pub b: ParamRef,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        let w_ih = store.add(
            format!("{name}.w_ih"),
            uniform_init(rng, vec![input_dim, 4 * hidden], input_dim, 4 * hidden),
        );
        let w_hh = store.add(
            format!("{name}.w_hh"),
            uniform_init(rng, vec![hidden, 4 * hidden], hidden, 4 * hidden),
        );
        let mut bias = Tensor::zeros(&[1, 4 * hidden]);
        for i in hidden..2 * hidden {
            bias.data_mut()[i] = 1.0; // forget gate starts open
        }
        let b = store.add(format!("{name}.b"), bias);
        LstmCell { w_ih, w_hh, b, input_dim, hidden }
    }

    /// One step: `x_t [1,in]`, state `(h,c) [1,H]` each.
    pub fn step(
        &self,
        g: &mut Graph,
        x_t: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let hsz = self.hidden;
        let w_ih = g.param(self.w_ih);
        let w_hh = g.param(self.w_hh);
        let b = g.param(self.b);
        let gi = g.matmul(x_t, w_ih)?;
        let gh = g.matmul(h, w_hh)?;
        let pre = g.add(gi, gh)?;
        let pre = g.bcast_add(pre, b)?;
        let i_g = g.slice_cols(pre, 0, hsz)?;
        let f_g = g.slice_cols(pre, hsz, 2 * hsz)?;
        let c_g = g.slice_cols(pre, 2 * hsz, 3 * hsz)?;
        let o_g = g.slice_cols(pre, 3 * hsz, 4 * hsz)?;
        let i_g = g.sigmoid(i_g);
        let f_g = g.sigmoid(f_g);
        let c_g = g.tanh(c_g);
        let o_g = g.sigmoid(o_g);
        let fc = g.mul(f_g, c)?;
        let ic = g.mul(i_g, c_g)?;
        let c_next = g.add(fc, ic)?;
        let c_act = g.tanh(c_next);
        let h_next = g.mul(o_g, c_act)?;
        Ok((h_next, c_next))
    }
}

/// Unidirectional (optionally stacked) LSTM over a `[T,in]` sequence.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub cells: Vec<LstmCell>,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        hidden: usize,
        layers: usize,
    ) -> Self {
        let mut cells = Vec::with_capacity(layers);
        for l in 0..layers {
            let in_dim = if l == 0 { input_dim } else { hidden };
            cells.push(LstmCell::new(store, rng, &format!("{name}.l{l}"), in_dim, hidden));
        }
        Lstm { cells, hidden }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let mut seq = x;
        for cell in &self.cells {
            seq = self.run_layer(g, cell, seq)?;
        }
        Ok(seq)
    }

    fn run_layer(&self, g: &mut Graph, cell: &LstmCell, x: NodeId) -> Result<NodeId> {
        let t_len = g.value(x).shape()[0];
        let mut h = g.constant(Tensor::zeros(&[1, cell.hidden]));
        let mut c = g.constant(Tensor::zeros(&[1, cell.hidden]));
        let mut outs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let x_t = g.row(x, t)?;
            let (h2, c2) = cell.step(g, x_t, h, c)?;
            h = h2;
            c = c2;
            outs.push(h);
        }
        g.concat_rows(&outs)
    }
}

/// Bidirectional LSTM; output is `[T, 2H]` (forward and backward concatenated).
#[derive(Debug, Clone)]
pub struct BiLstm {
    layers: Vec<(Lstm, Lstm)>,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        hidden: usize,
        layers: usize,
    ) -> Self {
        let mut pairs = Vec::with_capacity(layers);
        for l in 0..layers {
            let in_dim = if l == 0 { input_dim } else { 2 * hidden };
            let fwd = Lstm::new(store, rng, &format!("{name}.l{l}.fwd"), in_dim, hidden, 1);
            let bwd = Lstm::new(store, rng, &format!("{name}.l{l}.bwd"), in_dim, hidden, 1);
            pairs.push((fwd, bwd));
        }
        BiLstm { layers: pairs, hidden }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let mut seq = x;
        for (fwd, bwd) in &self.layers {
            let f = fwd.forward(g, seq)?;
            let rev = g.reverse_rows(seq)?;
            let b_rev = bwd.forward(g, rev)?;
            let b = g.reverse_rows(b_rev)?;
            seq = g.concat_cols(&[f, b])?;
        }
        Ok(seq)
    }
}

/// Vanilla tanh recurrence: `h_t = tanh(x_t W_ih + h_{t-1} W_hh + b)`.
#[derive(Debug, Clone)]
pub struct Rnn {
    pub w_ih: ParamRef,
    pub w_hh: ParamRef,
    pub b: ParamRef,
    pub hidden: usize,
}

impl Rnn {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        let w_ih = store.add(
            format!("{name}.w_ih"),
            uniform_init(rng, vec![input_dim, hidden], input_dim, hidden),
        );
        let w_hh = store.add(
            format!("{name}.w_hh"),
            uniform_init(rng, vec![hidden, hidden], hidden, hidden),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[1, hidden]));
        Rnn { w_ih, w_hh, b, hidden }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let t_len = g.value(x).shape()[0];
        let w_ih = g.param(self.w_ih);
        let w_hh = g.param(self.w_hh);
        let b = g.param(self.b);
        let mut h = g.constant(Tensor::zeros(&[1, self.hidden]));
        let mut outs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let x_t = g.row(x, t)?;
            let xi = g.matmul(x_t, w_ih)?;
            let hh = g.matmul(h, w_hh)?;
            let pre = g.add(xi, hh)?;
            let pre = g.bcast_add(pre, b)?;
            h = g.tanh(pre);
            outs.push(h);
        }
        g.concat_rows(&outs)
    }
}

/// Convolution along time, kernel 5, stride 1, same padding.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamRef,
    pub b: ParamRef,
    pub output_dim: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        output_dim: usize,
    ) -> Self {
        let fan_in = CONV_KERNEL * input_dim;
        let fan_out = CONV_KERNEL * output_dim;
        let w = store.add(
            format!("{name}.w"),
            uniform_init(rng, vec![CONV_KERNEL, input_dim, output_dim], fan_in, fan_out),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[1, output_dim]));
        Conv1d { w, b, output_dim }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.conv1d_same(x, w, b)
    }
}

/// Per-channel normalization over the time axis (mean 0, variance 1).
pub fn instance_norm(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let mu = g.mean_axis0(x)?;
    let centered = g.bcast_sub(x, mu)?;
    let sq = g.mul(centered, centered)?;
    let var = g.mean_axis0(sq)?;
    let var_eps = g.add_scalar(var, INSTANCE_NORM_EPS);
    let inv_std = g.powf(var_eps, -0.5);
    g.bcast_mul(centered, inv_std)
}

/// `[T,H] -> [1,H]` column means.
pub fn time_avg_pool(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    g.mean_axis0(x)
}

/// Multi-layer perceptron with tanh between layers; the final layer is linear
/// unless `activate_last`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activate_last: bool,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        dims: &[usize],
        activate_last: bool,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            layers.push(Linear::new(store, rng, &format!("{name}.fc{i}"), dims[i], dims[i + 1]));
        }
        Mlp { layers, activate_last }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, h)?;
            if i < last || self.activate_last {
                h = g.tanh(h);
            }
        }
        Ok(h)
    }
}

/// A built layer bundling parameters with its forward pass.
#[derive(Debug, Clone)]
pub enum Layer {
    Linear(Linear),
    Lstm(Lstm),
    BiLstm(BiLstm),
    Rnn(Rnn),
    Conv(Conv1d),
    InstanceNorm2d,
    TimeAvgPool,
}

impl Layer {
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        match self {
            Layer::Linear(l) => l.forward(g, x),
            Layer::Lstm(l) => l.forward(g, x),
            Layer::BiLstm(l) => l.forward(g, x),
            Layer::Rnn(l) => l.forward(g, x),
            Layer::Conv(l) => l.forward(g, x),
            Layer::InstanceNorm2d => instance_norm(g, x),
            Layer::TimeAvgPool => time_avg_pool(g, x),
        }
    }
}

/// Builds a parameterized layer from a spec with its own seeded RNG.
pub fn build_layer(spec: &LayerSpec, store: &mut ParamStore, rng_seed: u64) -> Result<Layer> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    build_layer_with_rng(spec, store, &mut rng, "layer")
}

pub fn build_layer_with_rng(
    spec: &LayerSpec,
    store: &mut ParamStore,
    rng: &mut impl Rng,
    name: &str,
) -> Result<Layer> {
    spec.validate()?;
    Ok(match spec.kind {
        LayerKind::Linear => {
            Layer::Linear(Linear::new(store, rng, name, spec.input_dim, spec.output_dim))
        }
        LayerKind::Lstm => Layer::Lstm(Lstm::new(
            store,
            rng,
            name,
            spec.input_dim,
            spec.hidden_size,
            spec.layer_count,
        )),
        LayerKind::BiLstm => Layer::BiLstm(BiLstm::new(
            store,
            rng,
            name,
            spec.input_dim,
            spec.hidden_size,
            spec.layer_count,
        )),
        LayerKind::Rnn => {
            Layer::Rnn(Rnn::new(store, rng, name, spec.input_dim, spec.hidden_size))
        }
        LayerKind::Conv => {
            Layer::Conv(Conv1d::new(store, rng, name, spec.input_dim, spec.output_dim))
        }
        LayerKind::InstanceNorm2d => Layer::InstanceNorm2d,
        LayerKind::TimeAvgPool => Layer::TimeAvgPool,
    })
}
