//! Layers built from graph operations. Each layer owns parameter indices
//! into a [`ParamStore`]; `forward` registers them on a [`Graph`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use super::DiffError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let bias = store.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    /// Linear layer with all-zero weights, used for output heads whose
    /// initial prediction should be exactly zero.
    pub fn zeroed(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.add(format!("{name}.w"), Tensor::zeros(fan_in, fan_out));
        let bias = store.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.affine(x, w, b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub scale: usize,
    pub shift: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let scale = store.add(format!("{name}.scale"), Tensor::full(1, width, 1.0));
        let shift = store.add(format!("{name}.shift"), Tensor::zeros(1, width));
        Self { scale, shift }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let s = g.param(store, self.scale);
        let h = g.param(store, self.shift);
        g.layer_norm(x, s, h)
    }
}

/// Hidden layers of `Linear → LayerNorm → SiLU`, then a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    hidden: Vec<(Linear, LayerNorm)>,
    out: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self::build(store, name, input, hidden, layers, output, false, rng)
    }

    /// Same as [`Mlp::new`] with a zero-initialized output layer.
    pub fn with_zero_output<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self::build(store, name, input, hidden, layers, output, true, rng)
    }

    #[allow(clippy::too_many_arguments)]
    fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        output: usize,
        zero_out: bool,
        rng: &mut R,
    ) -> Self {
        let mut width = input;
        let mut hidden_layers = Vec::with_capacity(layers);
        for i in 0..layers {
            let lin = Linear::new(store, &format!("{name}.l{i}"), width, hidden, rng);
            let ln = LayerNorm::new(store, &format!("{name}.ln{i}"), hidden);
            hidden_layers.push((lin, ln));
            width = hidden;
        }
        let out = if zero_out {
            Linear::zeroed(store, &format!("{name}.out"), width, output)
        } else {
            Linear::new(store, &format!("{name}.out"), width, output, rng)
        };
        Self {
            hidden: hidden_layers,
            out,
        }
    }

    pub fn output_width(&self) -> usize {
        self.out.fan_out
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let mut h = x;
        for (lin, ln) in &self.hidden {
            let a = lin.forward(g, store, h)?;
            let n = ln.forward(g, store, a)?;
            h = g.silu(n)?;
        }
        self.out.forward(g, store, h)
    }
}

/// Gated recurrent unit with tanh candidate:
///
/// ```text
/// r = σ([x, h]·Wr + br)      u = σ([x, h]·Wu + bu)
/// c = tanh([x, r⊙h]·Wc + bc)
/// h' = (1 − u)⊙h + u⊙c
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub reset: Linear,
    pub update: Linear,
    pub candidate: Linear,
    pub input_width: usize,
    pub hidden_width: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_width: usize,
        hidden_width: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = input_width + hidden_width;
        Self {
            reset: Linear::new(store, &format!("{name}.reset"), fan_in, hidden_width, rng),
            update: Linear::new(store, &format!("{name}.update"), fan_in, hidden_width, rng),
            candidate: Linear::new(store, &format!("{name}.cand"), fan_in, hidden_width, rng),
            input_width,
            hidden_width,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h: Var,
        input: Var,
    ) -> Result<Var, DiffError> {
        if g.value(h).cols() != self.hidden_width || g.value(input).cols() != self.input_width {
            return Err(DiffError::Shape(format!(
                "gru expects input {} / hidden {}, got {:?} / {:?}",
                self.input_width,
                self.hidden_width,
                g.value(input).shape(),
                g.value(h).shape()
            )));
        }
        let xh = g.concat(&[input, h])?;
        let r_pre = self.reset.forward(g, store, xh)?;
        let r = g.sigmoid(r_pre)?;
        let u_pre = self.update.forward(g, store, xh)?;
        let u = g.sigmoid(u_pre)?;
        let rh = g.mul(r, h)?;
        let xrh = g.concat(&[input, rh])?;
        let c_pre = self.candidate.forward(g, store, xrh)?;
        let c = g.tanh(c_pre)?;
        // h' = h + u⊙(c − h)
        let diff = g.sub(c, h)?;
        let step = g.mul(u, diff)?;
        g.add(h, step)
    }
}
