//! Layers shared by the generator and the discriminator, expressed as tape
//! operations over parameters held in a [`ParamStore`].

use rand::Rng;

use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// `x W + b` with `W` stored as `input x output`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = store.add_uniform(format!("{name}.weight"), input, output, bound, rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), crate::tape::Tensor::zeros(1, output)));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let y = tape.matmul(x, p.var(self.weight));
        match self.bias {
            Some(b) => tape.add_row(y, p.var(b)),
            None => y,
        }
    }
}

/// Two fully connected layers with a tanh between them, applied row-wise.
#[derive(Clone, Copy, Debug)]
pub struct TwoLayerHead {
    pub hidden: Linear,
    pub out: Linear,
}

/// Intermediate values of a [`TwoLayerHead`] pass.
pub struct HeadPass {
    pub hidden: Var,
    pub logits: Var,
}

impl TwoLayerHead {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            hidden: Linear::register(store, &format!("{name}.hidden"), input, hidden, true, rng),
            out: Linear::register(store, &format!("{name}.out"), hidden, output, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        self.forward_parts(tape, p, x).logits
    }

    pub fn forward_parts(&self, tape: &mut Tape, p: &Bound, x: Var) -> HeadPass {
        let pre = self.hidden.forward(tape, p, x);
        let hidden = tape.tanh(pre);
        let logits = self.out.forward(tape, p, hidden);
        HeadPass { hidden, logits }
    }

    /// Gradient of `sigmoid(head(x))` w.r.t. a single `1 x n` input row, given
    /// that row's hidden activation and score. Built from
    /// tape operations so it can itself be differentiated:
    /// `s (1 - s) * ((1 - hidden^2) * W_out^T) W_hidden^T`.
    pub fn sigmoid_input_gradient(&self, tape: &mut Tape, p: &Bound, hidden: Var, score: Var) -> Var {
        let w_out_t = tape.transpose(p.var(self.out.weight));
        let h2 = tape.square(hidden);
        let dtanh = tape.rsub_const(1.0, h2);
        let g_hidden = tape.mul(dtanh, w_out_t);
        let w_hidden_t = tape.transpose(p.var(self.hidden.weight));
        let g_in = tape.matmul(g_hidden, w_hidden_t);
        let one_minus = tape.rsub_const(1.0, score);
        let dsig = tape.mul(score, one_minus);
        tape.mul_scalar(g_in, dsig)
    }
}

/// Gated recurrent unit with separate input and recurrent weights per gate:
///
/// ```text
/// r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
/// z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub input_reset: Linear,
    pub input_update: Linear,
    pub input_new: Linear,
    pub hidden_reset: Linear,
    pub hidden_update: Linear,
    pub hidden_new: Linear,
    pub hidden_size: usize,
}

impl GruCell {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut lin = |gate: &str, n_in: usize| {
            Linear::register(store, &format!("{name}.{gate}"), n_in, hidden, true, rng)
        };
        Self {
            input_reset: lin("input_reset", input),
            input_update: lin("input_update", input),
            input_new: lin("input_new", input),
            hidden_reset: lin("hidden_reset", hidden),
            hidden_update: lin("hidden_update", hidden),
            hidden_new: lin("hidden_new", hidden),
            hidden_size: hidden,
        }
    }

    pub fn step(&self, tape: &mut Tape, p: &Bound, x: Var, h: Var) -> Var {
        let xr = self.input_reset.forward(tape, p, x);
        let hr = self.hidden_reset.forward(tape, p, h);
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);

        let xz = self.input_update.forward(tape, p, x);
        let hz = self.hidden_update.forward(tape, p, h);
        let z = tape.add(xz, hz);
        let z = tape.sigmoid(z);

        let xn = self.input_new.forward(tape, p, x);
        let hn = self.hidden_new.forward(tape, p, h);
        let gated = tape.mul(r, hn);
        let n = tape.add(xn, gated);
        let n = tape.tanh(n);

        // n + z * (h - n)
        let diff = tape.sub(h, n);
        let zd = tape.mul(z, diff);
        tape.add(n, zd)
    }
}

#[derive(Clone, Copy, Debug)]
struct HeadProjection {
    query: Linear,
    key: Linear,
    value: Linear,
}

/// Multi-head attention with per-head query/key/value projections and an
/// output projection over the concatenated heads. No biases.
#[derive(Clone, Debug)]
pub struct MultiHeadBlock {
    heads: Vec<HeadProjection>,
    output: Linear,
    head_dim: usize,
}

impl MultiHeadBlock {
    /// `qk_in` is the width of query and key inputs, `v_in` of value inputs;
    /// each head projects to `model_width / heads` and the block returns rows
    /// of width `model_width`.
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        q_in: usize,
        k_in: usize,
        v_in: usize,
        model_width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && model_width.is_multiple_of(heads), "heads must divide model width");
        let head_dim = model_width / heads;
        let heads = (0..heads)
            .map(|i| HeadProjection {
                query: Linear::register(store, &format!("{name}.head{i}.query"), q_in, head_dim, false, rng),
                key: Linear::register(store, &format!("{name}.head{i}.key"), k_in, head_dim, false, rng),
                value: Linear::register(store, &format!("{name}.head{i}.value"), v_in, head_dim, false, rng),
            })
            .collect();
        let output = Linear::register(store, &format!("{name}.output"), model_width, model_width, false, rng);
        Self {
            heads,
            output,
            head_dim,
        }
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    /// Causally masked attention: output row `t` depends on input rows `0..=t`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, q: Var, k: Var, v: Var) -> Var {
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let outs: Vec<Var> = self
            .heads
            .iter()
            .map(|h| {
                let qh = h.query.forward(tape, p, q);
                let kh = h.key.forward(tape, p, k);
                let vh = h.value.forward(tape, p, v);
                tape.causal_attention(qh, kh, vh, scale)
            })
            .collect();
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        self.output.forward(tape, p, cat)
    }
}
