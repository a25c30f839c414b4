use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::None => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// `act(x W^T + b)` for a batch `x (B x in)`, weight `W (out x in)` and
/// optional bias `b (1 x out)`.
pub fn dense(tape: &mut Tape, x: Var, w: Var, b: Option<Var>, act: Activation) -> Result<Var> {
    let (xin, wout, win) = (
        tape.value(x).cols(),
        tape.value(w).rows(),
        tape.value(w).cols(),
    );
    if xin != win {
        return Err(Error::Dimension(format!(
            "dense input width {xin} vs weight {wout}x{win}"
        )));
    }
    let mut y = tape.matmul_nt(x, w);
    if let Some(b) = b {
        if tape.value(b).len() != wout {
            return Err(Error::Dimension(format!(
                "dense bias length {} vs output width {wout}",
                tape.value(b).len()
            )));
        }
        y = tape.add_row(y, b);
    }
    Ok(act.apply(tape, y))
}

/// Softmax of a vector. `-inf` entries act as a mask and get weight zero.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidMask("every softmax entry is -inf".into()));
    }
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Named dense layer inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(name: impl Into<String>, input: usize, output: usize, activation: Activation) -> Self {
        Dense {
            name: name.into(),
            input,
            output,
            activation,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        store.insert(self.weight_name(), Tensor::xavier(self.output, self.input, rng))?;
        store.insert(self.bias_name(), Tensor::zeros(&[1, self.output]))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, &self.weight_name())?;
        let b = tape.param(store, &self.bias_name())?;
        dense(tape, x, w, Some(b), self.activation)
    }
}

/// A stack of dense layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`; `hidden` is applied between layers and
    /// `last` on the output.
    pub fn new(name: &str, widths: &[usize], hidden: Activation, last: Activation) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { hidden };
                Dense::new(format!("{name}.{i}"), widths[i], widths[i + 1], act)
            })
            .collect();
        Mlp { layers }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(store, rng))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var> {
        for l in &self.layers {
            x = l.forward(tape, store, x)?;
        }
        Ok(x)
    }
}

/// Standard LSTM cell with gate order (input, forget, cell, output).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

/// LSTM parameters bound on a tape for the duration of one unroll.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    w_ih: Var,
    w_hh: Var,
    bias: Var,
}

impl LstmCell {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize) -> Self {
        LstmCell {
            name: name.into(),
            input,
            hidden,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        let h4 = 4 * self.hidden;
        store.insert(format!("{}.w_ih", self.name), Tensor::xavier(h4, self.input, rng))?;
        store.insert(format!("{}.w_hh", self.name), Tensor::xavier(h4, self.hidden, rng))?;
        store.insert(format!("{}.bias", self.name), Tensor::zeros(&[1, h4]))
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> Result<LstmVars> {
        Ok(LstmVars {
            w_ih: tape.param(store, &format!("{}.w_ih", self.name))?,
            w_hh: tape.param(store, &format!("{}.w_hh", self.name))?,
            bias: tape.param(store, &format!("{}.bias", self.name))?,
        })
    }

    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> (Var, Var) {
        let h = tape.constant(Tensor::zeros(&[batch, self.hidden]));
        let c = tape.constant(Tensor::zeros(&[batch, self.hidden]));
        (h, c)
    }

    /// One recurrence step for a batch `x (B x input)`.
    pub fn step(&self, tape: &mut Tape, vars: &LstmVars, x: Var, state: (Var, Var)) -> Result<(Var, Var)> {
        let (h, c) = state;
        if tape.value(x).cols() != self.input {
            return Err(Error::Dimension(format!(
                "lstm input width {} vs {}",
                tape.value(x).cols(),
                self.input
            )));
        }
        if tape.value(h).cols() != self.hidden || tape.value(c).cols() != self.hidden {
            return Err(Error::Dimension("lstm state width".into()));
        }
        let hs = self.hidden;
        let gx = tape.matmul_nt(x, vars.w_ih);
        let gh = tape.matmul_nt(h, vars.w_hh);
        let gates = tape.add(gx, gh);
        let gates = tape.add_row(gates, vars.bias);
        let i = tape.slice_cols(gates, 0, hs);
        let f = tape.slice_cols(gates, hs, 2 * hs);
        let g = tape.slice_cols(gates, 2 * hs, 3 * hs);
        let o = tape.slice_cols(gates, 3 * hs, 4 * hs);
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_next = tape.add(fc, ig);
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc);
        Ok((h_next, c_next))
    }
}

/// Multi-head scaled dot-product self-attention over a batch of equal-length
/// sequences stored as a `(B*L) x model` matrix (see [`Tape::stack_seq`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub name: String,
    pub model: usize,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(name: impl Into<String>, model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model dimension {model} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            name: name.into(),
            model,
            heads,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        for p in ["wq", "wk", "wv", "wo"] {
            store.insert(
                format!("{}.{p}", self.name),
                Tensor::xavier(self.model, self.model, rng),
            )?;
        }
        Ok(())
    }

    /// Returns the attended sequence and the per-head attention matrices
    /// (each `(B*L) x L`, rows on the simplex).
    pub fn forward_with_weights(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        seq_len: usize,
        causal: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let xv = tape.value(x);
        if xv.cols() != self.model {
            return Err(Error::Dimension(format!(
                "attention input width {} vs model {}",
                xv.cols(),
                self.model
            )));
        }
        if seq_len == 0 || !xv.rows().is_multiple_of(seq_len) {
            return Err(Error::Dimension(format!(
                "{} rows is not a whole number of length-{seq_len} sequences",
                xv.rows()
            )));
        }
        let rows = xv.rows();
        let wq = tape.param(store, &format!("{}.wq", self.name))?;
        let wk = tape.param(store, &format!("{}.wk", self.name))?;
        let wv = tape.param(store, &format!("{}.wv", self.name))?;
        let wo = tape.param(store, &format!("{}.wo", self.name))?;
        let q = tape.matmul_nt(x, wq);
        let k = tape.matmul_nt(x, wk);
        let v = tape.matmul_nt(x, wv);

        let mut support = Tensor::filled(&[rows, seq_len], 1.0);
        if causal {
            for r in 0..rows {
                let t = r % seq_len;
                for s in t + 1..seq_len {
                    support.set(r, s, 0.0);
                }
            }
        }

        let dk = self.model / self.heads;
        let inv = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dk, (h + 1) * dk);
            let kh = tape.slice_cols(k, h * dk, (h + 1) * dk);
            let vh = tape.slice_cols(v, h * dk, (h + 1) * dk);
            let scores = tape.block_matmul_nt(qh, kh, seq_len);
            let scores = tape.scale(scores, inv);
            let att = tape.masked_softmax_rows(scores, &support);
            outs.push(tape.block_matmul(att, vh, seq_len));
            weights.push(att);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        Ok((tape.matmul_nt(cat, wo), weights))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        seq_len: usize,
        causal: bool,
    ) -> Result<Var> {
        Ok(self.forward_with_weights(tape, store, x, seq_len, causal)?.0)
    }
}

/// Graph attention layer: every node attends over its neighbourhood plus
/// itself. Heads are concatenated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatLayer {
    pub name: String,
    pub input: usize,
    pub per_head: usize,
    pub heads: usize,
    pub activation: Activation,
}

impl GatLayer {
    pub fn new(
        name: impl Into<String>,
        input: usize,
        per_head: usize,
        heads: usize,
        activation: Activation,
    ) -> Self {
        GatLayer {
            name: name.into(),
            input,
            per_head,
            heads,
            activation,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.per_head * self.heads
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        let n = &self.name;
        store.insert(
            format!("{n}.weight"),
            Tensor::xavier(self.heads * self.per_head, self.input, rng),
        )?;
        for h in 0..self.heads {
            store.insert(format!("{n}.att_src.{h}"), Tensor::xavier(1, self.per_head, rng))?;
            store.insert(format!("{n}.att_dst.{h}"), Tensor::xavier(1, self.per_head, rng))?;
        }
        Ok(())
    }

    /// `support` is the `N x N` 0/1 matrix of allowed attention targets
    /// (adjacency plus self loops); see [`attention_support`].
    pub fn forward_with_weights(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        support: &Tensor,
    ) -> Result<(Var, Vec<Var>)> {
        let hv = tape.value(h);
        if hv.rows() != support.rows() || support.rows() != support.cols() {
            return Err(Error::Dimension(format!(
                "{} feature rows for a {}-node graph",
                hv.rows(),
                support.rows()
            )));
        }
        if hv.cols() != self.input {
            return Err(Error::Dimension(format!(
                "gat input width {} vs {}",
                hv.cols(),
                self.input
            )));
        }
        let n = &self.name;
        let w = tape.param(store, &format!("{n}.weight"))?;
        let wh = tape.matmul_nt(h, w);
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let a_src = tape.param(store, &format!("{n}.att_src.{head}"))?;
            let a_dst = tape.param(store, &format!("{n}.att_dst.{head}"))?;
            let whh = tape.slice_cols(wh, head * self.per_head, (head + 1) * self.per_head);
            let e_self = tape.matmul_nt(whh, a_src);
            let e_nb = tape.matmul_nt(whh, a_dst);
            let e = tape.pairwise_add(e_self, e_nb);
            let e = tape.leaky_relu(e, 0.2);
            let att = tape.masked_softmax_rows(e, support);
            outs.push(tape.matmul(att, whh));
            weights.push(att);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        Ok((self.activation.apply(tape, cat), weights))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, support: &Tensor) -> Result<Var> {
        Ok(self.forward_with_weights(tape, store, h, support)?.0)
    }
}

/// Adjacency plus self loops as a dense 0/1 matrix.
pub fn attention_support(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Tensor {
    let mut s = Tensor::identity(n);
    for (a, b) in edges {
        s.set(a, b, 1.0);
        s.set(b, a, 1.0);
    }
    s
}
