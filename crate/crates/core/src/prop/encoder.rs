use crate::error::{Error, Result};
use crate::nn::{dense, Activation, LstmCell, MultiHeadAttention, ParamStore, Tape, Tensor, Var};
use crate::rng::Rng;

/// LSTM over the series, causal multi-head attention over the LSTM
/// latents, mean pooling of the contexts and a linear output map.
#[derive(Clone, Debug, PartialEq)]
pub struct PropNet {
    pub seq_len: usize,
    pub hidden: usize,
    pub heads: usize,
    pub dim: usize,
    pub horizon: usize,
}

/// Per-step latents and contexts are `(B*L) x hidden`; `summary` is `B x dim`.
#[derive(Clone, Copy, Debug)]
pub struct PropForward {
    pub latents: Var,
    pub contexts: Var,
    pub summary: Var,
}

pub const OUT_WEIGHT: &str = "prop.out.weight";
pub const OUT_BIAS: &str = "prop.out.bias";

impl PropNet {
    fn lstm(&self) -> LstmCell {
        LstmCell::new("prop.lstm", 1, self.hidden)
    }

    fn attention(&self) -> Result<MultiHeadAttention> {
        MultiHeadAttention::new("prop.attn", self.hidden, self.heads)
    }

    pub fn predictor_name(j: usize) -> String {
        format!("prop.predict.{j}")
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.lstm().init(store, rng)?;
        self.attention()?.init(store, rng)?;
        store.insert(OUT_WEIGHT, Tensor::xavier(self.dim, self.hidden, rng))?;
        store.insert(OUT_BIAS, Tensor::zeros(&[1, self.dim]))?;
        for j in 1..=self.horizon {
            store.insert(Self::predictor_name(j), Tensor::xavier(self.hidden, self.hidden, rng))?;
        }
        Ok(())
    }

    /// `x` is `B x L` (one series per row).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<PropForward> {
        let (b, l) = (tape.value(x).rows(), tape.value(x).cols());
        if l != self.seq_len {
            return Err(Error::Dimension(format!("series of length {l}, encoder expects {}", self.seq_len)));
        }
        let lstm = self.lstm();
        let vars = lstm.bind(tape, store)?;
        let mut state = lstm.zero_state(tape, b);
        let mut steps = Vec::with_capacity(l);
        for t in 0..l {
            let xt = tape.slice_cols(x, t, t + 1);
            state = lstm.step(tape, &vars, xt, state)?;
            steps.push(state.0);
        }
        let latents = tape.stack_seq(&steps);
        let contexts = self.attention()?.forward(tape, store, latents, l, true)?;
        let pooled = tape.block_mean_rows(contexts, l);
        let w = tape.param(store, OUT_WEIGHT)?;
        let bias = tape.param(store, OUT_BIAS)?;
        let summary = dense(tape, pooled, w, Some(bias), Activation::None)?;
        Ok(PropForward {
            latents,
            contexts,
            summary,
        })
    }
}
