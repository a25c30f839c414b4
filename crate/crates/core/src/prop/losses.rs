use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tape, Tensor, Var};
use crate::prop::encoder::PropNet;

/// Mean over anchor rows of `-log softmax(scores)[row][positive]`.
fn info_nce(tape: &mut Tape, scores: Var, positives: &[usize]) -> Var {
    let ls = tape.log_softmax_rows(scores);
    let w = -1.0 / positives.len() as f64;
    let entries: Vec<(usize, usize, f64)> = positives.iter().enumerate().map(|(r, &c)| (r, c, w)).collect();
    tape.pick(ls, &entries)
}

/// Cross-view predictive loss. The context of view `a` at step `t` scores,
/// through `W_j`, every latent of view `b` at steps `t+1..=t+k` across the
/// batch; the matching instance at `t+j` is the positive.
///
/// `contexts_a` and `latents_b` are `(B*L) x H`.
pub fn temporal_contrast_loss(
    tape: &mut Tape,
    store: &ParamStore,
    contexts_a: Var,
    latents_b: Var,
    seq_len: usize,
    t: usize,
    k: usize,
) -> Result<Var> {
    if k == 0 || t + k >= seq_len {
        return Err(Error::Config(format!(
            "prediction horizon {k} from step {t} exceeds series length {seq_len}"
        )));
    }
    let rows = tape.value(contexts_a).rows();
    let b = rows / seq_len;
    let anchors: Vec<usize> = (0..b).map(|i| i * seq_len + t).collect();
    let ctx = tape.select_rows(contexts_a, &anchors);
    let targets: Vec<usize> = (0..b).flat_map(|i| (1..=k).map(move |s| i * seq_len + t + s)).collect();
    let cand = tape.select_rows(latents_b, &targets);
    let mut total: Option<Var> = None;
    for j in 1..=k {
        let w = tape.param(store, &PropNet::predictor_name(j))?;
        let pred = tape.matmul_nt(ctx, w);
        let scores = tape.matmul_nt(pred, cand);
        let positives: Vec<usize> = (0..b).map(|i| i * k + (j - 1)).collect();
        let l = info_nce(tape, scores, &positives);
        total = Some(match total {
            Some(acc) => tape.add(acc, l),
            None => l,
        });
    }
    Ok(tape.scale(total.expect("k >= 1"), 1.0 / k as f64))
}

/// Candidate set of the contextual loss for each anchor view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextNegatives {
    /// The other augmentation of every instance; the anchor's own is the
    /// positive.
    #[default]
    CrossView,
    /// Both augmentations of every other instance plus the positive.
    AllViews,
}

const EXCLUDED: f64 = -1e30;

fn one_direction(tape: &mut Tape, a: Var, b: Var, tau: f64, negatives: ContextNegatives) -> Var {
    let n = tape.value(a).rows();
    let cross = tape.matmul_nt(a, b);
    let cross = tape.scale(cross, 1.0 / tau);
    let logits = match negatives {
        ContextNegatives::CrossView => cross,
        ContextNegatives::AllViews => {
            let own = tape.matmul_nt(a, a);
            let own = tape.scale(own, 1.0 / tau);
            let mut mask = Tensor::zeros(&[n, n]);
            for i in 0..n {
                mask.set(i, i, EXCLUDED);
            }
            let mask = tape.constant(mask);
            let own = tape.add(own, mask);
            tape.concat_cols(&[cross, own])
        }
    };
    let positives: Vec<usize> = (0..n).collect();
    info_nce(tape, logits, &positives)
}

/// Symmetric NT-Xent between the summaries of the two views (rows are
/// L2-normalized first), averaged over both anchor directions.
pub fn contextual_contrast_loss(tape: &mut Tape, za: Var, zb: Var, tau: f64, negatives: ContextNegatives) -> Result<Var> {
    let n = tape.value(za).rows();
    if n < 2 {
        return Err(Error::Config(format!("contextual contrast needs a batch of at least 2, got {n}")));
    }
    if !(tau > 0.0) {
        return Err(Error::Config("temperature must be > 0".into()));
    }
    let a = tape.l2_normalize_rows(za);
    let b = tape.l2_normalize_rows(zb);
    let ab = one_direction(tape, a, b, tau, negatives);
    let ba = one_direction(tape, b, a, tau, negatives);
    let s = tape.add(ab, ba);
    Ok(tape.scale(s, 0.5))
}
