use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::{Tape, Tensor, Var};
use crate::rng::Rng;

/// Robust InfoNCE for one positive and one negative similarity.
pub fn rince_pair(s_pos: f64, s_neg: f64, q: f64, lambda: f64) -> f64 {
    let a = (q * s_pos).exp();
    let n = (q * s_neg).exp();
    -a / q + (lambda * (a + n)).powf(q) / q
}

/// Student rows against teacher rows, both L2-normalized; row `i` of the
/// teacher is the positive for student row `i` and every other teacher row
/// is a negative.
pub fn rince_loss(tape: &mut Tape, student: Var, teacher: Var, q: f64, lambda: f64) -> Result<Var> {
    let b = tape.value(student).rows();
    if b < 2 {
        return Err(Error::BatchSize(format!("contrastive loss needs negatives, batch has {b} rows")));
    }
    if tape.value(teacher).rows() != b {
        return Err(Error::Dimension("student and teacher batches differ in size".into()));
    }
    let s = tape.l2_normalize_rows(student);
    let t = tape.l2_normalize_rows(teacher);
    let sims = tape.matmul_nt(s, t);
    Ok(tape.rince(sims, q, lambda))
}

/// Indices of the `k` rows with the largest maximum probability, most
/// confident first; ties go to the lower index.
pub fn select_confident(probs: &Tensor, k: usize) -> Vec<usize> {
    let conf: Vec<f64> = (0..probs.rows())
        .map(|r| probs.row_slice(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut idx: Vec<usize> = (0..probs.rows()).collect();
    idx.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row_slice(r);
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

/// PEER loss with explicit peer pairs: for pool member `pool[n]` the pair
/// `pairs[n] = (j', j'')` contributes `-CE(P(j'), Y(j''))`. `log_probs` is
/// `B x kappa`.
pub fn peer_loss_with_pairs(
    tape: &mut Tape,
    log_probs: Var,
    labels: &[usize],
    pool: &[usize],
    pairs: &[(usize, usize)],
) -> Result<Var> {
    if pool.is_empty() {
        return Err(Error::Pool("confident pool is empty".into()));
    }
    let w = 1.0 / pool.len() as f64;
    let mut entries: Vec<(usize, usize, f64)> = pool.iter().map(|&j| (j, labels[j], -w)).collect();
    if pool.len() > 1 {
        if pairs.len() != pool.len() {
            return Err(Error::Pool(format!("{} peer pairs for a pool of {}", pairs.len(), pool.len())));
        }
        entries.extend(pairs.iter().map(|&(a, b)| (a, labels[b], w)));
    }
    Ok(tape.pick(log_probs, &entries))
}

/// Draws `(j', j'')` independently and uniformly from the pool for each
/// member; a pool of one has no peer term.
pub fn peer_loss(tape: &mut Tape, log_probs: Var, labels: &[usize], pool: &[usize], rng: &mut Rng) -> Result<Var> {
    let pairs: Vec<(usize, usize)> = if pool.len() > 1 {
        pool.iter()
            .map(|_| (pool[rng.random_range(0..pool.len())], pool[rng.random_range(0..pool.len())]))
            .collect()
    } else {
        Vec::new()
    };
    peer_loss_with_pairs(tape, log_probs, labels, pool, &pairs)
}
