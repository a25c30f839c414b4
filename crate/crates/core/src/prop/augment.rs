use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::Rng;

fn jitter(p: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return p.to_vec();
    }
    let max = p.iter().copied().fold(0.0f64, f64::max);
    let normal = Normal::new(0.0, sigma * (1.0 + max)).expect("finite noise scale");
    p.iter().map(|x| x + normal.sample(rng)).collect()
}

/// Adds Gaussian noise with standard deviation `sigma * (1 + max(p))`.
pub fn weak_augment(p: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    jitter(p, sigma, rng)
}

/// Cuts `p` into `m` contiguous segments at random distinct positions,
/// shuffles the segments and applies [`weak_augment`]-style noise.
pub fn strong_augment_with(p: &[f64], m: usize, sigma: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if m == 0 || m > p.len() {
        return Err(Error::Config(format!("cannot cut a length-{} series into {m} segments", p.len())));
    }
    let mut cuts: Vec<usize> = index::sample(rng, p.len() - 1, m - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(p.len());
    let mut segments: Vec<&[f64]> = bounds.windows(2).map(|w| &p[w[0]..w[1]]).collect();
    segments.shuffle(rng);
    let permuted: Vec<f64> = segments.concat();
    Ok(jitter(&permuted, sigma, rng))
}

/// Draws the segment count uniformly from `m_lo..=m_hi` (capped at the
/// series length) and calls [`strong_augment_with`].
pub fn strong_augment(p: &[f64], m_lo: usize, m_hi: usize, sigma: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if m_lo < 2 || m_hi < m_lo {
        return Err(Error::Config(format!("invalid segment range [{m_lo}, {m_hi}]")));
    }
    if p.len() < m_lo {
        return Err(Error::Config(format!("series of length {} is shorter than {m_lo} segments", p.len())));
    }
    let m = rng.random_range(m_lo..=m_hi.min(p.len()));
    strong_augment_with(p, m, sigma, rng)
}
