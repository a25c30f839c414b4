use rand::Rng as _;

use crate::datamodel::ModalityMask;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::rng::{stream, Rng};

/// `teacher <- gamma * teacher + (1 - gamma) * student`, matching parameters
/// by name after their network prefix.
pub fn ema_update(teacher: &mut ParamStore, student: &ParamStore, gamma: f64) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::Dimension("teacher and student have different parameter counts".into()));
    }
    let pairs: Vec<(String, String)> = teacher
        .names()
        .zip(student.names())
        .map(|(t, s)| (t.to_string(), s.to_string()))
        .collect();
    for (tn, sn) in pairs {
        if strip(&tn) != strip(&sn) {
            return Err(Error::Dimension(format!("parameter `{tn}` has no student counterpart (`{sn}`)")));
        }
        let s = student.get(&sn)?;
        let t = teacher.get_mut(&tn)?;
        if !t.same_shape(s) {
            return Err(Error::Dimension(format!("`{tn}` shape {:?} vs {:?}", t.shape(), s.shape())));
        }
        for (a, b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = gamma * *a + (1.0 - gamma) * b;
        }
    }
    Ok(())
}

fn strip(name: &str) -> &str {
    name.split_once('.').map_or(name, |(_, rest)| rest)
}

/// Linear ramp from `gamma0` to `gamma_n` over `warmup` steps, then constant.
pub fn gamma_schedule(step: u64, gamma0: f64, gamma_n: f64, warmup: u64) -> f64 {
    if warmup == 0 {
        return gamma_n;
    }
    let frac = (step as f64 / warmup as f64).min(1.0);
    gamma0 + (gamma_n - gamma0) * frac
}

/// `min(B, floor((start + step * epoch) * B))`, at least 1. Fractions are
/// handled in basis points so that e.g. 0.35 * 20 is exactly 7.
pub fn pool_size(batch: usize, epoch: usize, start: f64, step: f64) -> usize {
    let bp = |x: f64| (x * 10_000.0).round() as u128;
    let frac = bp(start) + bp(step) * epoch as u128;
    let k = (batch as u128 * frac / 10_000).min(batch as u128) as usize;
    k.max(1).min(batch.max(1))
}

/// Keeps each modality independently with probability `keep`, redrawing
/// until at least one is kept.
pub fn sample_mask_with(keep: f64, rng: &mut Rng) -> Result<ModalityMask> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::Config(format!("keep probability {keep} outside (0, 1]")));
    }
    loop {
        let w: [f64; 4] = std::array::from_fn(|_| if rng.random_bool(keep) { 1.0 } else { 0.0 });
        if w.iter().any(|&x| x > 0.0) {
            return ModalityMask::new(w);
        }
    }
}

/// Mask for training step `step` under `seed`.
pub fn sample_mask(keep: f64, seed: u64, step: u64) -> Result<ModalityMask> {
    sample_mask_with(keep, &mut stream(seed ^ 0x6d61_736b, step))
}
