//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::nn::params::ParamStore;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::rng::{stream, Rng};

/// Absolute floor of the relative-error denominator, so that gradients that
/// are zero up to round-off do not produce huge ratios.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of a scalar function against central
/// differences for every parameter in `store` and every entry of `inputs`.
///
/// `f` receives a fresh tape, the (possibly perturbed) store and the input
/// leaves, and must return a `1 x 1` node.
pub fn check<F>(store: &ParamStore, inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore, &[Var]) -> Result<Var>,
{
    let eval = |s: &ParamStore, xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, s, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x.clone())).collect();
    let out = f(&mut tape, store, &vars)?;
    let grads = tape.backward(out);
    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    analytic_store.accumulate(&tape, &grads)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |label: String, a: f64, n: f64| {
        let e = relative_error(a, n);
        report.checked += 1;
        if e >= report.max_rel_error {
            report.max_rel_error = e;
            report.worst = format!("{label}: analytic {a:.3e} numeric {n:.3e}");
        }
    };

    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in &names {
        let n = store.get(name)?.len();
        let zeros = Tensor::zeros(&[store.get(name)?.rows(), store.get(name)?.cols()]);
        let ag = analytic_store.grad(name).cloned().unwrap_or(zeros);
        for k in 0..n {
            let mut plus = store.clone();
            plus.get_mut(name)?.data_mut()[k] += eps;
            let mut minus = store.clone();
            minus.get_mut(name)?.data_mut()[k] -= eps;
            let num = (eval(&plus, inputs)? - eval(&minus, inputs)?) / (2.0 * eps);
            record(format!("{name}[{k}]"), ag.data()[k], num);
        }
    }
    for (i, (x, v)) in inputs.iter().zip(&vars).enumerate() {
        let ag = grads.get_or_zeros(*v, x);
        for k in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[k] += eps;
            let fp = eval(store, &xs)?;
            xs[i].data_mut()[k] -= 2.0 * eps;
            let fm = eval(store, &xs)?;
            record(format!("input{i}[{k}]"), ag.data()[k], (fp - fm) / (2.0 * eps));
        }
    }
    Ok(report)
}

/// Reduces a non-scalar node to a scalar with a fixed random projection, so
/// vector-valued outputs can be checked with [`check`].
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let shape = [tape.value(y).rows(), tape.value(y).cols()];
    let mut rng: Rng = stream(seed, 0x9c);
    let r = tape.constant(Tensor::uniform(&shape, 1.0, &mut rng));
    let p = tape.mul(y, r);
    tape.sum(p)
}
