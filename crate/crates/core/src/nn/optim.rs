use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub kind: OptimKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-3,
            kind: OptimKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimConfig {
            learning_rate,
            kind: OptimKind::Sgd,
            ..Default::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimConfig {
            learning_rate,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// SGD or Adam over every parameter of a store.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimConfig,
    steps: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Optimizer {
            cfg,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn set_learning_rate(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        self.cfg.learning_rate = lr;
        Ok(())
    }

    /// Applies one update and clears the consumed gradients. Every parameter
    /// must carry a gradient; nothing is modified otherwise. Returns the
    /// names of the updated parameters in update order.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<Vec<String>> {
        let names: Vec<String> = params.names().map(str::to_string).collect();
        if let Some(missing) = names.iter().find(|n| params.grad(n).is_none()) {
            return Err(Error::MissingGradient(missing.clone()));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let cfg = self.cfg.clone();
        for name in &names {
            let g = params.grad(name).cloned().expect("checked above");
            let p = params.get_mut(name)?;
            match cfg.kind {
                OptimKind::Sgd => {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= cfg.learning_rate * d;
                    }
                }
                OptimKind::Adam => {
                    let shape = [p.rows(), p.cols()];
                    let m = self
                        .first
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(&shape));
                    let v = self
                        .second
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(&shape));
                    let bc1 = 1.0 - cfg.beta1.powi(t);
                    let bc2 = 1.0 - cfg.beta2.powi(t);
                    for (((x, d), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * d;
                        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * d * d;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *x -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
                    }
                }
            }
        }
        params.zero_grad();
        Ok(names)
    }
}
