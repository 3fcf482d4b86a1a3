//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// `θ ← θ - lr·g`.
pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64) {
    assert_eq!(params.len(), grad.len());
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }

    pub fn write_to(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.set_meta(&format!("{prefix}.t"), self.t);
        ck.push(&format!("{prefix}.m"), 1, self.m.len(), self.m.clone());
        ck.push(&format!("{prefix}.v"), 1, self.v.len(), self.v.clone());
    }

    pub fn read_from(ck: &Checkpoint, prefix: &str, n: usize) -> Result<Adam> {
        let get = |name: String| {
            ck.segment(&name)
                .filter(|s| s.values.len() == n)
                .map(|s| s.values.clone())
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks optimizer state `{name}` of length {n}")))
        };
        Ok(Adam {
            m: get(format!("{prefix}.m"))?,
            v: get(format!("{prefix}.v"))?,
            t: ck.meta_value(&format!("{prefix}.t"))?,
            ..Adam::new(0)
        })
    }
}

/// Either optimizer behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(Adam),
    Sgd,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(n)),
            OptimizerKind::Sgd => Optimizer::Sgd,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            Optimizer::Adam(a) => a.step(params, grad, lr),
            Optimizer::Sgd => sgd_step(params, grad, lr),
        }
    }

    pub fn write_to(&self, ck: &mut Checkpoint, prefix: &str) {
        match self {
            Optimizer::Adam(a) => {
                ck.set_meta(&format!("{prefix}.kind"), "adam");
                a.write_to(ck, prefix);
            }
            Optimizer::Sgd => ck.set_meta(&format!("{prefix}.kind"), "sgd"),
        }
    }

    pub fn read_from(ck: &Checkpoint, prefix: &str, n: usize) -> Result<Self> {
        match ck.meta_value::<String>(&format!("{prefix}.kind"))?.as_str() {
            "adam" => Ok(Optimizer::Adam(Adam::read_from(ck, prefix, n)?)),
            "sgd" => Ok(Optimizer::Sgd),
            other => Err(Error::invalid(format!("unknown optimizer `{other}` in checkpoint"))),
        }
    }
}
