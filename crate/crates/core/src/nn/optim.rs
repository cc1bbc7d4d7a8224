use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{LoatError, Result};

fn check_pair(p: &Tensor, g: &Tensor) -> Result<()> {
    if p.shape() != g.shape() {
        return Err(LoatError::ShapeMismatch {
            expected: p.shape().to_vec(),
            found: g.shape().to_vec(),
            context: "gradient vs parameter".into(),
        });
    }
    if !g.is_finite() {
        return Err(LoatError::NonFinite("gradient".into()));
    }
    Ok(())
}

/// `p ← p − lr·g` for every pair. Validates all pairs before touching any parameter.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], learning_rate: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(LoatError::DimensionMismatch {
            expected: params.len(),
            found: grads.len(),
            context: "parameter/gradient count".into(),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        check_pair(p, g)?;
    }
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= learning_rate * gv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one parameter group; fresh state per training phase.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, grads, self.learning_rate),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if params.len() != grads.len() {
                    return Err(LoatError::DimensionMismatch {
                        expected: params.len(),
                        found: grads.len(),
                        context: "parameter/gradient count".into(),
                    });
                }
                for (p, g) in params.iter().zip(grads) {
                    check_pair(p, g)?;
                }
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.v = self.m.clone();
                }
                self.step += 1;
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
                        let mhat = m[j] / c1;
                        let vhat = v[j] / c2;
                        *pv -= self.learning_rate * mhat / (vhat.sqrt() + eps);
                    }
                }
                Ok(())
            }
        }
    }
}
