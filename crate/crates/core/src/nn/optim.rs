use serde::{Deserialize, Serialize};

use super::{NamedTensor, Parameterized};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `w <- w - lr * g`
    Sgd,
    /// Gradient descent with bias-corrected first and second moments.
    Adam,
}

/// Applies one update from the accumulated gradients, then clears them.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step<M: Parameterized + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        let mut bad = None;
        model.visit(&mut |p| {
            if bad.is_none() && p.grad.iter().any(|g| !g.is_finite()) {
                bad = Some(p.name().to_string());
            }
        });
        if let Some(name) = bad {
            return Err(Error::Numeric(format!("non-finite gradient in `{name}`")));
        }

        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => model.visit_mut(&mut |p| {
                for (v, g) in p.value.iter_mut().zip(&mut p.grad) {
                    *v -= lr * *g;
                    *g = 0.0;
                }
            }),
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let c1 = 1.0 - b1.powi(self.steps as i32);
                let c2 = 1.0 - b2.powi(self.steps as i32);
                let first = &mut self.first;
                let second = &mut self.second;
                let mut idx = 0;
                model.visit_mut(&mut |p| {
                    if first.len() <= idx {
                        first.push(vec![0.0; p.len()]);
                        second.push(vec![0.0; p.len()]);
                    }
                    let (m, v) = (&mut first[idx], &mut second[idx]);
                    for i in 0..p.len() {
                        let g = p.grad[i];
                        m[i] = b1 * m[i] + (1.0 - b1) * g;
                        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                        p.grad[i] = 0.0;
                    }
                    idx += 1;
                });
            }
        }
        Ok(())
    }

    /// Moment buffers as named tensors, for checkpoints.
    pub fn state_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (i, (m, v)) in self.first.iter().zip(&self.second).enumerate() {
            out.push(NamedTensor {
                name: format!("optimizer.m.{i}"),
                shape: vec![m.len()],
                data: m.clone(),
            });
            out.push(NamedTensor {
                name: format!("optimizer.v.{i}"),
                shape: vec![v.len()],
                data: v.clone(),
            });
        }
        out
    }

    pub fn restore(
        kind: OptimizerKind,
        learning_rate: f64,
        steps: u64,
        tensors: &[NamedTensor],
    ) -> Result<Self> {
        let mut opt = Self::new(kind, learning_rate);
        opt.steps = steps;
        for i in 0.. {
            let find = |prefix: &str| {
                tensors
                    .iter()
                    .find(|t| t.name == format!("optimizer.{prefix}.{i}"))
                    .map(|t| t.data.clone())
            };
            match (find("m"), find("v")) {
                (Some(m), Some(v)) => {
                    opt.first.push(m);
                    opt.second.push(v);
                }
                (None, None) => break,
                _ => return Err(Error::Checkpoint(format!("incomplete optimizer state {i}"))),
            }
        }
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamTensor;

    fn scalar(w: f64) -> ParamTensor {
        ParamTensor::from_values("w", &[1], vec![w]).unwrap()
    }

    #[test]
    fn sgd_on_square() {
        let mut w = scalar(1.0);
        w.grad[0] = 2.0 * w.value[0];
        Optimizer::sgd(0.1).step(&mut w).unwrap();
        assert!((w.value[0] - 0.8).abs() < 1e-15);
        assert_eq!(w.grad[0], 0.0);
    }

    #[test]
    fn zero_gradient_or_rate_is_a_no_op() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut w = scalar(0.37);
            Optimizer::new(kind, 0.1).step(&mut w).unwrap();
            assert_eq!(w.value[0], 0.37);

            let mut w = scalar(0.37);
            w.grad[0] = 5.0;
            Optimizer::new(kind, 0.0).step(&mut w).unwrap();
            assert_eq!(w.value[0], 0.37);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut w = scalar(1.0);
        w.grad[0] = f64::NAN;
        let mut opt = Optimizer::adam(0.1);
        assert!(matches!(opt.step(&mut w), Err(Error::Numeric(_))));
        assert_eq!(w.value[0], 1.0);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut w = scalar(1.0);
        let mut opt = Optimizer::adam(0.01);
        for _ in 0..50 {
            w.grad[0] = 2.0 * w.value[0];
            opt.step(&mut w).unwrap();
        }
        assert!(w.value[0] < 0.6 && w.value[0] > 0.0);
        let restored =
            Optimizer::restore(OptimizerKind::Adam, 0.01, opt.steps(), &opt.state_tensors()).unwrap();
        assert_eq!(restored, opt);
    }
}
