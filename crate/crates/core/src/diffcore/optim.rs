use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { lr, momentum }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer over a fixed list of parameter groups. Moment
/// buffers are allocated on the first step and their shapes are checked on
/// every later step.
#[derive(Debug, Clone)]
pub struct OptimizerState<S> {
    kind: OptimizerKind,
    step: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut [S]], grads: &[&[S]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!(
                "{} parameter groups but {} gradient groups",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::Dimension(format!(
                    "group {i}: {} parameters but {} gradients",
                    p.len(),
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("non-finite gradient in group {i}")));
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![S::zero(); g.len()]).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
        } else if self.first.len() != grads.len()
            || self.first.iter().zip(grads).any(|(b, g)| b.len() != g.len())
        {
            return Err(Error::Dimension("optimizer buffers do not match parameter shapes".into()));
        }
        self.step += 1;

        match self.kind {
            OptimizerKind::SgdMomentum { lr, momentum } => {
                let (lr, mu) = (S::lit(lr), S::lit(momentum));
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((pi, &gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                        *vi = mu * *vi + gi;
                        *pi -= lr * *vi;
                    }
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = S::lit(1.0 - beta1.powi(t));
                let c2 = S::lit(1.0 - beta2.powi(t));
                let (lr, b1, b2, eps) = (S::lit(lr), S::lit(beta1), S::lit(beta2), S::lit(eps));
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pi, &gi), mi), vi) in
                        p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mi = b1 * *mi + (S::one() - b1) * gi;
                        *vi = b2 * *vi + (S::one() - b2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *pi -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
