use rand::Rng;

use crate::diffcore::{tanh_backward, tanh_forward, Affine, AffineGrad};
use crate::error::Result;
use crate::scalar::Scalar;

/// Fully connected network `in → hidden → hidden → out` with tanh hidden
/// activations and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhMlp<S> {
    pub layers: [Affine<S>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TanhMlpGrad<S> {
    pub layers: [AffineGrad<S>; 3],
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct TanhMlpCache<S> {
    input: Vec<S>,
    h1: Vec<S>,
    h2: Vec<S>,
}

impl<S: Scalar> TanhMlp<S> {
    /// Hidden layers ~ U(±1/sqrt(fan_in)); the output layer starts at zero.
    pub fn init<R: Rng + ?Sized>(inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            layers: [
                Affine::uniform(inputs, hidden, rng),
                Affine::uniform(hidden, hidden, rng),
                Affine::zeros(hidden, outputs),
            ],
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers[2].outputs()
    }

    pub fn forward(&self, input: &[S]) -> Result<(Vec<S>, TanhMlpCache<S>)> {
        let h1 = tanh_forward(&self.layers[0].forward(input)?);
        let h2 = tanh_forward(&self.layers[1].forward(&h1)?);
        let out = self.layers[2].forward(&h2)?;
        Ok((
            out,
            TanhMlpCache {
                input: input.to_vec(),
                h1,
                h2,
            },
        ))
    }

    /// Accumulates parameter gradients for `dL/dout` into `grad`.
    pub fn backward(&self, cache: &TanhMlpCache<S>, dout: &[S], grad: &mut TanhMlpGrad<S>) -> Result<()> {
        let [g0, g1, g2] = &mut grad.layers;
        let dh2 = self.layers[2].backward(&cache.h2, dout, g2)?;
        let dh1 = self.layers[1].backward(&cache.h1, &tanh_backward(&cache.h2, &dh2), g1)?;
        self.layers[0].backward(&cache.input, &tanh_backward(&cache.h1, &dh1), g0)?;
        Ok(())
    }

    pub fn zero_grad(&self) -> TanhMlpGrad<S> {
        TanhMlpGrad {
            layers: [
                self.layers[0].zero_grad(),
                self.layers[1].zero_grad(),
                self.layers[2].zero_grad(),
            ],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [S]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Affine::num_params).sum()
    }

    /// Flattened copy of all parameters in [`Self::params_mut`] order.
    pub fn flat_params(&self) -> Vec<S> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[S]) {
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }
}

impl<S: Scalar> TanhMlpGrad<S> {
    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add(b);
        }
    }

    pub fn scale(&mut self, s: S) {
        self.layers.iter_mut().for_each(|l| l.scale(s));
    }

    pub fn groups(&self) -> Vec<&[S]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn flat(&self) -> Vec<S> {
        self.groups().into_iter().flatten().copied().collect()
    }

    pub fn is_zero(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|v| *v == S::zero()))
    }
}
