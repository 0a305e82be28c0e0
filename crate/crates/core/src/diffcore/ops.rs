//! Elementwise activations and the affine layer, each with a hand-written
//! backward pass.

use rand::Rng;

use super::array::{axpy, DenseArray};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub fn sigmoid_vec<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| sigmoid(v)).collect()
}

#[inline]
pub fn relu<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x
    } else {
        S::zero()
    }
}

pub fn relu_forward<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| relu(v)).collect()
}

/// Gradient through ReLU given the pre-activation input. The subgradient at
/// exactly zero is taken as 0.
pub fn relu_backward<S: Scalar>(pre: &[S], dy: &[S]) -> Vec<S> {
    pre.iter()
        .zip(dy)
        .map(|(&x, &g)| if x > S::zero() { g } else { S::zero() })
        .collect()
}

pub fn tanh_forward<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Gradient through tanh given its output `y = tanh(x)`.
pub fn tanh_backward<S: Scalar>(y: &[S], dy: &[S]) -> Vec<S> {
    y.iter()
        .zip(dy)
        .map(|(&t, &g)| g * (S::one() - t * t))
        .collect()
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask<S: Scalar, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Result<Vec<S>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = S::lit(1.0 / (1.0 - rate));
    Ok((0..len)
        .map(|_| {
            if rate > 0.0 && rng.random::<f64>() < rate {
                S::zero()
            } else {
                keep
            }
        })
        .collect())
}

/// Applies a dropout mask; `None` is evaluation mode (identity).
pub fn dropout_apply<S: Scalar>(x: &[S], mask: Option<&[S]>) -> Vec<S> {
    match mask {
        Some(m) => x.iter().zip(m).map(|(&v, &k)| v * k).collect(),
        None => x.to_vec(),
    }
}

/// `y = W x + b` with `W` of shape `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<S> {
    pub weight: DenseArray<S>,
    pub bias: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrad<S> {
    pub weight: DenseArray<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Affine<S> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: DenseArray::zeros(&[outputs, inputs]),
            bias: vec![S::zero(); outputs],
        }
    }

    /// Weights ~ U(-1/sqrt(in), 1/sqrt(in)), biases zero.
    pub fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        Self {
            weight: DenseArray::from_fn(outputs, inputs, |_, _| {
                S::lit(rng.random_range(-bound..=bound))
            }),
            bias: vec![S::zero(); outputs],
        }
    }

    pub fn from_parts(weight: DenseArray<S>, bias: Vec<S>) -> Result<Self> {
        if weight.shape().len() != 2 || weight.rows() != bias.len() {
            return Err(Error::Dimension(format!(
                "affine weight {:?} with bias[{}]",
                weight.shape(),
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[S]) -> Result<Vec<S>> {
        let mut y = self.weight.matvec(x)?;
        for (yi, &bi) in y.iter_mut().zip(&self.bias) {
            *yi += bi;
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[S], dy: &[S], grad: &mut AffineGrad<S>) -> Result<Vec<S>> {
        if x.len() != self.inputs() || dy.len() != self.outputs() {
            return Err(Error::Dimension(format!(
                "affine backward {:?} with x[{}], dy[{}]",
                self.weight.shape(),
                x.len(),
                dy.len()
            )));
        }
        grad.weight.add_outer(S::one(), dy, x);
        axpy(S::one(), dy, &mut grad.bias);
        self.weight.matvec_t(dy)
    }

    pub fn zero_grad(&self) -> AffineGrad<S> {
        AffineGrad {
            weight: DenseArray::zeros(self.weight.shape()),
            bias: vec![S::zero(); self.bias.len()],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

impl<S: Scalar> AffineGrad<S> {
    pub fn scale(&mut self, s: S) {
        self.weight.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        self.bias.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add(&mut self, other: &Self) {
        axpy(S::one(), other.weight.as_slice(), self.weight.as_mut_slice());
        axpy(S::one(), &other.bias, &mut self.bias);
    }
}
