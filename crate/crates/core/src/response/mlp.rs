use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{summarize, GlobalGrad, MetaGrads, ResponseModel};
use crate::diffcore::{
    axpy, dot, dropout_apply, dropout_mask, label, relu_backward, relu_forward, sigmoid, Affine,
    AffineGrad, DenseArray,
};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scalar::Scalar;

pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_DROPOUT: f64 = 0.2;

/// Neural response model `σ(W² · Dropout(ReLU(W¹ w + b¹)) + b²)[j]`.
///
/// Only the input vector `w` is adapted per student; the layers are shared.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGlobalParams<S> {
    pub input: Vec<S>,
    pub hidden: Affine<S>,
    pub output: Affine<S>,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpLocalParams<S> {
    pub input: Vec<S>,
}

impl<S> AsRef<[S]> for MlpLocalParams<S> {
    fn as_ref(&self) -> &[S] {
        &self.input
    }
}

impl<S> AsMut<[S]> for MlpLocalParams<S> {
    fn as_mut(&mut self) -> &mut [S] {
        &mut self.input
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad<S> {
    pub input: Vec<S>,
    pub hidden: AffineGrad<S>,
    pub output: AffineGrad<S>,
}

impl<S: Scalar> GlobalGrad<S> for MlpGrad<S> {
    fn add_assign(&mut self, other: &Self) {
        axpy(S::one(), &other.input, &mut self.input);
        self.hidden.add(&other.hidden);
        self.output.add(&other.output);
    }

    fn scale(&mut self, s: S) {
        self.input.iter_mut().for_each(|v| *v *= s);
        self.hidden.scale(s);
        self.output.scale(s);
    }

    fn question_groups(&self) -> Vec<&[S]> {
        vec![
            self.hidden.weight.as_slice(),
            &self.hidden.bias,
            self.output.weight.as_slice(),
            &self.output.bias,
        ]
    }

    fn student_groups(&self) -> Vec<&[S]> {
        vec![&self.input]
    }
}

/// Hidden activations of one forward pass.
struct Forward<S> {
    pre: Vec<S>,
    /// After ReLU and dropout.
    act: Vec<S>,
    mask: Option<Vec<S>>,
}

impl<S: Scalar> MlpGlobalParams<S> {
    /// Layers ~ U(±1/sqrt(fan_in)), biases zero, input vector ~ N(0, 0.01²).
    pub fn init<R: Rng + ?Sized>(
        num_questions: usize,
        hidden: usize,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if num_questions == 0 || hidden == 0 {
            return Err(Error::Config("MLP needs Q >= 1 and a nonempty hidden layer".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let hidden_layer = Affine::uniform(hidden, hidden, rng);
        let output = Affine::uniform(hidden, num_questions, rng);
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        let input = (0..hidden).map(|_| S::lit(normal.sample(rng))).collect();
        Ok(Self {
            input,
            hidden: hidden_layer,
            output,
            dropout_rate,
        })
    }

    pub fn from_parts(input: Vec<S>, hidden: Affine<S>, output: Affine<S>, dropout_rate: f64) -> Result<Self> {
        let h = input.len();
        if hidden.inputs() != h || hidden.outputs() != h || output.inputs() != h {
            return Err(Error::Dimension(format!(
                "input[{h}], hidden {:?}, output {:?}",
                hidden.weight.shape(),
                output.weight.shape()
            )));
        }
        Ok(Self {
            input,
            hidden,
            output,
            dropout_rate,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.input.len()
    }

    fn forward(&self, input: &[S], dropout: Option<&mut StreamRng>) -> Result<Forward<S>> {
        let pre = self.hidden.forward(input)?;
        let h = relu_forward(&pre);
        let mask = match dropout {
            Some(r) if self.dropout_rate > 0.0 => Some(dropout_mask(h.len(), self.dropout_rate, r)?),
            _ => None,
        };
        let act = dropout_apply(&h, mask.as_deref());
        Ok(Forward { pre, act, mask })
    }

    #[inline]
    fn logit(&self, act: &[S], j: usize) -> S {
        dot(self.output.weight.row(j), act) + self.output.bias[j]
    }

    /// `dL/dinput` given `dL/dact` (after dropout).
    fn backprop_input(&self, fwd: &Forward<S>, dact: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        let dh = dropout_apply(dact, fwd.mask.as_deref());
        let dpre = relu_backward(&fwd.pre, &dh);
        let dinput = self.hidden.weight.matvec_t(&dpre)?;
        Ok((dinput, dpre))
    }
}

impl<S: Scalar> ResponseModel<S> for MlpGlobalParams<S> {
    type Local = MlpLocalParams<S>;
    type Grad = MlpGrad<S>;

    fn num_questions(&self) -> usize {
        self.output.outputs()
    }

    fn init_local(&self) -> Self::Local {
        MlpLocalParams {
            input: self.input.clone(),
        }
    }

    fn predict_many(
        &self,
        local: &Self::Local,
        questions: &[usize],
        dropout: Option<&mut StreamRng>,
    ) -> Result<Vec<S>> {
        for &j in questions {
            self.check_question(j)?;
        }
        let fwd = self.forward(&local.input, dropout)?;
        Ok(questions.iter().map(|&j| sigmoid(self.logit(&fwd.act, j))).collect())
    }

    fn inner_loss_grad(
        &self,
        local: &Self::Local,
        responses: &[(usize, bool)],
        dropout: Option<&mut StreamRng>,
    ) -> Result<(S, Vec<S>)> {
        for &(j, _) in responses {
            self.check_question(j)?;
        }
        let fwd = self.forward(&local.input, dropout)?;
        let mut dact = vec![S::zero(); fwd.act.len()];
        let mut loss = S::zero();
        for &(j, y) in responses {
            let (l, g) = crate::diffcore::bce_with_logit(self.logit(&fwd.act, j), y);
            loss += l;
            axpy(g, self.output.weight.row(j), &mut dact);
        }
        let (dinput, _) = self.backprop_input(&fwd, &dact)?;
        Ok((loss, dinput))
    }

    fn response_grad(&self, local: &Self::Local, question: usize, correct: bool) -> Result<Vec<S>> {
        Ok(self.inner_loss_grad(local, &[(question, correct)], None)?.1)
    }

    fn inner_hvp(&self, local: &Self::Local, responses: &[(usize, bool)], v: &[S]) -> Result<Vec<S>> {
        // ReLU is piecewise linear, so each logit is locally linear in the
        // input: H = Σ_j p_j (1 - p_j) a_j a_jᵀ with a_j = W¹ᵀ (1[pre > 0] ⊙ W²_j).
        let fwd = self.forward(&local.input, None)?;
        let active: Vec<S> = fwd
            .pre
            .iter()
            .map(|&x| if x > S::zero() { S::one() } else { S::zero() })
            .collect();
        let s: Vec<S> = self
            .hidden
            .weight
            .matvec(v)?
            .into_iter()
            .zip(&active)
            .map(|(a, &m)| a * m)
            .collect();
        let mut acc = vec![S::zero(); fwd.act.len()];
        for &(j, _) in responses {
            self.check_question(j)?;
            let p = sigmoid(self.logit(&fwd.act, j));
            let row = self.output.weight.row(j);
            let c = dot(row, &s);
            axpy(p * (S::one() - p) * c, row, &mut acc);
        }
        for (a, &m) in acc.iter_mut().zip(&active) {
            *a *= m;
        }
        self.hidden.weight.matvec_t(&acc)
    }

    fn meta_grads(
        &self,
        local: &Self::Local,
        meta: &[(usize, bool)],
        dropout: Option<&mut StreamRng>,
    ) -> Result<MetaGrads<S, Self::Grad>> {
        if meta.is_empty() {
            return Err(Error::EmptyMetaSet);
        }
        for &(j, _) in meta {
            self.check_question(j)?;
        }
        let inv = S::one() / S::from_usize_lossy(meta.len());
        let fwd = self.forward(&local.input, dropout)?;
        let mut grad = self.zero_grad();
        let mut dact = vec![S::zero(); fwd.act.len()];
        let mut probs = Vec::with_capacity(meta.len());
        for &(j, y) in meta {
            let p = sigmoid(self.logit(&fwd.act, j));
            probs.push(p);
            let dz = (p - label::<S>(y)) * inv;
            axpy(dz, self.output.weight.row(j), &mut dact);
            axpy(dz, &fwd.act, grad.output.weight.row_mut(j));
            grad.output.bias[j] += dz;
        }
        let (dinput, dpre) = self.backprop_input(&fwd, &dact)?;
        grad.hidden.weight.add_outer(S::one(), &dpre, &local.input);
        axpy(S::one(), &dpre, &mut grad.hidden.bias);
        grad.input = dinput.clone();
        Ok(MetaGrads {
            eval: summarize(&probs, meta),
            local: dinput,
            global: grad,
        })
    }

    fn zero_grad(&self) -> Self::Grad {
        MlpGrad {
            input: vec![S::zero(); self.input.len()],
            hidden: self.hidden.zero_grad(),
            output: AffineGrad {
                weight: DenseArray::zeros(self.output.weight.shape()),
                bias: vec![S::zero(); self.output.bias.len()],
            },
        }
    }

    fn question_params_mut(&mut self) -> Vec<&mut [S]> {
        vec![
            self.hidden.weight.as_mut_slice(),
            &mut self.hidden.bias,
            self.output.weight.as_mut_slice(),
            &mut self.output.bias,
        ]
    }

    fn student_params_mut(&mut self) -> Vec<&mut [S]> {
        vec![&mut self.input]
    }
}
