//! Response models `g(j; θ)`: global parameters shared by all students, a
//! small per-student local parameter vector adapted by a few gradient steps,
//! and the meta-set loss used by the outer level.

mod fit;
mod irt;
mod mlp;

pub use fit::{fit_irt_mle, irt_map_ability, IrtFit};
pub use irt::{IrtGlobalParams, IrtGrad, IrtLocalParams};
pub use mlp::{MlpGlobalParams, MlpGrad, MlpLocalParams, DEFAULT_DROPOUT, DEFAULT_HIDDEN};

use serde::{Deserialize, Serialize};

use crate::diffcore::{bce_loss, OptimizerState};
use crate::error::{Error, Result};
use crate::policy::{select_uncertain, AvailabilityMask};
use crate::rng::StreamRng;
use crate::scalar::Scalar;

/// Gradient container matching a model's global parameters.
pub trait GlobalGrad<S: Scalar>: Clone + Send + Sync {
    fn add_assign(&mut self, other: &Self);
    fn scale(&mut self, s: S);
    /// Question-side groups (difficulties, network weights), in the order of
    /// [`ResponseModel::question_params_mut`].
    fn question_groups(&self) -> Vec<&[S]>;
    /// Student-side groups (prior mean, input vector).
    fn student_groups(&self) -> Vec<&[S]>;
}

/// Output of evaluating a local model on a meta set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaEval<S> {
    /// Mean binary cross-entropy.
    pub loss: S,
    /// Fraction of correct 0/1 predictions; `p = 0.5` predicts 0.
    pub accuracy: f64,
    pub probs: Vec<S>,
}

/// First-order meta-gradient of the mean meta loss.
#[derive(Debug, Clone)]
pub struct MetaGrads<S, G> {
    pub eval: MetaEval<S>,
    /// `∇_θ L(θ*, Γ)`.
    pub local: Vec<S>,
    /// Question-side direct gradient with `θ*` fixed; the student-side groups
    /// carry `∇_θ L` mapped onto the initialization it was adapted from.
    pub global: G,
}

pub trait ResponseModel<S: Scalar>: Clone + Send + Sync {
    type Local: AsRef<[S]> + AsMut<[S]> + Clone + Send + Sync + std::fmt::Debug;
    type Grad: GlobalGrad<S>;

    fn num_questions(&self) -> usize;

    /// Local parameters at the global initialization.
    fn init_local(&self) -> Self::Local;

    /// Probabilities of a correct answer. `dropout` carries the RNG for a
    /// fresh mask; `None` is evaluation mode.
    fn predict_many(
        &self,
        local: &Self::Local,
        questions: &[usize],
        dropout: Option<&mut StreamRng>,
    ) -> Result<Vec<S>>;

    /// Summed loss over `responses` and its gradient with respect to the
    /// local parameters, from a single forward pass.
    fn inner_loss_grad(
        &self,
        local: &Self::Local,
        responses: &[(usize, bool)],
        dropout: Option<&mut StreamRng>,
    ) -> Result<(S, Vec<S>)>;

    /// Gradient of the single-response loss `ℓ(y, g(j; θ))` in evaluation mode.
    fn response_grad(&self, local: &Self::Local, question: usize, correct: bool) -> Result<Vec<S>>;

    /// Hessian-vector product of the summed inner loss in evaluation mode.
    fn inner_hvp(&self, local: &Self::Local, responses: &[(usize, bool)], v: &[S]) -> Result<Vec<S>>;

    /// Mean meta loss with first-order gradients for both levels.
    fn meta_grads(
        &self,
        local: &Self::Local,
        meta: &[(usize, bool)],
        dropout: Option<&mut StreamRng>,
    ) -> Result<MetaGrads<S, Self::Grad>>;

    fn zero_grad(&self) -> Self::Grad;

    fn question_params_mut(&mut self) -> Vec<&mut [S]>;
    fn student_params_mut(&mut self) -> Vec<&mut [S]>;

    fn check_question(&self, j: usize) -> Result<()> {
        if j >= self.num_questions() {
            Err(Error::QuestionOutOfRange {
                index: j,
                num_questions: self.num_questions(),
            })
        } else {
            Ok(())
        }
    }

    fn predict(&self, local: &Self::Local, j: usize) -> Result<S> {
        Ok(self.predict_many(local, &[j], None)?[0])
    }

    /// Uncertainty sampling: the available question whose predicted
    /// probability is closest to one half.
    fn active_select(&self, local: &Self::Local, mask: &AvailabilityMask) -> Result<usize> {
        let all: Vec<usize> = (0..self.num_questions()).collect();
        let probs = self.predict_many(local, &all, None)?;
        select_uncertain(&probs, mask)
    }
}

/// Inner-loop configuration: `steps` full-batch gradient steps of size
/// `learning_rate` starting from the global initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Disables dropout during adaptation.
    pub eval_mode: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            steps: 5,
            learning_rate: 0.1,
            eval_mode: false,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "inner learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Adapts local parameters to the administered responses. An empty list
/// returns the initialization unchanged.
pub fn inner_adapt<S: Scalar, M: ResponseModel<S>>(
    model: &M,
    administered: &[(usize, bool)],
    cfg: &AdaptConfig,
    mut rng: Option<&mut StreamRng>,
) -> Result<M::Local> {
    cfg.validate()?;
    let mut local = model.init_local();
    if administered.is_empty() {
        return Ok(local);
    }
    let lr = S::lit(cfg.learning_rate);
    for _ in 0..cfg.steps {
        let dropout = if cfg.eval_mode { None } else { rng.as_deref_mut() };
        let (_, grad) = model.inner_loss_grad(&local, administered, dropout)?;
        for (p, g) in local.as_mut().iter_mut().zip(&grad) {
            *p -= lr * *g;
        }
        if local.as_ref().iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("inner adaptation diverged"));
        }
    }
    Ok(local)
}

/// Scores a local model on a meta set.
pub fn meta_loss<S: Scalar, M: ResponseModel<S>>(
    model: &M,
    local: &M::Local,
    meta: &[(usize, bool)],
    dropout: Option<&mut StreamRng>,
) -> Result<MetaEval<S>> {
    if meta.is_empty() {
        return Err(Error::EmptyMetaSet);
    }
    let questions: Vec<usize> = meta.iter().map(|&(q, _)| q).collect();
    let probs = model.predict_many(local, &questions, dropout)?;
    Ok(summarize(&probs, meta))
}

pub(crate) fn summarize<S: Scalar>(probs: &[S], meta: &[(usize, bool)]) -> MetaEval<S> {
    let n = S::from_usize_lossy(meta.len());
    let loss = probs
        .iter()
        .zip(meta)
        .map(|(&p, &(_, y))| bce_loss(p, y))
        .sum::<S>()
        / n;
    let hits = probs
        .iter()
        .zip(meta)
        .filter(|(&p, &(_, y))| predicts_correct(p) == y)
        .count();
    MetaEval {
        loss,
        accuracy: hits as f64 / meta.len() as f64,
        probs: probs.to_vec(),
    }
}

/// Thresholded prediction; a probability of exactly 0.5 predicts 0.
#[inline]
pub fn predicts_correct<S: Scalar>(p: S) -> bool {
    p > S::lit(0.5)
}

/// Question-side parameters step with Adam, student-side with SGD-momentum.
#[derive(Debug, Clone)]
pub struct GlobalOptimizers<S> {
    pub question: OptimizerState<S>,
    pub student: OptimizerState<S>,
}

impl<S: Scalar> GlobalOptimizers<S> {
    pub fn apply<M: ResponseModel<S>>(&mut self, model: &mut M, grad: &M::Grad) -> Result<()> {
        let qg = grad.question_groups();
        self.question.step(&mut model.question_params_mut(), &qg)?;
        let sg = grad.student_groups();
        self.student.step(&mut model.student_params_mut(), &sg)?;
        Ok(())
    }
}

/// First-order outer update: averages per-student meta-gradients (in the
/// given order) and applies one optimizer step to each parameter side.
pub fn outer_update<S: Scalar, M: ResponseModel<S>>(
    model: &mut M,
    grads: &[M::Grad],
    optimizers: &mut GlobalOptimizers<S>,
) -> Result<()> {
    let first = grads
        .first()
        .ok_or_else(|| Error::Config("outer update needs a nonempty batch".into()))?;
    let mut total = first.clone();
    for g in &grads[1..] {
        total.add_assign(g);
    }
    total.scale(S::one() / S::from_usize_lossy(grads.len()));
    optimizers.apply(model, &total)
}
