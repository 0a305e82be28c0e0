use serde::{Deserialize, Serialize};

use crate::diffcore::{cg_solve, dot, softmax_backward};
use crate::error::{Error, Result};
use crate::policy::{AvailabilityMask, PolicyNet, PolicyOutput, TanhMlpGrad};
use crate::response::ResponseModel;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMode {
    /// Scalar local parameter: divide by the damped second derivative.
    ExactScalar,
    /// Conjugate gradients on Hessian-vector products.
    #[default]
    Cg,
    /// Replace the Hessian by the identity.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfluenceConfig {
    pub hessian_mode: HessianMode,
    pub damping: f64,
    pub cg_iterations: usize,
    pub cg_tolerance: f64,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self {
            hessian_mode: HessianMode::Cg,
            damping: 0.01,
            cg_iterations: 20,
            cg_tolerance: 1e-10,
        }
    }
}

/// Influence of up-weighting each candidate question on the meta loss,
/// stored densely over all questions. Entries outside `defined` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceScores<S> {
    pub values: Vec<S>,
    pub defined: Vec<bool>,
}

impl<S: Scalar> InfluenceScores<S> {
    pub fn get(&self, j: usize) -> Option<S> {
        self.defined.get(j).copied().unwrap_or(false).then(|| self.values[j])
    }
}

/// `𝓘(j) = −∇L(θ*, Γ)ᵀ (H + λ_d I)⁻¹ ∇ℓ(y_j, g(j; θ*))` for every candidate
/// `(j, y_j)`, with `H` the Hessian of the summed inner loss over
/// `administered` at `local`.
pub fn influence_scores<S: Scalar, M: ResponseModel<S>>(
    model: &M,
    local: &M::Local,
    candidates: &[(usize, bool)],
    administered: &[(usize, bool)],
    meta: &[(usize, bool)],
    cfg: &InfluenceConfig,
) -> Result<InfluenceScores<S>> {
    let meta_grad = model.meta_grads(local, meta, None)?.local;
    let q = model.num_questions();
    let mut values = vec![S::zero(); q];
    let mut defined = vec![false; q];
    if candidates.is_empty() {
        return Ok(InfluenceScores { values, defined });
    }
    let damping = S::lit(cfg.damping);
    let u: Vec<S> = match cfg.hessian_mode {
        HessianMode::Identity => meta_grad,
        HessianMode::ExactScalar => {
            if meta_grad.len() != 1 {
                return Err(Error::Config(format!(
                    "exact-scalar Hessian needs one local parameter, model has {}",
                    meta_grad.len()
                )));
            }
            let h = model.inner_hvp(local, administered, &[S::one()])?[0] + damping;
            if !(h > S::zero()) {
                return Err(Error::SingularHessian(format!("damped curvature {h}")));
            }
            vec![meta_grad[0] / h]
        }
        HessianMode::Cg => {
            if meta_grad.iter().all(|g| *g == S::zero()) {
                meta_grad
            } else {
                let mut hvp_err = None;
                let outcome = cg_solve(
                    |v| match model.inner_hvp(local, administered, v) {
                        Ok(hv) => hv,
                        Err(e) => {
                            hvp_err.get_or_insert(e);
                            vec![S::zero(); v.len()]
                        }
                    },
                    &meta_grad,
                    damping,
                    cfg.cg_iterations,
                    S::lit(cfg.cg_tolerance),
                );
                if let Some(e) = hvp_err {
                    return Err(e);
                }
                outcome?.solution
            }
        }
    };
    for &(j, y) in candidates {
        let g = model.response_grad(local, j, y)?;
        values[j] = -dot(&u, &g);
        defined[j] = true;
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite influence score"));
    }
    Ok(InfluenceScores { values, defined })
}

/// Straight-through gradient: the scores stand in for `∂L/∂Π(j|x)` on the
/// available questions and are pulled back through the softmax and network.
pub fn approx_policy_grad<S: Scalar>(
    scores: &InfluenceScores<S>,
    policy: &PolicyNet<S>,
    out: &PolicyOutput<S>,
    mask: &AvailabilityMask,
) -> Result<TanhMlpGrad<S>> {
    let mut dprobs = vec![S::zero(); out.probs.len()];
    for j in mask.indices() {
        dprobs[j] = scores
            .get(j)
            .ok_or_else(|| Error::Config(format!("no influence score for available question {j}")))?;
    }
    let dlogits = softmax_backward(&out.probs, &dprobs);
    let mut grad = policy.zero_grad();
    policy.backward(out, &dlogits, &mut grad)?;
    Ok(grad)
}
