use super::{summarize, GlobalGrad, MetaGrads, ResponseModel};
use crate::diffcore::{label, sigmoid};
use crate::error::{Error, Result};
use crate::policy::{select_active, AvailabilityMask};
use crate::rng::StreamRng;
use crate::scalar::Scalar;

/// One-parameter logistic model: `p(correct) = σ(θ - b_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IrtGlobalParams<S> {
    pub difficulties: Vec<S>,
    /// Initial ability of every student before adaptation.
    pub prior_mean: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrtLocalParams<S> {
    pub theta: S,
}

impl<S> AsRef<[S]> for IrtLocalParams<S> {
    fn as_ref(&self) -> &[S] {
        std::slice::from_ref(&self.theta)
    }
}

impl<S> AsMut<[S]> for IrtLocalParams<S> {
    fn as_mut(&mut self) -> &mut [S] {
        std::slice::from_mut(&mut self.theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrtGrad<S> {
    pub difficulties: Vec<S>,
    pub prior_mean: [S; 1],
}

impl<S: Scalar> GlobalGrad<S> for IrtGrad<S> {
    fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.difficulties.iter_mut().zip(&other.difficulties) {
            *a += b;
        }
        self.prior_mean[0] += other.prior_mean[0];
    }

    fn scale(&mut self, s: S) {
        self.difficulties.iter_mut().for_each(|v| *v *= s);
        self.prior_mean[0] *= s;
    }

    fn question_groups(&self) -> Vec<&[S]> {
        vec![&self.difficulties]
    }

    fn student_groups(&self) -> Vec<&[S]> {
        vec![&self.prior_mean]
    }
}

impl<S: Scalar> IrtGlobalParams<S> {
    pub fn new(difficulties: Vec<S>, prior_mean: S) -> Result<Self> {
        if difficulties.is_empty() {
            return Err(Error::Config("IRT model needs at least one question".into()));
        }
        if !prior_mean.is_finite() || difficulties.iter().any(|b| !b.is_finite()) {
            return Err(Error::numeric("IRT parameters must be finite"));
        }
        Ok(Self {
            difficulties,
            prior_mean,
        })
    }

    pub fn zeros(num_questions: usize) -> Self {
        Self {
            difficulties: vec![S::zero(); num_questions],
            prior_mean: S::zero(),
        }
    }

    #[inline]
    pub fn prob(&self, theta: S, j: usize) -> S {
        sigmoid(theta - self.difficulties[j])
    }

    pub fn local(theta: S) -> IrtLocalParams<S> {
        IrtLocalParams { theta }
    }
}

impl<S: Scalar> ResponseModel<S> for IrtGlobalParams<S> {
    type Local = IrtLocalParams<S>;
    type Grad = IrtGrad<S>;

    fn num_questions(&self) -> usize {
        self.difficulties.len()
    }

    fn init_local(&self) -> Self::Local {
        IrtLocalParams {
            theta: self.prior_mean,
        }
    }

    fn predict_many(
        &self,
        local: &Self::Local,
        questions: &[usize],
        _dropout: Option<&mut StreamRng>,
    ) -> Result<Vec<S>> {
        questions
            .iter()
            .map(|&j| {
                self.check_question(j)?;
                Ok(self.prob(local.theta, j))
            })
            .collect()
    }

    fn inner_loss_grad(
        &self,
        local: &Self::Local,
        responses: &[(usize, bool)],
        _dropout: Option<&mut StreamRng>,
    ) -> Result<(S, Vec<S>)> {
        let mut loss = S::zero();
        let mut grad = S::zero();
        for &(j, y) in responses {
            self.check_question(j)?;
            let p = self.prob(local.theta, j);
            loss += crate::diffcore::bce_loss(p, y);
            grad += p - label::<S>(y);
        }
        Ok((loss, vec![grad]))
    }

    fn response_grad(&self, local: &Self::Local, question: usize, correct: bool) -> Result<Vec<S>> {
        self.check_question(question)?;
        Ok(vec![self.prob(local.theta, question) - label::<S>(correct)])
    }

    fn inner_hvp(&self, local: &Self::Local, responses: &[(usize, bool)], v: &[S]) -> Result<Vec<S>> {
        let mut h = S::zero();
        for &(j, _) in responses {
            self.check_question(j)?;
            let p = self.prob(local.theta, j);
            h += p * (S::one() - p);
        }
        Ok(vec![h * v[0]])
    }

    fn meta_grads(
        &self,
        local: &Self::Local,
        meta: &[(usize, bool)],
        _dropout: Option<&mut StreamRng>,
    ) -> Result<MetaGrads<S, Self::Grad>> {
        if meta.is_empty() {
            return Err(Error::EmptyMetaSet);
        }
        let inv = S::one() / S::from_usize_lossy(meta.len());
        let mut probs = Vec::with_capacity(meta.len());
        let mut g_theta = S::zero();
        let mut grad = self.zero_grad();
        for &(j, y) in meta {
            self.check_question(j)?;
            let p = self.prob(local.theta, j);
            probs.push(p);
            let r = (p - label::<S>(y)) * inv;
            g_theta += r;
            grad.difficulties[j] -= r;
        }
        grad.prior_mean[0] = g_theta;
        Ok(MetaGrads {
            eval: summarize(&probs, meta),
            local: vec![g_theta],
            global: grad,
        })
    }

    fn zero_grad(&self) -> Self::Grad {
        IrtGrad {
            difficulties: vec![S::zero(); self.difficulties.len()],
            prior_mean: [S::zero()],
        }
    }

    fn active_select(&self, local: &Self::Local, mask: &AvailabilityMask) -> Result<usize> {
        select_active(local.theta, &self.difficulties, mask)
    }

    fn question_params_mut(&mut self) -> Vec<&mut [S]> {
        vec![&mut self.difficulties]
    }

    fn student_params_mut(&mut self) -> Vec<&mut [S]> {
        vec![std::slice::from_mut(&mut self.prior_mean)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::finite_diff_check;
    use crate::response::{inner_adapt, meta_loss, AdaptConfig};
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn predictions() {
        let m = IrtGlobalParams::new(vec![0.0, 0.5], 0.0).unwrap();
        assert_eq!(m.predict(&IrtGlobalParams::local(0.0), 0).unwrap(), 0.5);
        let p = m.predict(&IrtGlobalParams::local(2.0), 1).unwrap();
        assert!((p - 1.0 / (1.0 + (-1.5f64).exp())).abs() < 1e-15);
        assert!((p - 0.8176).abs() < 1e-4);
        assert!(matches!(
            m.predict(&IrtGlobalParams::local(0.0), 2),
            Err(Error::QuestionOutOfRange { index: 2, .. })
        ));
    }

    #[test]
    fn one_inner_step_by_hand() {
        let m = IrtGlobalParams::new(vec![0.0f64], 0.0).unwrap();
        let cfg = AdaptConfig {
            steps: 1,
            learning_rate: 0.1,
            eval_mode: true,
        };
        // gradient σ(0) - 1 = -0.5, so θ = 0 - 0.1 · (-0.5) = 0.05
        let local = inner_adapt(&m, &[(0, true)], &cfg, None).unwrap();
        assert!((local.theta - 0.05).abs() < 1e-15);
        let (_, g) = m.inner_loss_grad(&IrtGlobalParams::local(0.0), &[(0, true)], None).unwrap();
        let err = finite_diff_check(
            |x: &[f64]| m.inner_loss_grad(&IrtGlobalParams::local(x[0]), &[(0, true)], None).unwrap().0,
            &[0.0],
            &g,
            1e-5,
        );
        assert!(err < 1e-8);
    }

    #[test]
    fn zero_steps_and_empty_history_keep_prior() {
        let m = IrtGlobalParams::new(vec![0.3, -0.2], 0.4).unwrap();
        let k0 = AdaptConfig { steps: 0, ..Default::default() };
        assert_eq!(inner_adapt(&m, &[(0, true)], &k0, None).unwrap().theta, 0.4);
        assert_eq!(inner_adapt(&m, &[], &AdaptConfig::default(), None).unwrap().theta, 0.4);
    }

    #[test]
    fn balanced_answers_leave_theta_at_prior() {
        let m = IrtGlobalParams::new(vec![0.7f64, 0.7], 0.7).unwrap();
        let local = inner_adapt(&m, &[(0, true), (1, false)], &AdaptConfig::default(), None).unwrap();
        assert!((local.theta - 0.7).abs() < 1e-15);
    }

    #[test]
    fn meta_loss_values() {
        let m = IrtGlobalParams::new(vec![0.0, 0.0], 0.0).unwrap();
        let e = meta_loss(&m, &IrtGlobalParams::local(0.0), &[(0, true), (1, true)], None).unwrap();
        assert!((e.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(e.accuracy, 0.0);
        assert!(matches!(
            meta_loss(&m, &IrtGlobalParams::local(0.0), &[], None),
            Err(Error::EmptyMetaSet)
        ));

        // p = [0.9, 0.2] against y = [1, 0]
        let b = [-(0.9f64 / 0.1).ln(), -(0.2f64 / 0.8).ln()];
        let m = IrtGlobalParams::new(b.to_vec(), 0.0).unwrap();
        let e = meta_loss(&m, &IrtGlobalParams::local(0.0), &[(0, true), (1, false)], None).unwrap();
        let expected = (-(0.9f64).ln() - (0.8f64).ln()) / 2.0;
        assert!((e.loss - expected).abs() < 1e-12);
        assert!((e.loss - 0.1643).abs() < 1e-4);
        assert_eq!(e.accuracy, 1.0);
    }

    #[test]
    fn inner_steps_never_increase_loss() {
        let mut r = stream(21, &[]);
        for _ in 0..200 {
            let q = 8;
            let b: Vec<f64> = (0..q).map(|_| r.random_range(-2.0..2.0)).collect();
            let m = IrtGlobalParams::new(b, r.random_range(-1.0..1.0)).unwrap();
            let resp: Vec<(usize, bool)> = (0..r.random_range(1..q)).map(|j| (j, r.random())).collect();
            let mut losses = Vec::new();
            for k in 0..=5 {
                let cfg = AdaptConfig { steps: k, learning_rate: 0.05, eval_mode: true };
                let l = inner_adapt(&m, &resp, &cfg, None).unwrap();
                losses.push(m.inner_loss_grad(&l, &resp, None).unwrap().0);
            }
            for w in losses.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn meta_gradients_match_finite_differences() {
        let mut r = stream(22, &[]);
        for _ in 0..100 {
            let q = 6;
            let b: Vec<f64> = (0..q).map(|_| r.random_range(-2.0..2.0)).collect();
            let theta: f64 = r.random_range(-2.0..2.0);
            let mut meta: Vec<(usize, bool)> = Vec::new();
            for j in 0..q {
                if r.random() {
                    meta.push((j, r.random()));
                }
            }
            if meta.is_empty() {
                continue;
            }
            let m = IrtGlobalParams::new(b.clone(), 0.0).unwrap();
            let g = m.meta_grads(&IrtGlobalParams::local(theta), &meta, None).unwrap();
            let err = finite_diff_check(
                |x: &[f64]| meta_loss(&m, &IrtGlobalParams::local(x[0]), &meta, None).unwrap().loss,
                &[theta],
                &g.local,
                1e-5,
            );
            assert!(err < 1e-4);
            let err = finite_diff_check(
                |x: &[f64]| {
                    let mm = IrtGlobalParams::new(x.to_vec(), 0.0).unwrap();
                    meta_loss(&mm, &IrtGlobalParams::local(theta), &meta, None).unwrap().loss
                },
                &b,
                &g.global.difficulties,
                1e-5,
            );
            assert!(err < 1e-4);
        }
    }

    #[test]
    fn prediction_is_monotone_in_ability() {
        let m = IrtGlobalParams::new(vec![0.3], 0.0).unwrap();
        let mut last = 0.0;
        for i in -50..50 {
            let p = m.predict(&IrtGlobalParams::local(f64::from(i) * 0.2), 0).unwrap();
            assert!(p > last && p < 1.0);
            last = p;
        }
    }
}
