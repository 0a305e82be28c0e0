//! Classical IRT estimation used by the non-bilevel baselines: penalized
//! joint maximum likelihood for calibration and MAP ability estimates.

use super::irt::IrtGlobalParams;
use crate::data::Dataset;
use crate::diffcore::{label, sigmoid};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAP_MAX_ITERS: usize = 100;
const MAP_GRAD_TOL: f64 = 1e-8;

/// `argmin_θ Σ ℓ(y, σ(θ - b_j)) + λ₂ (θ - μ)²` by damped Newton.
///
/// With no responses the estimate is the prior mean. With `λ₂ = 0` and
/// all-correct answers there is no minimizer; iteration stops where the
/// gradient drops below tolerance, far out in the tail.
pub fn irt_map_ability<S: Scalar>(
    responses: &[(usize, bool)],
    difficulties: &[S],
    lambda2: S,
    prior_mean: S,
) -> Result<S> {
    if lambda2 < S::zero() {
        return Err(Error::Config("ability penalty must be non-negative".into()));
    }
    if responses.is_empty() {
        return Ok(prior_mean);
    }
    for &(j, _) in responses {
        if j >= difficulties.len() {
            return Err(Error::QuestionOutOfRange {
                index: j,
                num_questions: difficulties.len(),
            });
        }
    }
    let two = S::lit(2.0);
    let mut theta = prior_mean;
    // The gradient is increasing in θ, so every iterate tightens a bracket
    // around the root; Newton steps leaving it fall back to bisection.
    let (mut lo, mut hi) = (S::neg_infinity(), S::infinity());
    for _ in 0..MAP_MAX_ITERS {
        let (mut g, mut h) = (two * lambda2 * (theta - prior_mean), two * lambda2);
        for &(j, y) in responses {
            let p = sigmoid(theta - difficulties[j]);
            g += p - label::<S>(y);
            h += p * (S::one() - p);
        }
        if g.abs() < S::lit(MAP_GRAD_TOL) || (g / h).abs() < S::lit(1e-12) {
            return Ok(theta);
        }
        if g > S::zero() {
            hi = theta;
        } else {
            lo = theta;
        }
        // Cap the step so flat regions do not fling the iterate.
        let step = (g / h.max(S::lit(1e-12))).max(S::lit(-4.0)).min(S::lit(4.0));
        let mut next = theta - step;
        if lo.is_finite() && hi.is_finite() && !(next > lo && next < hi) {
            next = (lo + hi) / two;
        }
        if next == theta || !next.is_finite() {
            return Ok(theta);
        }
        theta = next;
    }
    Err(Error::numeric(format!(
        "MAP ability did not converge within {MAP_MAX_ITERS} iterations"
    )))
}

/// Result of penalized joint maximum likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct IrtFit<S> {
    /// Difficulties plus the mean fitted ability as prior mean.
    pub global: IrtGlobalParams<S>,
    /// Fitted ability per student, in dataset order.
    pub abilities: Vec<S>,
    pub sweeps: usize,
}

const FIT_MAX_SWEEPS: usize = 500;
const FIT_TOL: f64 = 1e-5;

/// Minimizes `Σ ℓ(y_ij, σ(θ_i - b_j)) + λ₁ (‖θ‖² + ‖b‖²)` by alternating
/// Newton sweeps over abilities and difficulties until the mean absolute
/// parameter change of a sweep falls below 1e-5. Each sweep ends with the
/// exact minimizing shift along the translation direction `(θ + c, b + c)`.
///
/// Every question must be answered at least once.
pub fn fit_irt_mle<S: Scalar>(dataset: &Dataset, lambda1: S) -> Result<IrtFit<S>> {
    if lambda1 < S::zero() {
        return Err(Error::Config("IRT penalty must be non-negative".into()));
    }
    let q = dataset.num_questions();
    let n = dataset.num_students();
    let mut by_question: Vec<Vec<(usize, bool)>> = vec![Vec::new(); q];
    for (i, s) in dataset.students().iter().enumerate() {
        for &(j, y) in &s.responses {
            by_question[j].push((i, y));
        }
    }
    if let Some(j) = by_question.iter().position(Vec::is_empty) {
        return Err(Error::Config(format!("question {j} has no responses")));
    }

    let mut theta = vec![S::zero(); n];
    let mut b = vec![S::zero(); q];
    for sweep in 1..=FIT_MAX_SWEEPS {
        let mut change = S::zero();
        for (i, s) in dataset.students().iter().enumerate() {
            let next = newton_1d(theta[i], lambda1, s.responses.iter().map(|&(j, y)| (b[j], y, S::one())));
            change += (next - theta[i]).abs();
            theta[i] = next;
        }
        for (j, rs) in by_question.iter().enumerate() {
            // ∂/∂b of ℓ(y, σ(θ - b)) flips sign, so solve for -b.
            let next = -newton_1d(-b[j], lambda1, rs.iter().map(|&(i, y)| (-theta[i], y, S::one())));
            change += (next - b[j]).abs();
            b[j] = next;
        }
        // The likelihood is invariant to shifting every θ and b by the same
        // constant; the penalty alone fixes that direction in closed form.
        let shift = -(theta.iter().chain(&b).copied().sum::<S>()) / S::from_usize_lossy(n + q);
        theta.iter_mut().chain(b.iter_mut()).for_each(|v| *v += shift);
        change += shift.abs() * S::from_usize_lossy(n + q);
        if theta.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::numeric("IRT fit diverged"));
        }
        if change / S::from_usize_lossy(n + q) < S::lit(FIT_TOL) {
            let mean = theta.iter().copied().sum::<S>() / S::from_usize_lossy(n);
            return Ok(IrtFit {
                global: IrtGlobalParams::new(b, mean)?,
                abilities: theta,
                sweeps: sweep,
            });
        }
    }
    Err(Error::numeric(format!(
        "IRT fit did not converge within {FIT_MAX_SWEEPS} sweeps"
    )))
}

/// A few damped Newton iterations on `Σ w ℓ(y, σ(x - c)) + λ x²` in `x`.
fn newton_1d<S: Scalar>(
    start: S,
    lambda: S,
    terms: impl Iterator<Item = (S, bool, S)> + Clone,
) -> S {
    let two = S::lit(2.0);
    let mut x = start;
    for _ in 0..20 {
        let (mut g, mut h) = (two * lambda * x, two * lambda);
        for (c, y, w) in terms.clone() {
            let p = sigmoid(x - c);
            g += w * (p - label::<S>(y));
            h += w * p * (S::one() - p);
        }
        let step = (g / h.max(S::lit(1e-12))).max(S::lit(-1.0)).min(S::lit(1.0));
        x -= step;
        if step.abs() < S::lit(1e-12) {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Dataset};
    use crate::diffcore::bce_loss;
    use crate::rng::stream;
    use rand::Rng;

    /// Bisection on the derivative; the independent root-finding oracle.
    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo).signum() == f(mid).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn map_ability_single_correct_answer() {
        let oracle = bisect(|t| 1.0 / (1.0 + (-t).exp()) - 1.0 + 2.0 * t, -5.0, 5.0);
        let est = irt_map_ability(&[(0, true)], &[0.0f64], 1.0, 0.0).unwrap();
        assert!((est - oracle).abs() < 1e-8, "{est} vs {oracle}");
        assert!((est - 0.2236).abs() < 2e-3);
    }

    #[test]
    fn map_ability_converges_on_random_histories() {
        let mut r = stream(41, &[]);
        for _ in 0..2000 {
            let q = 50;
            let b: Vec<f64> = (0..q).map(|_| r.random_range(-3.0..3.0)).collect();
            let n = r.random_range(1..12);
            let resp: Vec<(usize, bool)> = (0..n).map(|_| (r.random_range(0..q), r.random())).collect();
            let lambda = [0.0, 0.01, 0.1, 0.5, 1.0, 10.0][r.random_range(0..6)];
            let mu = r.random_range(-1.0..1.0);
            let t = irt_map_ability(&resp, &b, lambda, mu).unwrap();
            let g: f64 = resp.iter().map(|&(j, y)| sigmoid(t - b[j]) - label::<f64>(y)).sum::<f64>()
                + 2.0 * lambda * (t - mu);
            assert!(g.abs() < 1e-6, "gradient {g} at {t}");
        }
    }

    #[test]
    fn map_ability_edge_cases() {
        assert_eq!(irt_map_ability::<f64>(&[], &[0.0], 1.0, 0.3).unwrap(), 0.3);
        let strong = irt_map_ability(&[(0, true), (1, true)], &[0.0f64, 1.0], 1e9, -0.4).unwrap();
        assert!((strong + 0.4).abs() < 1e-6);
        // Unpenalized all-correct: the gradient vanishes only far out.
        let runaway = irt_map_ability(&[(0, true)], &[0.0f64], 0.0, 0.0).unwrap();
        assert!(runaway > 10.0);
        let mixed = irt_map_ability(&[(0, true), (1, false)], &[0.0f64, 0.0], 0.0, 0.0).unwrap();
        assert!(mixed.abs() < 1e-8);
    }

    #[test]
    fn recovers_synthetic_difficulties() {
        let (ds, truth) = generate_synthetic(500, 50, 8).unwrap();
        let fit = fit_irt_mle::<f64>(&ds, 1e-3).unwrap();
        let r = pearson(&fit.global.difficulties, &truth.difficulties);
        assert!(r > 0.9, "pearson {r}");
        let r = pearson(&fit.abilities, &truth.abilities);
        assert!(r > 0.8, "pearson {r}");
    }

    #[test]
    fn always_correct_question_stays_finite() {
        let students = (0..30)
            .map(|i| {
                let rs = (0..5).map(|q| (q.to_string(), q == 0 || (i + q) % 2 == 0)).collect();
                (i.to_string(), rs)
            })
            .collect();
        let ds = Dataset::from_external(students).unwrap();
        let fit = fit_irt_mle::<f64>(&ds, 1e-3).unwrap();
        let b0 = fit.global.difficulties[0];
        assert!(b0.is_finite() && b0 < -2.0, "b0 = {b0}");
    }

    #[test]
    fn translation_is_pinned_by_the_penalty() {
        let (ds, _) = generate_synthetic(120, 20, 9).unwrap();
        let fit = fit_irt_mle::<f64>(&ds, 1e-3).unwrap();
        // Same data with students in a different order.
        let mut rows: Vec<(String, Vec<(String, bool)>)> = ds
            .students()
            .iter()
            .rev()
            .map(|s| {
                let rs = s.responses.iter().rev().map(|&(q, y)| (ds.question_ids()[q].clone(), y)).collect();
                (format!("r{}", s.id), rs)
            })
            .collect();
        rows.rotate_left(17);
        let shuffled = Dataset::from_external(rows).unwrap();
        let fit2 = fit_irt_mle::<f64>(&shuffled, 1e-3).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let a = mean(&fit.abilities) + mean(&fit.global.difficulties);
        let b = mean(&fit2.abilities) + mean(&fit2.global.difficulties);
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }

    #[test]
    fn map_gradient_matches_finite_differences() {
        use crate::diffcore::finite_diff_check;
        let b = [0.3f64, -1.0, 0.8];
        let resp = [(0, true), (1, false), (2, true)];
        let (l2, mu) = (0.5, 0.1);
        let f = |x: &[f64]| -> f64 {
            resp.iter().map(|&(j, y)| bce_loss(sigmoid(x[0] - b[j]), y)).sum::<f64>() + l2 * (x[0] - mu).powi(2)
        };
        for &t in &[-1.0f64, 0.0, 0.7] {
            let g: f64 = resp.iter().map(|&(j, y)| sigmoid(t - b[j]) - label::<f64>(y)).sum::<f64>() + 2.0 * l2 * (t - mu);
            assert!(finite_diff_check(f, &[t], &[g], 1e-5) < 1e-4);
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }
}
