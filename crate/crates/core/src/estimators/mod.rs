//! Gradient estimators for the selection policy: the score-function / PPO
//! estimator driven by episode rewards, and the influence-function
//! straight-through estimator.

mod influence;
mod ppo;

pub use influence::{approx_policy_grad, influence_scores, HessianMode, InfluenceConfig, InfluenceScores};
pub use ppo::{ppo_losses_and_grads, ppo_update, reinforce_with_advantage_grad, PpoConfig, PpoLosses};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::log_prob_grad;
use crate::error::{Error, Result};
use crate::policy::{select_random, AvailabilityMask, PolicyNet, PolicyState, TanhMlpGrad};
use crate::response::{inner_adapt, meta_loss, AdaptConfig, ResponseModel};
use crate::scalar::Scalar;

/// Probabilities below this floor contribute no score-function gradient.
pub const PROB_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    /// Meta-set accuracy.
    #[default]
    Accuracy,
    /// Negative mean meta-set binary cross-entropy.
    NegBce,
}

/// One selection step of an episode, recorded under the behaviour policy.
#[derive(Debug, Clone)]
pub struct TraceStep<S> {
    pub state: PolicyState,
    pub mask: AvailabilityMask,
    pub action: usize,
    pub old_prob: S,
    /// Critic value of `state`, before the selection.
    pub old_value: S,
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace<S> {
    pub steps: Vec<TraceStep<S>>,
    pub reward: S,
    pub baseline: S,
}

pub fn clip<S: Scalar>(ratio: S, lo: S, hi: S) -> S {
    hi.min(ratio.max(lo))
}

/// `A = (r − b) − V(x)`: reward is higher-is-better, so a positive advantage
/// makes the chosen action more likely.
pub fn advantage<S: Scalar>(reward: S, baseline: S, value: S) -> S {
    (reward - baseline) - value
}

/// Reward of the adapted model on the meta set, evaluated without dropout.
pub fn episode_reward<S: Scalar, M: ResponseModel<S>>(
    model: &M,
    administered: &[(usize, bool)],
    meta: &[(usize, bool)],
    adapt: &AdaptConfig,
    kind: RewardKind,
) -> Result<S> {
    let cfg = AdaptConfig {
        eval_mode: true,
        ..*adapt
    };
    let local = inner_adapt(model, administered, &cfg, None)?;
    let eval = meta_loss(model, &local, meta, None)?;
    Ok(match kind {
        RewardKind::Accuracy => S::lit(eval.accuracy),
        RewardKind::NegBce => -eval.loss,
    })
}

/// Uniform-random rollout of `n` questions from `pool`, answered from `responses`.
pub fn random_rollout<R: Rng + ?Sized>(
    pool: &[(usize, bool)],
    num_questions: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(usize, bool)>> {
    let questions: Vec<usize> = pool.iter().map(|&(q, _)| q).collect();
    let mut mask = AvailabilityMask::from_pool(num_questions, &questions)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n.min(pool.len()) {
        let j = select_random(&mask, rng)?;
        mask.take(j)?;
        let y = pool.iter().find(|&&(q, _)| q == j).map(|&(_, y)| y).expect("pool member");
        out.push((j, y));
    }
    Ok(out)
}

/// Reward of the policy's selections and the baseline reward of one random
/// rollout of the same length from the same pool.
#[allow(clippy::too_many_arguments)]
pub fn compute_reward_and_baseline<S: Scalar, M: ResponseModel<S>, R: Rng + ?Sized>(
    model: &M,
    selected: &[(usize, bool)],
    pool: &[(usize, bool)],
    meta: &[(usize, bool)],
    adapt: &AdaptConfig,
    kind: RewardKind,
    rng: &mut R,
) -> Result<(S, S)> {
    let reward = episode_reward(model, selected, meta, adapt, kind)?;
    let random = random_rollout(pool, model.num_questions(), selected.len(), rng)?;
    let baseline = episode_reward(model, &random, meta, adapt, kind)?;
    Ok((reward, baseline))
}

/// Single-sample REINFORCE estimate of the loss gradient:
/// `−(r − b) · Σ_t ∇ log Π(jᵗ | xᵗ)`.
pub fn score_function_grad<S: Scalar>(policy: &PolicyNet<S>, trace: &EpisodeTrace<S>) -> Result<TanhMlpGrad<S>> {
    let mut grad = policy.zero_grad();
    let weight = -(trace.reward - trace.baseline);
    if weight == S::zero() {
        return Ok(grad);
    }
    for step in &trace.steps {
        let out = policy.forward(&step.state, &step.mask)?;
        if !step.mask.is_available(step.action) {
            return Err(Error::Config(format!("traced action {} was not available", step.action)));
        }
        if out.probs[step.action] < S::lit(PROB_FLOOR) {
            continue;
        }
        let mut dlogits = log_prob_grad(&out.probs, step.action);
        dlogits.iter_mut().for_each(|g| *g *= weight);
        policy.backward(&out, &dlogits, &mut grad)?;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{masked_softmax, softmax_backward};
    use crate::policy::{encode_state, sample};
    use crate::response::IrtGlobalParams;
    use crate::rng::stream;

    #[test]
    fn clip_and_advantage() {
        assert_eq!(clip(1.5, 0.8, 1.2), 1.2);
        assert_eq!(clip(0.5, 0.8, 1.2), 0.8);
        assert_eq!(clip(1.0, 0.8, 1.2), 1.0);
        assert!((advantage(0.6, 0.5, 0.0) - 0.1f64).abs() < 1e-15);
        assert_eq!(advantage(0.5, 0.5, 0.0), 0.0);
        assert_eq!(advantage(0.7f64, 0.5, 0.7 - 0.5), 0.0);
    }

    fn toy() -> (IrtGlobalParams<f64>, Vec<(usize, bool)>, Vec<(usize, bool)>) {
        let model = IrtGlobalParams::new(vec![-1.0, 0.0, 1.0, 0.5, -0.5], 0.0).unwrap();
        let pool = vec![(0, true), (1, true), (2, false)];
        let meta = vec![(3, true), (4, true)];
        (model, pool, meta)
    }

    #[test]
    fn reward_edge_cases() {
        let (model, pool, meta) = toy();
        let adapt = AdaptConfig::default();
        let (r, b) =
            compute_reward_and_baseline(&model, &[], &pool, &meta, &adapt, RewardKind::Accuracy, &mut stream(1, &[]))
                .unwrap();
        assert_eq!(r, b);
        let unadapted = meta_loss(&model, &model.init_local(), &meta, None).unwrap();
        assert_eq!(r, unadapted.accuracy);

        // Selecting the whole pool is the same set as any random rollout of that length.
        let (r, b) = compute_reward_and_baseline(
            &model,
            &pool,
            &pool,
            &meta,
            &adapt,
            RewardKind::NegBce,
            &mut stream(2, &[]),
        )
        .unwrap();
        assert!((r - b).abs() < 1e-12);
        let trace = EpisodeTrace {
            steps: vec![],
            reward: r,
            baseline: r,
        };
        let policy = PolicyNet::<f64>::init(5, 4, &mut stream(3, &[]));
        assert!(score_function_grad(&policy, &trace).unwrap().is_zero());
    }

    #[test]
    fn informative_choice_beats_random_on_average() {
        // Student answers correctly everywhere; asking the hardest pool
        // question moves ability furthest towards the truth.
        let model = IrtGlobalParams::new(vec![-2.0, 0.0, 2.0, 1.5, 1.8], 0.0).unwrap();
        let adapt = AdaptConfig::default();
        let mut r = stream(4, &[]);
        let mut total = 0.0;
        for _ in 0..1000 {
            let pool = vec![(0, true), (1, true), (2, true)];
            let meta = vec![(3, true), (4, true)];
            let (reward, base): (f64, f64) = compute_reward_and_baseline(
                &model,
                &[(2, true)],
                &pool,
                &meta,
                &adapt,
                RewardKind::NegBce,
                &mut r,
            )
            .unwrap();
            total += reward - base;
        }
        assert!(total / 1000.0 > 0.0);
    }

    #[test]
    fn saturated_policy_gives_finite_gradient() {
        let mut policy = PolicyNet::<f64>::init(3, 4, &mut stream(5, &[]));
        let bias = &mut policy.net.layers[2].bias;
        bias[0] = 800.0;
        let state = PolicyState::empty(3);
        let mask = AvailabilityMask::all(3);
        for action in 0..3 {
            let trace = EpisodeTrace {
                steps: vec![TraceStep {
                    state: state.clone(),
                    mask: mask.clone(),
                    action,
                    old_prob: 1.0,
                    old_value: 0.0,
                }],
                reward: 1.0,
                baseline: 0.0,
            };
            let g = score_function_grad(&policy, &trace).unwrap();
            assert!(g.flat().iter().all(|v| v.is_finite()));
        }
    }

    /// Exact gradient of `E_j[−r_j]` for a one-step episode, by enumeration.
    pub(crate) fn enumerated_grad(
        policy: &PolicyNet<f64>,
        state: &PolicyState,
        mask: &AvailabilityMask,
        rewards: &[f64],
    ) -> Vec<f64> {
        let out = policy.forward(state, mask).unwrap();
        let losses: Vec<f64> = rewards.iter().map(|r| -r).collect();
        let dlogits = softmax_backward(&out.probs, &losses);
        let mut g = policy.zero_grad();
        policy.backward(&out, &dlogits, &mut g).unwrap();
        g.flat()
    }

    #[test]
    fn score_function_is_unbiased_on_small_instance() {
        let (model, pool, meta) = toy();
        let q = 5;
        let mut r = stream(6, &[]);
        let mut policy = PolicyNet::<f64>::init(q, 3, &mut r);
        let flat: Vec<f64> = (0..policy.net.num_params()).map(|_| r.random_range(-1.0..1.0)).collect();
        policy.net.set_flat_params(&flat);
        let state = encode_state(&[], q).unwrap();
        let mask = AvailabilityMask::from_pool(q, &[0, 1, 2]).unwrap();
        let adapt = AdaptConfig::default();
        let rewards: Vec<f64> = (0..q)
            .map(|j| match pool.iter().find(|p| p.0 == j) {
                Some(&p) => episode_reward(&model, &[p], &meta, &adapt, RewardKind::NegBce).unwrap(),
                None => 0.0,
            })
            .collect();
        let exact = enumerated_grad(&policy, &state, &mask, &rewards);
        let probs = masked_softmax(&policy.net.forward(&state.to_input()).unwrap().0, mask.as_slice()).unwrap();

        let samples = 20_000;
        let dim = exact.len();
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for _ in 0..samples {
            let j = sample(&probs, &mask, &mut r).unwrap();
            let rb = random_rollout(&pool, q, 1, &mut r).unwrap();
            let trace = EpisodeTrace {
                steps: vec![TraceStep {
                    state: state.clone(),
                    mask: mask.clone(),
                    action: j,
                    old_prob: probs[j],
                    old_value: 0.0,
                }],
                reward: rewards[j],
                baseline: rewards[rb[0].0],
            };
            for (k, g) in score_function_grad(&policy, &trace).unwrap().flat().into_iter().enumerate() {
                sum[k] += g;
                sq[k] += g * g;
            }
        }
        let n = samples as f64;
        for k in 0..dim {
            let mean = sum[k] / n;
            let var = (sq[k] / n - mean * mean).max(0.0);
            let se = (var / n).sqrt();
            assert!((mean - exact[k]).abs() <= 3.0 * se + 1e-12, "component {k}");
        }
    }
}
