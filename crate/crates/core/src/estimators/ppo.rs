use serde::{Deserialize, Serialize};

use super::{advantage, EpisodeTrace, PROB_FLOOR};
use crate::diffcore::{log_prob_grad, softmax_backward, OptimizerState};
use crate::error::{Error, Result};
use crate::policy::{CriticNet, PolicyNet, TanhMlpGrad};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub ppo_epochs: usize,
    pub entropy_weight: f64,
    pub critic_weight: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            ppo_epochs: 4,
            entropy_weight: 0.01,
            critic_weight: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0) {
            return Err(Error::Config(format!("clip epsilon must be positive, got {}", self.clip_epsilon)));
        }
        Ok(())
    }
}

/// Step-averaged PPO loss components for one pass over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoLosses {
    /// Clipped surrogate, `−E[min(ratio·A, clip(ratio)·A)]`.
    pub l1: f64,
    /// Negative entropy, `E[Σ Π log Π]`.
    pub l2: f64,
    /// Critic regression, `E[(V(x) − (r − b))²]`.
    pub l3: f64,
    pub total: f64,
}

fn step_count<S>(traces: &[EpisodeTrace<S>]) -> Result<usize> {
    let n: usize = traces.iter().map(|t| t.steps.len()).sum();
    if n == 0 {
        Err(Error::Config("PPO needs at least one traced step".into()))
    } else {
        Ok(n)
    }
}

fn safe_ln<S: Scalar>(p: S) -> S {
    p.max(S::lit(PROB_FLOOR)).ln()
}

/// Losses at the current parameters together with the actor and critic
/// gradients of the weighted total.
pub fn ppo_losses_and_grads<S: Scalar>(
    policy: &PolicyNet<S>,
    critic: &CriticNet<S>,
    traces: &[EpisodeTrace<S>],
    cfg: &PpoConfig,
) -> Result<(PpoLosses, TanhMlpGrad<S>, TanhMlpGrad<S>)> {
    let n = step_count(traces)?;
    let inv_n = S::one() / S::from_usize_lossy(n);
    let eps = S::lit(cfg.clip_epsilon);
    let ent_w = S::lit(cfg.entropy_weight);
    let critic_w = S::lit(cfg.critic_weight);
    let (lo, hi) = (S::one() - eps, S::one() + eps);

    let mut actor_grad = policy.zero_grad();
    let mut critic_grad = critic.zero_grad();
    let (mut l1, mut l2, mut l3) = (S::zero(), S::zero(), S::zero());
    for trace in traces {
        let target = trace.reward - trace.baseline;
        for step in &trace.steps {
            if step.old_prob <= S::zero() {
                return Err(Error::numeric("traced probability must be positive"));
            }
            let out = policy.forward(&step.state, &step.mask)?;
            let adv = advantage(trace.reward, trace.baseline, step.old_value);
            let ratio = out.probs[step.action] / step.old_prob;
            let unclipped = ratio * adv;
            let clipped = super::clip(ratio, lo, hi) * adv;
            l1 -= unclipped.min(clipped) * inv_n;

            let mut dlogits = vec![S::zero(); out.probs.len()];
            // The gradient flows through the ratio unless the clipped branch is
            // strictly smaller and actually clipped.
            let ratio_active = unclipped <= clipped || (ratio >= lo && ratio <= hi);
            if ratio_active {
                let scale = -adv * ratio * inv_n;
                for (d, g) in dlogits.iter_mut().zip(log_prob_grad(&out.probs, step.action)) {
                    *d += scale * g;
                }
            }

            let mut neg_entropy = S::zero();
            let mut dprobs = vec![S::zero(); out.probs.len()];
            for j in step.mask.indices() {
                let p = out.probs[j];
                neg_entropy += p * safe_ln(p);
                dprobs[j] = (safe_ln(p) + S::one()) * ent_w * inv_n;
            }
            l2 += neg_entropy * inv_n;
            for (d, g) in dlogits.iter_mut().zip(softmax_backward(&out.probs, &dprobs)) {
                *d += g;
            }
            policy.backward(&out, &dlogits, &mut actor_grad)?;

            let (value, cache) = critic.value_with_cache(&step.state)?;
            let err = value - target;
            l3 += err * err * inv_n;
            critic.net.backward(&cache, &[S::lit(2.0) * err * critic_w * inv_n], &mut critic_grad)?;
        }
    }
    let total = l1 + ent_w * l2 + critic_w * l3;
    Ok((
        PpoLosses {
            l1: l1.to_f64_lossy(),
            l2: l2.to_f64_lossy(),
            l3: l3.to_f64_lossy(),
            total: total.to_f64_lossy(),
        },
        actor_grad,
        critic_grad,
    ))
}

/// `ppo_epochs` full-batch steps on the actor and critic. Returns the losses
/// measured before each step.
pub fn ppo_update<S: Scalar>(
    policy: &mut PolicyNet<S>,
    critic: &mut CriticNet<S>,
    traces: &[EpisodeTrace<S>],
    cfg: &PpoConfig,
    actor_opt: &mut OptimizerState<S>,
    critic_opt: &mut OptimizerState<S>,
) -> Result<Vec<PpoLosses>> {
    cfg.validate()?;
    let mut history = Vec::with_capacity(cfg.ppo_epochs);
    for _ in 0..cfg.ppo_epochs {
        let (losses, ag, cg) = ppo_losses_and_grads(policy, critic, traces, cfg)?;
        actor_opt.step(&mut policy.net.params_mut(), &ag.groups())?;
        critic_opt.step(&mut critic.net.params_mut(), &cg.groups())?;
        history.push(losses);
    }
    Ok(history)
}

/// Step-averaged `−A · ∇ log Π(j|x)` with the traced advantages.
pub fn reinforce_with_advantage_grad<S: Scalar>(
    policy: &PolicyNet<S>,
    traces: &[EpisodeTrace<S>],
) -> Result<TanhMlpGrad<S>> {
    let inv_n = S::one() / S::from_usize_lossy(step_count(traces)?);
    let mut grad = policy.zero_grad();
    for trace in traces {
        for step in &trace.steps {
            let out = policy.forward(&step.state, &step.mask)?;
            let adv = advantage(trace.reward, trace.baseline, step.old_value);
            let dlogits: Vec<S> = log_prob_grad(&out.probs, step.action)
                .into_iter()
                .map(|g| -adv * inv_n * g)
                .collect();
            policy.backward(&out, &dlogits, &mut grad)?;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::finite_diff_check;
    use crate::estimators::TraceStep;
    use crate::policy::{encode_state, AvailabilityMask, PolicyState};
    use crate::rng::stream;
    use rand::Rng;

    fn random_nets(q: usize, seed: u64) -> (PolicyNet<f64>, CriticNet<f64>) {
        let mut r = stream(seed, &[]);
        let mut p = PolicyNet::init(q, 6, &mut r);
        let mut c = CriticNet::init(q, 6, &mut r);
        let pf: Vec<f64> = (0..p.net.num_params()).map(|_| r.random_range(-0.7..0.7)).collect();
        let cf: Vec<f64> = (0..c.net.num_params()).map(|_| r.random_range(-0.7..0.7)).collect();
        p.net.set_flat_params(&pf);
        c.net.set_flat_params(&cf);
        (p, c)
    }

    fn traces_under(policy: &PolicyNet<f64>, critic: &CriticNet<f64>, q: usize, seed: u64) -> Vec<EpisodeTrace<f64>> {
        let mut r = stream(seed, &[]);
        (0..4)
            .map(|_| {
                let mut admin = Vec::new();
                let mut mask = AvailabilityMask::all(q);
                let mut steps = Vec::new();
                for _ in 0..3 {
                    let state = encode_state(&admin, q).unwrap();
                    let out = policy.forward(&state, &mask).unwrap();
                    let j = crate::policy::sample(&out.probs, &mask, &mut r).unwrap();
                    steps.push(TraceStep {
                        old_value: critic.value(&state).unwrap(),
                        state,
                        mask: mask.clone(),
                        action: j,
                        old_prob: out.probs[j],
                    });
                    mask.take(j).unwrap();
                    admin.push((j, r.random()));
                }
                EpisodeTrace {
                    steps,
                    reward: r.random_range(0.0..1.0),
                    baseline: r.random_range(0.0..1.0),
                }
            })
            .collect()
    }

    #[test]
    fn on_policy_actor_gradient_equals_reinforce() {
        let q = 6;
        let (policy, critic) = random_nets(q, 1);
        let traces = traces_under(&policy, &critic, q, 2);
        let cfg = PpoConfig {
            entropy_weight: 0.0,
            ..PpoConfig::default()
        };
        let (losses, ag, _) = ppo_losses_and_grads(&policy, &critic, &traces, &cfg).unwrap();
        let reinforce = reinforce_with_advantage_grad(&policy, &traces).unwrap();
        assert_eq!(ag.flat(), reinforce.flat());
        let n = 12.0;
        let mean_adv: f64 = traces
            .iter()
            .flat_map(|t| t.steps.iter().map(move |s| advantage(t.reward, t.baseline, s.old_value)))
            .sum::<f64>()
            / n;
        assert!((losses.l1 + mean_adv).abs() < 1e-12);
    }

    #[test]
    fn total_is_weighted_sum_of_components() {
        let q = 5;
        let (policy, critic) = random_nets(q, 3);
        let traces = traces_under(&policy, &critic, q, 4);
        let cfg = PpoConfig::default();
        let (l, _, _) = ppo_losses_and_grads(&policy, &critic, &traces, &cfg).unwrap();
        assert_eq!(l.total, l.l1 + 0.01 * l.l2 + 0.5 * l.l3);
    }

    #[test]
    fn uniform_policy_entropy_and_zero_advantage() {
        let q = 7;
        let policy = PolicyNet::<f64>::init(q, 5, &mut stream(5, &[]));
        let critic = CriticNet::<f64>::init(q, 5, &mut stream(6, &[]));
        let mask = AvailabilityMask::from_pool(q, &[0, 2, 3, 6]).unwrap();
        let trace = EpisodeTrace {
            steps: vec![TraceStep {
                state: PolicyState::empty(q),
                mask,
                action: 2,
                old_prob: 0.25,
                old_value: 0.0,
            }],
            reward: 0.4,
            baseline: 0.4,
        };
        let cfg = PpoConfig {
            entropy_weight: 0.0,
            ..PpoConfig::default()
        };
        let (l, ag, _) = ppo_losses_and_grads(&policy, &critic, &[trace], &cfg).unwrap();
        assert!((l.l2 + 4f64.ln()).abs() < 1e-12);
        assert_eq!(l.l1, 0.0);
        assert!(ag.is_zero());
    }

    #[test]
    fn gradients_match_finite_differences_off_policy() {
        let q = 5;
        let (behaviour, critic) = random_nets(q, 7);
        let traces = traces_under(&behaviour, &critic, q, 8);
        let (mut policy, _) = random_nets(q, 9);
        // Stay close to the behaviour policy so both clip branches occur.
        let mixed: Vec<f64> = behaviour
            .net
            .flat_params()
            .iter()
            .zip(policy.net.flat_params())
            .map(|(a, b)| a + 0.3 * (b - a))
            .collect();
        policy.net.set_flat_params(&mixed);
        let cfg = PpoConfig::default();
        let (_, ag, cg) = ppo_losses_and_grads(&policy, &critic, &traces, &cfg).unwrap();
        let f = |x: &[f64]| {
            let mut p = policy.clone();
            p.net.set_flat_params(x);
            ppo_losses_and_grads(&p, &critic, &traces, &cfg).unwrap().0.total
        };
        assert!(finite_diff_check(f, &mixed, &ag.flat(), 1e-6) < 1e-4);
        let cflat = critic.net.flat_params();
        let f = |x: &[f64]| {
            let mut c = critic.clone();
            c.net.set_flat_params(x);
            ppo_losses_and_grads(&policy, &c, &traces, &cfg).unwrap().0.total
        };
        assert!(finite_diff_check(f, &cflat, &cg.flat(), 1e-6) < 1e-4);
    }

    #[test]
    fn update_runs_configured_epochs_and_reduces_critic_loss() {
        let q = 5;
        let (mut policy, mut critic) = random_nets(q, 10);
        let traces = traces_under(&policy, &critic, q, 11);
        let mut ao = OptimizerState::new(crate::diffcore::OptimizerKind::adam(0.002));
        let mut co = OptimizerState::new(crate::diffcore::OptimizerKind::adam(0.002));
        let hist = ppo_update(&mut policy, &mut critic, &traces, &PpoConfig::default(), &mut ao, &mut co).unwrap();
        assert_eq!(hist.len(), 4);
        assert!((hist[0].l1 - {
            let n = 12.0;
            -traces
                .iter()
                .flat_map(|t| t.steps.iter().map(move |s| advantage(t.reward, t.baseline, s.old_value)))
                .sum::<f64>()
                / n
        })
        .abs()
            < 1e-12);
        assert!(hist[3].l3 < hist[0].l3);
        assert!(ppo_update(
            &mut policy,
            &mut critic,
            &[],
            &PpoConfig::default(),
            &mut ao,
            &mut co
        )
        .is_err());
    }
}
