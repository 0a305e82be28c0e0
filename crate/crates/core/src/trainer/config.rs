use serde::{Deserialize, Serialize};

use crate::diffcore::OptimizerKind;
use crate::engine::{ModelKind, PolicyKind};
use crate::error::{Error, Result};
use crate::estimators::{InfluenceConfig, PpoConfig, RewardKind};
use crate::policy::DEFAULT_POLICY_HIDDEN;
use crate::response::{AdaptConfig, DEFAULT_DROPOUT, DEFAULT_HIDDEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub policy: PolicyKind,
    /// Questions per episode.
    pub n: usize,
    pub adapt: AdaptConfig,
    /// Adam step for question-side parameters.
    pub question_lr: f64,
    /// SGD step for student-side parameters.
    pub student_lr: f64,
    pub student_momentum: f64,
    /// Adam step for the actor and critic.
    pub policy_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub reward: RewardKind,
    pub ppo: PpoConfig,
    pub influence: InfluenceConfig,
    pub hidden: usize,
    pub dropout: f64,
    pub policy_hidden: usize,
    /// Repetitions of the fixed validation partitions.
    pub val_repetitions: usize,
    /// Threads for per-student work; results do not depend on it.
    pub workers: usize,
    /// Penalty used to calibrate the non-bilevel 1PL model.
    pub irt_fit_lambda: f64,
    /// Ability penalty for MAP adaptation of the non-bilevel 1PL model.
    pub map_lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Biirt,
            policy: PolicyKind::Random,
            n: 5,
            adapt: AdaptConfig::default(),
            question_lr: 1e-3,
            student_lr: 1e-4,
            student_momentum: 0.9,
            policy_lr: 0.002,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            reward: RewardKind::Accuracy,
            ppo: PpoConfig::default(),
            influence: InfluenceConfig::default(),
            hidden: DEFAULT_HIDDEN,
            dropout: DEFAULT_DROPOUT,
            policy_hidden: DEFAULT_POLICY_HIDDEN,
            val_repetitions: 1,
            workers: 1,
            irt_fit_lambda: 1e-3,
            map_lambda: 1.0,
        }
    }
}

fn positive(name: &str, v: f64, problems: &mut Vec<String>) {
    if !(v > 0.0 && v.is_finite()) {
        problems.push(format!("{name} must be positive and finite, got {v}"));
    }
}

impl TrainConfig {
    /// Every problem with the configuration, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.n == 0 {
            p.push("n must be at least 1".into());
        }
        if self.batch_size == 0 {
            p.push("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            p.push("max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            p.push("patience must be at least 1".into());
        }
        if self.workers == 0 {
            p.push("workers must be at least 1".into());
        }
        if self.val_repetitions == 0 {
            p.push("val_repetitions must be at least 1".into());
        }
        if let Err(e) = self.adapt.validate() {
            p.push(e.to_string());
        }
        positive("question_lr", self.question_lr, &mut p);
        positive("student_lr", self.student_lr, &mut p);
        positive("policy_lr", self.policy_lr, &mut p);
        if !(0.0..1.0).contains(&self.student_momentum) {
            p.push(format!("student_momentum must lie in [0, 1), got {}", self.student_momentum));
        }
        if let Err(e) = self.ppo.validate() {
            p.push(e.to_string());
        }
        if !(self.influence.damping >= 0.0) {
            p.push(format!("influence.damping must be non-negative, got {}", self.influence.damping));
        }
        if self.hidden == 0 || self.policy_hidden == 0 {
            p.push("hidden sizes must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            p.push(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.irt_fit_lambda >= 0.0) || !(self.map_lambda >= 0.0) {
            p.push("irt_fit_lambda and map_lambda must be non-negative".into());
        }
        if self.model == ModelKind::Irt && self.policy.is_learned() {
            p.push(format!("the irt model has no bilevel training; use random or active, not {}", self.policy));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    pub(crate) fn question_optimizer(&self) -> OptimizerKind {
        OptimizerKind::adam(self.question_lr)
    }

    pub(crate) fn student_optimizer(&self) -> OptimizerKind {
        OptimizerKind::sgd(self.student_lr, self.student_momentum)
    }

    pub(crate) fn policy_optimizer(&self) -> OptimizerKind {
        OptimizerKind::adam(self.policy_lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn lists_every_problem() {
        let cfg = TrainConfig {
            n: 0,
            batch_size: 0,
            policy_lr: -1.0,
            ..Default::default()
        };
        let p = cfg.problems();
        assert_eq!(p.len(), 3, "{p:?}");
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"n": 3, "bogus": 1}"#);
        assert!(err.is_err());
        let cfg: TrainConfig = serde_json::from_str(r#"{"n": 3, "policy": "approx"}"#).unwrap();
        assert_eq!(cfg.n, 3);
        assert_eq!(cfg.policy, PolicyKind::Approx);
        assert_eq!(cfg.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn irt_model_rejects_learned_policies() {
        let cfg = TrainConfig {
            model: ModelKind::Irt,
            policy: PolicyKind::Approx,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
