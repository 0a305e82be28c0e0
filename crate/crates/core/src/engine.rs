//! Runtime view of a trained model: a response model, how it adapts to a
//! student's answers, and how the next question is chosen. Shared by
//! evaluation, validation during training, and live sessions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{encode_state, select_random, ActionMode, AvailabilityMask, PolicyNet};
use crate::response::{
    inner_adapt, irt_map_ability, AdaptConfig, IrtGlobalParams, IrtLocalParams, MlpGlobalParams, MlpLocalParams,
    ResponseModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// 1PL model trained bilevel.
    Biirt,
    /// Neural response model trained bilevel.
    Binn,
    /// 1PL model calibrated by penalized maximum likelihood, adapted by MAP.
    Irt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Random,
    Active,
    Unbiased,
    Approx,
}

impl PolicyKind {
    pub fn is_learned(self) -> bool {
        matches!(self, Self::Unbiased | Self::Approx)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Biirt => "biirt",
            Self::Binn => "binn",
            Self::Irt => "irt",
        })
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Active => "active",
            Self::Unbiased => "unbiased",
            Self::Approx => "approx",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GlobalModel {
    Irt(IrtGlobalParams<f64>),
    Mlp(MlpGlobalParams<f64>),
}

impl GlobalModel {
    pub fn num_questions(&self) -> usize {
        match self {
            Self::Irt(m) => m.num_questions(),
            Self::Mlp(m) => m.num_questions(),
        }
    }
}

/// How local parameters are obtained from a student's answers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum Adaptation {
    /// Gradient steps from the global initialization.
    InnerGd(AdaptConfig),
    /// Penalized maximum a posteriori ability (1PL only).
    Map { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LocalState {
    Irt(IrtLocalParams<f64>),
    Mlp(MlpLocalParams<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Engine {
    pub model: GlobalModel,
    pub adaptation: Adaptation,
    pub policy_kind: PolicyKind,
    pub policy: Option<PolicyNet<f64>>,
    pub action_mode: ActionMode,
}

impl Engine {
    pub fn new(
        model: GlobalModel,
        adaptation: Adaptation,
        policy_kind: PolicyKind,
        policy: Option<PolicyNet<f64>>,
        action_mode: ActionMode,
    ) -> Result<Self> {
        let q = model.num_questions();
        match (&policy, policy_kind.is_learned()) {
            (None, true) => return Err(Error::Config(format!("{policy_kind} policy needs network weights"))),
            (Some(p), true) if p.num_questions() != q => {
                return Err(Error::QuestionCountMismatch {
                    checkpoint: p.num_questions(),
                    data: q,
                })
            }
            _ => {}
        }
        if matches!(adaptation, Adaptation::Map { .. }) && !matches!(model, GlobalModel::Irt(_)) {
            return Err(Error::Config("MAP adaptation needs a 1PL model".into()));
        }
        Ok(Self {
            model,
            adaptation,
            policy_kind,
            policy,
            action_mode,
        })
    }

    pub fn num_questions(&self) -> usize {
        self.model.num_questions()
    }

    /// Local parameters fitted to `administered`, without dropout.
    pub fn adapt(&self, administered: &[(usize, bool)]) -> Result<LocalState> {
        match (&self.model, self.adaptation) {
            (GlobalModel::Irt(m), Adaptation::Map { lambda }) => {
                for &(j, _) in administered {
                    m.check_question(j)?;
                }
                Ok(LocalState::Irt(IrtGlobalParams::local(irt_map_ability(
                    administered,
                    &m.difficulties,
                    lambda,
                    m.prior_mean,
                )?)))
            }
            (GlobalModel::Irt(m), Adaptation::InnerGd(cfg)) => {
                Ok(LocalState::Irt(inner_adapt(m, administered, &eval_cfg(cfg), None)?))
            }
            (GlobalModel::Mlp(m), Adaptation::InnerGd(cfg)) => {
                Ok(LocalState::Mlp(inner_adapt(m, administered, &eval_cfg(cfg), None)?))
            }
            (GlobalModel::Mlp(_), Adaptation::Map { .. }) => Err(Error::Config("MAP adaptation needs a 1PL model".into())),
        }
    }

    pub fn predict(&self, local: &LocalState, questions: &[usize]) -> Result<Vec<f64>> {
        match (&self.model, local) {
            (GlobalModel::Irt(m), LocalState::Irt(l)) => m.predict_many(l, questions, None),
            (GlobalModel::Mlp(m), LocalState::Mlp(l)) => m.predict_many(l, questions, None),
            _ => Err(Error::Config("local state does not match the model".into())),
        }
    }

    /// Scalar ability summary: `θ` for 1PL, mean predicted correctness over
    /// the whole bank for the neural model.
    pub fn ability(&self, local: &LocalState) -> Result<f64> {
        match local {
            LocalState::Irt(l) => Ok(l.theta),
            LocalState::Mlp(_) => {
                let all: Vec<usize> = (0..self.num_questions()).collect();
                let p = self.predict(local, &all)?;
                Ok(p.iter().sum::<f64>() / p.len() as f64)
            }
        }
    }

    /// Next question given the answers so far and the current local fit.
    pub fn select<R: Rng + ?Sized>(
        &self,
        administered: &[(usize, bool)],
        local: &LocalState,
        mask: &AvailabilityMask,
        rng: &mut R,
    ) -> Result<usize> {
        if mask.is_empty() {
            return Err(Error::NoAvailableQuestion);
        }
        match self.policy_kind {
            PolicyKind::Random => select_random(mask, rng),
            PolicyKind::Active => match (&self.model, local) {
                (GlobalModel::Irt(m), LocalState::Irt(l)) => m.active_select(l, mask),
                (GlobalModel::Mlp(m), LocalState::Mlp(l)) => m.active_select(l, mask),
                _ => Err(Error::Config("local state does not match the model".into())),
            },
            PolicyKind::Unbiased | PolicyKind::Approx => {
                let policy = self.policy.as_ref().expect("checked in Engine::new");
                let state = encode_state(administered, self.num_questions())?;
                policy.select(&state, mask, self.action_mode, rng)
            }
        }
    }
}

fn eval_cfg(cfg: AdaptConfig) -> AdaptConfig {
    AdaptConfig {
        eval_mode: true,
        ..cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn construction_checks() {
        let irt = GlobalModel::Irt(IrtGlobalParams::new(vec![0.0; 3], 0.0).unwrap());
        let adapt = Adaptation::InnerGd(AdaptConfig::default());
        assert!(Engine::new(irt.clone(), adapt, PolicyKind::Approx, None, ActionMode::Greedy).is_err());
        let wrong = PolicyNet::init(4, 2, &mut stream(1, &[]));
        assert!(matches!(
            Engine::new(irt.clone(), adapt, PolicyKind::Unbiased, Some(wrong), ActionMode::Greedy),
            Err(Error::QuestionCountMismatch { .. })
        ));
        let mlp = GlobalModel::Mlp(MlpGlobalParams::init(3, 4, 0.2, &mut stream(2, &[])).unwrap());
        assert!(Engine::new(mlp, Adaptation::Map { lambda: 1.0 }, PolicyKind::Random, None, ActionMode::Greedy).is_err());
    }

    #[test]
    fn map_adaptation_and_active_choice() {
        let m = IrtGlobalParams::new(vec![-1.0, 0.1, 2.0, 0.5], 0.0).unwrap();
        let e = Engine::new(
            GlobalModel::Irt(m.clone()),
            Adaptation::Map { lambda: 1.0 },
            PolicyKind::Active,
            None,
            ActionMode::Greedy,
        )
        .unwrap();
        let local = e.adapt(&[]).unwrap();
        assert_eq!(e.ability(&local).unwrap(), 0.0);
        let mask = AvailabilityMask::all(4);
        assert_eq!(e.select(&[], &local, &mask, &mut stream(3, &[])).unwrap(), 1);
        let local = e.adapt(&[(3, true)]).unwrap();
        let theta = irt_map_ability(&[(3, true)], &m.difficulties, 1.0, 0.0).unwrap();
        assert_eq!(local, LocalState::Irt(IrtGlobalParams::local(theta)));
        assert!(e.adapt(&[(9, true)]).is_err());
    }

    #[test]
    fn serde_shapes() {
        let a = Adaptation::Map { lambda: 0.5 };
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, r#"{"kind":"map","params":{"lambda":0.5}}"#);
        assert_eq!(serde_json::from_str::<Adaptation>(&s).unwrap(), a);
        let g = Adaptation::InnerGd(AdaptConfig::default());
        assert_eq!(serde_json::from_str::<Adaptation>(&serde_json::to_string(&g).unwrap()).unwrap(), g);
        assert_eq!(serde_json::to_string(&PolicyKind::Approx).unwrap(), "\"approx\"");
    }
}
