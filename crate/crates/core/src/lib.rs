//! Adaptive testing engine with a question-selection policy learned by
//! bilevel optimization.
//!
//! The numeric layers (`diffcore`, `response`, `policy`, `estimators`) are
//! generic over [`Scalar`]; the orchestration layers (`trainer`,
//! `evaluation`) work in `f64` through the aliases below.

pub mod data;
pub mod diffcore;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod estimators;
pub mod policy;
pub mod response;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type IrtModel = response::IrtGlobalParams<f64>;
pub type MlpModel = response::MlpGlobalParams<f64>;
pub type Policy = policy::PolicyNet<f64>;
pub type Critic = policy::CriticNet<f64>;

pub use engine::Engine;
pub use trainer::{train, Checkpoint, TrainConfig};
