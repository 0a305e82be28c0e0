//! HTTP service that administers fixed-length adaptive tests from a trained
//! checkpoint.
//!
//! Endpoints:
//!
//! | method | path                    | body                          | reply                                   |
//! |--------|-------------------------|-------------------------------|-----------------------------------------|
//! | POST   | `/sessions`             | `{policy?, n_max?}` or empty  | `{session_id, n_max, policy}`           |
//! | GET    | `/sessions/{id}/next`   |                               | `{question_id, question_index, step, display?}` |
//! | POST   | `/sessions/{id}/answer` | `{question_id, correct}`      | `{theta_hat, ability_kind, step, finished, ...}` |
//! | GET    | `/sessions/{id}`        |                               | full session view                       |
//! | GET    | `/healthz`              |                               | `{status, num_questions, policy}`       |
//!
//! Errors are `{code, message}` with status 404, 409, 422 or 429.
//!
//! Serving conventions (none of these come from the training procedure):
//! actions are greedy; the mask is every question not yet administered;
//! 1PL checkpoints report a MAP ability estimate, neural checkpoints report
//! mean predicted correctness over the bank.

mod config;
mod error;
mod http;
mod session;

pub use config::ServiceConfig;
pub use error::{ErrorBody, ServiceError};
pub use http::{router, serve};
pub use session::{
    AbilityKind, AdministeredItem, AnswerOutcome, CreateRequest, Created, ManagerOptions, NextQuestion,
    SessionManager, SessionStatus, SessionView,
};
