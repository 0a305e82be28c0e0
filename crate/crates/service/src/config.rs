use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub bind: String,
    pub checkpoint: PathBuf,
    /// JSON object mapping question id to display metadata.
    pub metadata: Option<PathBuf>,
    /// Append-only JSON-lines log; sessions are rebuilt from it on startup.
    pub answer_log: Option<PathBuf>,
    pub session_ttl_secs: u64,
    pub capacity: usize,
    /// Test length; defaults to the `n` the checkpoint was trained with.
    pub n_max: Option<usize>,
    /// Prior weight of the MAP ability estimate reported for 1PL checkpoints.
    pub map_lambda: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            checkpoint: PathBuf::from("checkpoint.json"),
            metadata: None,
            answer_log: None,
            session_ttl_secs: 3600,
            capacity: 1000,
            n_max: None,
            map_lambda: 1.0,
        }
    }
}
