use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, LineWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use adaptest_core::engine::{Engine, GlobalModel, PolicyKind};
use adaptest_core::policy::{ActionMode, AvailabilityMask};
use adaptest_core::response::irt_map_ability;
use adaptest_core::rng::stream;
use adaptest_core::trainer::Checkpoint;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::error::ServiceError;

/// What the reported ability number means for the loaded checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbilityKind {
    /// MAP estimate of the 1PL ability.
    Theta,
    /// Mean predicted correctness over the whole question bank.
    MeanPredictedCorrectness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Finished,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub policy: Option<PolicyKind>,
    pub n_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub n_max: usize,
    pub policy: PolicyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextQuestion {
    pub question_id: String,
    pub question_index: usize,
    /// 1-based position of this question in the test.
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub display: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerOutcome {
    pub question_id: String,
    pub correct: bool,
    pub theta_hat: f64,
    pub ability_kind: AbilityKind,
    /// Number of answered questions, including this one.
    pub step: usize,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdministeredItem {
    pub question_id: String,
    pub question_index: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub policy: PolicyKind,
    pub n_max: usize,
    pub status: SessionStatus,
    pub administered: Vec<AdministeredItem>,
    pub trajectory: Vec<f64>,
    pub ability_kind: AbilityKind,
    pub pending_question: Option<String>,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogRecord {
    Create {
        session_id: String,
        policy: PolicyKind,
        n_max: usize,
        seed: u64,
    },
    Answer {
        session_id: String,
        question_index: usize,
        correct: bool,
    },
    Expire {
        session_id: String,
    },
}

struct Session {
    id: String,
    policy: PolicyKind,
    engine: Arc<Engine>,
    n_max: usize,
    seed: u64,
    administered: Vec<(usize, bool)>,
    trajectory: Vec<f64>,
    pending: Option<usize>,
    last_access: Instant,
    /// Set when the session is evicted while a request still holds it.
    gone: bool,
}

impl Session {
    fn finished(&self) -> bool {
        self.administered.len() >= self.n_max
    }
}

/// Owns all live sessions for one checkpoint.
///
/// The session table is behind a read-write lock; each session has its own
/// mutex, so requests for different sessions never wait on each other.
pub struct SessionManager {
    engines: HashMap<PolicyKind, Arc<Engine>>,
    default_policy: PolicyKind,
    default_n_max: usize,
    question_ids: Vec<String>,
    question_index: HashMap<String, usize>,
    display: HashMap<String, serde_json::Value>,
    ability_kind: AbilityKind,
    map_lambda: f64,
    capacity: usize,
    ttl: Duration,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    log: Option<Mutex<LineWriter<File>>>,
}

#[derive(Debug, Clone)]
pub struct ManagerOptions {
    pub capacity: usize,
    pub ttl: Duration,
    pub map_lambda: f64,
    pub n_max: Option<usize>,
    pub display: HashMap<String, serde_json::Value>,
    pub log_path: Option<PathBuf>,
}

impl Default for ManagerOptions {
    fn default() -> Self {
        let cfg = ServiceConfig::default();
        Self {
            capacity: cfg.capacity,
            ttl: Duration::from_secs(cfg.session_ttl_secs),
            map_lambda: cfg.map_lambda,
            n_max: None,
            display: HashMap::new(),
            log_path: None,
        }
    }
}

impl SessionManager {
    /// Builds a manager and replays the answer log at `opts.log_path`, if any.
    pub fn new(checkpoint: Checkpoint, opts: ManagerOptions) -> Result<Self, ServiceError> {
        if opts.capacity == 0 {
            return Err(ServiceError::Startup("capacity must be at least 1".into()));
        }
        if !(opts.map_lambda > 0.0 && opts.map_lambda.is_finite()) {
            return Err(ServiceError::Startup("map_lambda must be positive".into()));
        }
        let q = checkpoint.num_questions();
        let default_n_max = opts.n_max.unwrap_or(checkpoint.config.n).min(q);
        if default_n_max == 0 {
            return Err(ServiceError::Startup("n_max must be at least 1".into()));
        }
        let mut engines = HashMap::new();
        for kind in [PolicyKind::Random, PolicyKind::Active, PolicyKind::Unbiased, PolicyKind::Approx] {
            if kind.is_learned() && checkpoint.policy.is_none() {
                continue;
            }
            let engine = Engine::new(
                checkpoint.global.clone(),
                checkpoint.adaptation,
                kind,
                checkpoint.policy.clone(),
                ActionMode::Greedy,
            )?;
            engines.insert(kind, Arc::new(engine));
        }
        let ability_kind = match checkpoint.global {
            GlobalModel::Irt(_) => AbilityKind::Theta,
            GlobalModel::Mlp(_) => AbilityKind::MeanPredictedCorrectness,
        };
        let question_index = checkpoint
            .question_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let mut mgr = Self {
            engines,
            default_policy: checkpoint.policy_kind,
            default_n_max,
            question_ids: checkpoint.question_ids,
            question_index,
            display: opts.display,
            ability_kind,
            map_lambda: opts.map_lambda,
            capacity: opts.capacity,
            ttl: opts.ttl,
            sessions: RwLock::new(HashMap::new()),
            log: None,
        };
        if let Some(path) = &opts.log_path {
            mgr.replay(path)?;
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| ServiceError::Startup(format!("{}: {e}", path.display())))?;
            mgr.log = Some(Mutex::new(LineWriter::new(f)));
        }
        Ok(mgr)
    }

    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let checkpoint = Checkpoint::load(&cfg.checkpoint)?;
        let display = match &cfg.metadata {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ServiceError::Startup(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| ServiceError::Startup(format!("{}: {e}", path.display())))?
            }
            None => HashMap::new(),
        };
        Self::new(
            checkpoint,
            ManagerOptions {
                capacity: cfg.capacity,
                ttl: Duration::from_secs(cfg.session_ttl_secs),
                map_lambda: cfg.map_lambda,
                n_max: cfg.n_max,
                display,
                log_path: cfg.answer_log.clone(),
            },
        )
    }

    pub fn num_questions(&self) -> usize {
        self.question_ids.len()
    }

    pub fn default_policy(&self) -> PolicyKind {
        self.default_policy
    }

    pub fn ability_kind(&self) -> AbilityKind {
        self.ability_kind
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    pub fn create_session(&self, req: CreateRequest) -> Result<Created, ServiceError> {
        let policy = req.policy.unwrap_or(self.default_policy);
        let n_max = req.n_max.unwrap_or(self.default_n_max);
        if n_max == 0 || n_max > self.num_questions() {
            return Err(ServiceError::Validation(format!(
                "n_max must be in 1..={}, got {n_max}",
                self.num_questions()
            )));
        }
        if !self.engines.contains_key(&policy) {
            return Err(ServiceError::Validation(format!(
                "checkpoint has no network weights for the {policy} policy"
            )));
        }
        self.purge_expired();
        let mut rng = rand::rng();
        let seed: u64 = rng.random();
        let mut table = self.sessions.write().unwrap();
        if table.len() >= self.capacity {
            return Err(ServiceError::Capacity(self.capacity));
        }
        let id = loop {
            let id = format!("{:032x}", rng.random::<u128>());
            if !table.contains_key(&id) {
                break id;
            }
        };
        self.append(&LogRecord::Create {
            session_id: id.clone(),
            policy,
            n_max,
            seed,
        })?;
        table.insert(id.clone(), Arc::new(Mutex::new(self.fresh(id.clone(), policy, n_max, seed))));
        Ok(Created {
            session_id: id,
            n_max,
            policy,
        })
    }

    pub fn next_question(&self, id: &str) -> Result<NextQuestion, ServiceError> {
        let session = self.lookup(id)?;
        let mut s = session.lock().unwrap();
        self.touch(&mut s, id)?;
        let j = self.ensure_pending(&mut s)?;
        Ok(NextQuestion {
            question_id: self.question_ids[j].clone(),
            question_index: j,
            step: s.administered.len() + 1,
            display: self.display.get(&self.question_ids[j]).cloned(),
        })
    }

    pub fn submit_answer(&self, id: &str, question_id: &str, correct: bool) -> Result<AnswerOutcome, ServiceError> {
        let session = self.lookup(id)?;
        let mut s = session.lock().unwrap();
        self.touch(&mut s, id)?;
        if s.finished() {
            return Err(ServiceError::Finished(id.to_string()));
        }
        let Some(pending) = s.pending else {
            return Err(ServiceError::Conflict(format!(
                "no question is pending in session {id}; request the next question first"
            )));
        };
        let j = self.resolve(question_id)?;
        if j != pending {
            return Err(ServiceError::Conflict(format!(
                "question {question_id} is not the pending question {}",
                self.question_ids[pending]
            )));
        }
        self.append(&LogRecord::Answer {
            session_id: id.to_string(),
            question_index: j,
            correct,
        })?;
        let theta = self.record(&mut s, j, correct)?;
        Ok(AnswerOutcome {
            question_id: self.question_ids[j].clone(),
            correct,
            theta_hat: theta,
            ability_kind: self.ability_kind,
            step: s.administered.len(),
            finished: s.finished(),
        })
    }

    pub fn get_state(&self, id: &str) -> Result<SessionView, ServiceError> {
        let session = self.lookup(id)?;
        let mut s = session.lock().unwrap();
        self.touch(&mut s, id)?;
        Ok(SessionView {
            session_id: s.id.clone(),
            policy: s.policy,
            n_max: s.n_max,
            status: if s.finished() {
                SessionStatus::Finished
            } else {
                SessionStatus::Active
            },
            administered: s
                .administered
                .iter()
                .map(|&(j, correct)| AdministeredItem {
                    question_id: self.question_ids[j].clone(),
                    question_index: j,
                    correct,
                })
                .collect(),
            trajectory: s.trajectory.clone(),
            ability_kind: self.ability_kind,
            pending_question: s.pending.map(|j| self.question_ids[j].clone()),
            remaining: s.n_max - s.administered.len(),
        })
    }

    /// Drops sessions idle for longer than the TTL. Returns how many were removed.
    pub fn purge_expired(&self) -> usize {
        let now = Instant::now();
        let mut table = self.sessions.write().unwrap();
        let stale: Vec<String> = table
            .iter()
            .filter(|(_, s)| {
                // A session locked by an in-flight request is in use, not idle.
                s.try_lock()
                    .map(|s| now.duration_since(s.last_access) > self.ttl)
                    .unwrap_or(false)
            })
            .map(|(id, _)| id.clone())
            .collect();
        for id in &stale {
            if let Some(s) = table.remove(id) {
                s.lock().unwrap().gone = true;
            }
            if let Err(e) = self.append(&LogRecord::Expire { session_id: id.clone() }) {
                tracing::warn!("failed to log expiry of {id}: {e}");
            }
        }
        stale.len()
    }

    fn fresh(&self, id: String, policy: PolicyKind, n_max: usize, seed: u64) -> Session {
        Session {
            id,
            policy,
            engine: Arc::clone(&self.engines[&policy]),
            n_max,
            seed,
            administered: Vec::new(),
            trajectory: Vec::new(),
            pending: None,
            last_access: Instant::now(),
            gone: false,
        }
    }

    fn lookup(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    fn touch(&self, s: &mut Session, id: &str) -> Result<(), ServiceError> {
        if s.gone || s.last_access.elapsed() > self.ttl {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        s.last_access = Instant::now();
        Ok(())
    }

    fn resolve(&self, question_id: &str) -> Result<usize, ServiceError> {
        self.question_index
            .get(question_id)
            .copied()
            .ok_or_else(|| ServiceError::Validation(format!("unknown question id {question_id:?}")))
    }

    fn ensure_pending(&self, s: &mut Session) -> Result<usize, ServiceError> {
        if s.finished() {
            return Err(ServiceError::Finished(s.id.clone()));
        }
        if let Some(j) = s.pending {
            return Ok(j);
        }
        let mut mask = AvailabilityMask::all(self.num_questions());
        for &(j, _) in &s.administered {
            mask.take(j)?;
        }
        let local = s.engine.adapt(&s.administered)?;
        let mut rng = stream(s.seed, &[s.administered.len() as u64]);
        let j = s.engine.select(&s.administered, &local, &mask, &mut rng)?;
        s.pending = Some(j);
        Ok(j)
    }

    fn record(&self, s: &mut Session, j: usize, correct: bool) -> Result<f64, ServiceError> {
        let mut administered = s.administered.clone();
        administered.push((j, correct));
        let theta = self.ability(&s.engine, &administered)?;
        s.administered = administered;
        s.trajectory.push(theta);
        s.pending = None;
        Ok(theta)
    }

    fn ability(&self, engine: &Engine, administered: &[(usize, bool)]) -> Result<f64, ServiceError> {
        Ok(match &engine.model {
            GlobalModel::Irt(m) => irt_map_ability(administered, &m.difficulties, self.map_lambda, m.prior_mean)?,
            GlobalModel::Mlp(_) => engine.ability(&engine.adapt(administered)?)?,
        })
    }

    fn append(&self, record: &LogRecord) -> Result<(), ServiceError> {
        if let Some(log) = &self.log {
            let line = serde_json::to_string(record).map_err(|e| ServiceError::Internal(e.to_string()))?;
            let mut w = log.lock().unwrap();
            writeln!(w, "{line}").map_err(|e| ServiceError::Internal(format!("answer log: {e}")))?;
        }
        Ok(())
    }

    fn replay(&mut self, path: &Path) -> Result<(), ServiceError> {
        let f = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(ServiceError::Startup(format!("{}: {e}", path.display()))),
        };
        let bad = |line: usize, msg: String| ServiceError::Startup(format!("{}:{line}: {msg}", path.display()));
        let mut table: HashMap<String, Session> = HashMap::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| bad(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: LogRecord = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
            match record {
                LogRecord::Create {
                    session_id,
                    policy,
                    n_max,
                    seed,
                } => {
                    if !self.engines.contains_key(&policy) || n_max == 0 || n_max > self.num_questions() {
                        return Err(bad(i + 1, format!("session {session_id} does not fit this checkpoint")));
                    }
                    let s = self.fresh(session_id.clone(), policy, n_max, seed);
                    table.insert(session_id, s);
                }
                LogRecord::Answer {
                    session_id,
                    question_index,
                    correct,
                } => {
                    let s = table
                        .get_mut(&session_id)
                        .ok_or_else(|| bad(i + 1, format!("answer for unknown session {session_id}")))?;
                    let j = self.ensure_pending(s).map_err(|e| bad(i + 1, e.to_string()))?;
                    if j != question_index {
                        return Err(bad(
                            i + 1,
                            format!("replay diverged: selected question {j}, log has {question_index}"),
                        ));
                    }
                    self.record(s, j, correct).map_err(|e| bad(i + 1, e.to_string()))?;
                }
                LogRecord::Expire { session_id } => {
                    table.remove(&session_id);
                }
            }
        }
        *self.sessions.get_mut().unwrap() = table
            .into_iter()
            .map(|(id, s)| (id, Arc::new(Mutex::new(s))))
            .collect();
        Ok(())
    }
}
