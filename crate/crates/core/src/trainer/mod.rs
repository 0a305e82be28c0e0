//! Bilevel training: per mini-batch, roll out selection episodes, adapt
//! each student's local parameters, update the policy with the configured
//! estimator, then update the global response model with the first-order
//! meta-gradient. Validation accuracy drives early stopping.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::TrainConfig;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_eval_partitions, partition_for, Dataset, EvalPartitionSet, FoldSplit, StudentResponses};
use crate::diffcore::OptimizerState;
use crate::engine::{Adaptation, Engine, GlobalModel, ModelKind, PolicyKind};
use crate::error::{Error, Result};
use crate::estimators::{
    approx_policy_grad, compute_reward_and_baseline, influence_scores, ppo_update, EpisodeTrace, PpoLosses, TraceStep,
};
use crate::evaluation::{eval_policy, EvalOptions};
use crate::policy::{encode_state, sample, select_random, ActionMode, AvailabilityMask, CriticNet, PolicyNet, TanhMlpGrad};
use crate::response::{
    fit_irt_mle, inner_adapt, outer_update, AdaptConfig, GlobalOptimizers, IrtGlobalParams, MlpGlobalParams,
    ResponseModel,
};
use crate::rng::{stream, tag_str, StreamRng};

const PARTITION_TAG: u64 = 0x7A11;
const ORDER_TAG: u64 = 0x0DE2;
const EPISODE_TAG: u64 = 0xE915;
const INIT_TAG: u64 = 0x1417;
const VAL_TAG: u64 = 0x7A1D;

/// One JSON-lines record per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_meta_loss: f64,
    pub train_meta_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub val_auc: Option<f64>,
    /// Mean PPO components over the epoch's updates.
    pub ppo: Option<PpoLosses>,
    pub policy_updates: usize,
    pub improved: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Trains on the fold's training students, validating on its validation
/// students. Log records are also written to `log_sink` as they are produced.
pub fn train(
    dataset: &Dataset,
    fold: &FoldSplit,
    cfg: &TrainConfig,
    log_sink: Option<&mut (dyn Write + Send)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if fold.train_students.is_empty() {
        return Err(Error::InsufficientStudents { needed: 1, found: 0 });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cfg.model {
        ModelKind::Irt => train_irt(dataset, fold, cfg),
        ModelKind::Biirt => {
            let model = IrtGlobalParams::zeros(dataset.num_questions());
            Trainer::new(dataset, fold, cfg, model, GlobalModel::Irt)?.run(log_sink)
        }
        ModelKind::Binn => {
            let mut r = stream(cfg.seed, &[INIT_TAG, 0]);
            let model = MlpGlobalParams::init(dataset.num_questions(), cfg.hidden, cfg.dropout, &mut r)?;
            Trainer::new(dataset, fold, cfg, model, GlobalModel::Mlp)?.run(log_sink)
        }
    })
}

fn validation_set(dataset: &Dataset, fold: &FoldSplit, cfg: &TrainConfig) -> Result<Option<EvalPartitionSet>> {
    if fold.val_students.is_empty() {
        return Ok(None);
    }
    make_eval_partitions(dataset, &fold.val_students, cfg.val_repetitions, cfg.seed ^ VAL_TAG).map(Some)
}

fn validate_engine(
    engine: &Engine,
    dataset: &Dataset,
    val: &Option<EvalPartitionSet>,
    cfg: &TrainConfig,
) -> Result<(Option<f64>, Option<f64>)> {
    let Some(parts) = val else {
        return Ok((None, None));
    };
    let opts = EvalOptions {
        method: "validation".into(),
        fold: 0,
        n_list: vec![cfg.n],
        seed: cfg.seed ^ VAL_TAG,
    };
    let out = eval_policy(engine, dataset, parts, &opts)?;
    let row = &out.report.rows[0];
    Ok((Some(row.accuracy), row.auc))
}

/// Calibrates the non-bilevel 1PL model on the training students.
fn train_irt(dataset: &Dataset, fold: &FoldSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let start = Instant::now();
    let train_set = dataset.subset(&fold.train_students);
    if train_set.num_questions() != dataset.num_questions() {
        return Err(Error::Config(format!(
            "training students answer only {} of {} questions",
            train_set.num_questions(),
            dataset.num_questions()
        )));
    }
    let fit = fit_irt_mle(&train_set, cfg.irt_fit_lambda)?;
    let engine = Engine::new(
        GlobalModel::Irt(fit.global),
        Adaptation::Map { lambda: cfg.map_lambda },
        cfg.policy,
        None,
        ActionMode::Greedy,
    )?;
    let val = validation_set(dataset, fold, cfg)?;
    let (val_accuracy, val_auc) = validate_engine(&engine, dataset, &val, cfg)?;
    let log = vec![EpochLog {
        epoch: 1,
        train_meta_loss: f64::NAN,
        train_meta_accuracy: f64::NAN,
        val_accuracy,
        val_auc,
        ppo: None,
        policy_updates: 0,
        improved: true,
        wall_time_s: start.elapsed().as_secs_f64(),
    }];
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model_kind: ModelKind::Irt,
            policy_kind: cfg.policy,
            question_ids: dataset.question_ids().to_vec(),
            global: engine.model,
            adaptation: engine.adaptation,
            policy: None,
            critic: None,
            config: cfg.clone(),
            training: TrainingMeta {
                epoch: 1,
                epochs_run: 1,
                val_accuracy,
            },
        },
        log,
    })
}

/// Per-student state for one episode.
struct Episode {
    pool: Vec<(usize, bool)>,
    meta: Vec<(usize, bool)>,
    mask: AvailabilityMask,
    administered: Vec<(usize, bool)>,
    steps: Vec<TraceStep<f64>>,
    rng: StreamRng,
}

impl Episode {
    fn new(dataset: &Dataset, student: usize, seed: u64, epoch: usize) -> Result<Self> {
        let s: &StudentResponses = dataset.student(student);
        let part = partition_for(dataset, student, seed, &[PARTITION_TAG, epoch as u64])?;
        let answers = |qs: &[usize]| -> Vec<(usize, bool)> {
            qs.iter().map(|&j| (j, s.answer(j).expect("partition of answered questions"))).collect()
        };
        Ok(Self {
            mask: AvailabilityMask::from_pool(dataset.num_questions(), &part.training)?,
            pool: answers(&part.training),
            meta: answers(&part.meta),
            administered: Vec::new(),
            steps: Vec::new(),
            rng: stream(seed, &[EPISODE_TAG, epoch as u64, tag_str(&s.id)]),
        })
    }

    fn answer(&self, j: usize) -> bool {
        self.pool
            .iter()
            .find(|&&(q, _)| q == j)
            .map(|&(_, y)| y)
            .expect("mask only offers pool questions")
    }

    fn administer(&mut self, j: usize) -> Result<()> {
        self.mask.take(j)?;
        let y = self.answer(j);
        self.administered.push((j, y));
        Ok(())
    }
}

struct BatchResult {
    grad: Option<TanhMlpGrad<f64>>,
}

struct Trainer<'a, M: ResponseModel<f64>> {
    dataset: &'a Dataset,
    fold: &'a FoldSplit,
    cfg: &'a TrainConfig,
    model: M,
    wrap: fn(M) -> GlobalModel,
    optimizers: GlobalOptimizers<f64>,
    policy: Option<PolicyNet<f64>>,
    critic: Option<CriticNet<f64>>,
    actor_opt: OptimizerState<f64>,
    critic_opt: OptimizerState<f64>,
}

impl<'a, M: ResponseModel<f64>> Trainer<'a, M> {
    fn new(
        dataset: &'a Dataset,
        fold: &'a FoldSplit,
        cfg: &'a TrainConfig,
        model: M,
        wrap: fn(M) -> GlobalModel,
    ) -> Result<Self> {
        let q = dataset.num_questions();
        let policy = cfg
            .policy
            .is_learned()
            .then(|| PolicyNet::init(q, cfg.policy_hidden, &mut stream(cfg.seed, &[INIT_TAG, 1])));
        let critic = (cfg.policy == PolicyKind::Unbiased)
            .then(|| CriticNet::init(q, cfg.policy_hidden, &mut stream(cfg.seed, &[INIT_TAG, 2])));
        Ok(Self {
            dataset,
            fold,
            cfg,
            model,
            wrap,
            optimizers: GlobalOptimizers {
                question: OptimizerState::new(cfg.question_optimizer()),
                student: OptimizerState::new(cfg.student_optimizer()),
            },
            policy,
            critic,
            actor_opt: OptimizerState::new(cfg.policy_optimizer()),
            critic_opt: OptimizerState::new(cfg.policy_optimizer()),
        })
    }

    fn engine(&self) -> Result<Engine> {
        Engine::new(
            (self.wrap)(self.model.clone()),
            Adaptation::InnerGd(self.cfg.adapt),
            self.cfg.policy,
            self.policy.clone(),
            ActionMode::Greedy,
        )
    }

    fn checkpoint(&self, training: TrainingMeta) -> Checkpoint {
        Checkpoint {
            model_kind: self.cfg.model,
            policy_kind: self.cfg.policy,
            question_ids: self.dataset.question_ids().to_vec(),
            global: (self.wrap)(self.model.clone()),
            adaptation: Adaptation::InnerGd(self.cfg.adapt),
            policy: self.policy.clone(),
            critic: self.critic.clone(),
            config: self.cfg.clone(),
            training,
        }
    }

    fn run(mut self, mut log_sink: Option<&mut (dyn Write + Send)>) -> Result<TrainOutcome> {
        let val = validation_set(self.dataset, self.fold, self.cfg)?;
        let mut log = Vec::new();
        let mut best: Option<(f64, Checkpoint)> = None;
        let mut stale = 0;
        let mut epochs_run = 0;
        for epoch in 0..self.cfg.max_epochs {
            let start = Instant::now();
            let mut order = self.fold.train_students.clone();
            order.shuffle(&mut stream(self.cfg.seed, &[ORDER_TAG, epoch as u64]));
            let mut stats = EpochStats::default();
            for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
                self.batch(chunk, epoch, &mut stats).map_err(|e| Error::Training {
                    epoch,
                    batch: b,
                    source: Box::new(e),
                })?;
            }
            epochs_run = epoch + 1;
            let (val_accuracy, val_auc) = validate_engine(&self.engine()?, self.dataset, &val, self.cfg)?;
            let score = val_accuracy.unwrap_or(f64::NEG_INFINITY);
            let improved = best.as_ref().is_none_or(|(b, _)| score > *b) || val_accuracy.is_none();
            if improved {
                stale = 0;
                let meta = TrainingMeta {
                    epoch: epoch + 1,
                    epochs_run,
                    val_accuracy,
                };
                best = Some((score, self.checkpoint(meta)));
            } else {
                stale += 1;
            }
            let record = EpochLog {
                epoch: epoch + 1,
                train_meta_loss: stats.loss / stats.students.max(1) as f64,
                train_meta_accuracy: stats.accuracy / stats.students.max(1) as f64,
                val_accuracy,
                val_auc,
                ppo: stats.ppo_mean(),
                policy_updates: stats.policy_updates,
                improved,
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            if let Some(w) = log_sink.as_deref_mut() {
                let line = serde_json::to_string(&record)?;
                writeln!(w, "{line}").map_err(|e| Error::io(std::path::Path::new("<training log>"), e))?;
            }
            log.push(record);
            if stale >= self.cfg.patience {
                break;
            }
        }
        let (_, mut checkpoint) = best.expect("at least one epoch ran");
        checkpoint.training.epochs_run = epochs_run;
        Ok(TrainOutcome { checkpoint, log })
    }

    fn batch(&mut self, students: &[usize], epoch: usize, stats: &mut EpochStats) -> Result<()> {
        let cfg = self.cfg;
        let mut episodes: Vec<Episode> = students
            .par_iter()
            .map(|&s| Episode::new(self.dataset, s, cfg.seed, epoch))
            .collect::<Result<_>>()?;

        for _ in 0..cfg.n {
            let model = &self.model;
            let policy = self.policy.as_ref();
            let critic = self.critic.as_ref();
            let results: Vec<BatchResult> = episodes
                .par_iter_mut()
                .map(|ep| select_step(model, policy, critic, cfg, ep))
                .collect::<Result<_>>()?;
            if cfg.policy == PolicyKind::Approx {
                let grads: Vec<TanhMlpGrad<f64>> = results.into_iter().filter_map(|r| r.grad).collect();
                if let Some(first) = grads.first() {
                    let mut total = first.clone();
                    grads[1..].iter().for_each(|g| total.add(g));
                    total.scale(1.0 / grads.len() as f64);
                    let policy = self.policy.as_mut().expect("learned policy");
                    self.actor_opt.step(&mut policy.net.params_mut(), &total.groups())?;
                    stats.policy_updates += 1;
                }
            }
        }

        let model = &self.model;
        let finals: Vec<(M::Grad, f64, f64, Option<EpisodeTrace<f64>>)> = episodes
            .par_iter_mut()
            .map(|ep| finish_episode(model, cfg, ep))
            .collect::<Result<_>>()?;
        let mut grads = Vec::with_capacity(finals.len());
        let mut traces = Vec::new();
        for (g, loss, acc, trace) in finals {
            grads.push(g);
            stats.loss += loss;
            stats.accuracy += acc;
            stats.students += 1;
            traces.extend(trace);
        }
        outer_update(&mut self.model, &grads, &mut self.optimizers)?;

        if cfg.policy == PolicyKind::Unbiased && traces.iter().any(|t| !t.steps.is_empty()) {
            let history = ppo_update(
                self.policy.as_mut().expect("learned policy"),
                self.critic.as_mut().expect("critic"),
                &traces,
                &cfg.ppo,
                &mut self.actor_opt,
                &mut self.critic_opt,
            )?;
            stats.policy_updates += history.len();
            stats.ppo.extend(history);
        }
        Ok(())
    }
}

/// Chooses and administers one question; for the influence estimator also
/// returns this student's policy gradient.
fn select_step<M: ResponseModel<f64>>(
    model: &M,
    policy: Option<&PolicyNet<f64>>,
    critic: Option<&CriticNet<f64>>,
    cfg: &TrainConfig,
    ep: &mut Episode,
) -> Result<BatchResult> {
    if ep.mask.is_empty() {
        return Ok(BatchResult { grad: None });
    }
    let q = model.num_questions();
    match cfg.policy {
        PolicyKind::Random => {
            let j = select_random(&ep.mask, &mut ep.rng)?;
            ep.administer(j)?;
            Ok(BatchResult { grad: None })
        }
        PolicyKind::Active => {
            let eval = AdaptConfig {
                eval_mode: true,
                ..cfg.adapt
            };
            let local = inner_adapt(model, &ep.administered, &eval, None)?;
            let j = model.active_select(&local, &ep.mask)?;
            ep.administer(j)?;
            Ok(BatchResult { grad: None })
        }
        PolicyKind::Unbiased => {
            let policy = policy.expect("learned policy");
            let state = encode_state(&ep.administered, q)?;
            let out = policy.forward(&state, &ep.mask)?;
            let j = sample(&out.probs, &ep.mask, &mut ep.rng)?;
            let old_value = critic.expect("critic").value(&state)?;
            ep.steps.push(TraceStep {
                state,
                mask: ep.mask.clone(),
                action: j,
                old_prob: out.probs[j],
                old_value,
            });
            ep.administer(j)?;
            Ok(BatchResult { grad: None })
        }
        PolicyKind::Approx => {
            let policy = policy.expect("learned policy");
            let state = encode_state(&ep.administered, q)?;
            let mask_before = ep.mask.clone();
            let out = policy.forward(&state, &mask_before)?;
            let j = sample(&out.probs, &mask_before, &mut ep.rng)?;
            ep.administer(j)?;
            let local = inner_adapt(model, &ep.administered, &cfg.adapt, Some(&mut ep.rng))?;
            let candidates: Vec<(usize, bool)> =
                ep.pool.iter().copied().filter(|&(k, _)| mask_before.is_available(k)).collect();
            let scores = influence_scores(model, &local, &candidates, &ep.administered, &ep.meta, &cfg.influence)?;
            let grad = approx_policy_grad(&scores, policy, &out, &mask_before)?;
            Ok(BatchResult { grad: Some(grad) })
        }
    }
}

/// Adapts on the episode's answers and returns the student's meta-gradient,
/// meta loss, meta accuracy and, for PPO, the completed trace.
#[allow(clippy::type_complexity)]
fn finish_episode<M: ResponseModel<f64>>(
    model: &M,
    cfg: &TrainConfig,
    ep: &mut Episode,
) -> Result<(M::Grad, f64, f64, Option<EpisodeTrace<f64>>)> {
    let local = inner_adapt(model, &ep.administered, &cfg.adapt, Some(&mut ep.rng))?;
    let mg = model.meta_grads(&local, &ep.meta, Some(&mut ep.rng))?;
    let trace = if cfg.policy == PolicyKind::Unbiased {
        let (reward, baseline) = compute_reward_and_baseline(
            model,
            &ep.administered,
            &ep.pool,
            &ep.meta,
            &cfg.adapt,
            cfg.reward,
            &mut ep.rng,
        )?;
        Some(EpisodeTrace {
            steps: std::mem::take(&mut ep.steps),
            reward,
            baseline,
        })
    } else {
        None
    };
    Ok((mg.global, mg.eval.loss, mg.eval.accuracy, trace))
}

#[derive(Default)]
struct EpochStats {
    loss: f64,
    accuracy: f64,
    students: usize,
    policy_updates: usize,
    ppo: Vec<PpoLosses>,
}

impl EpochStats {
    fn ppo_mean(&self) -> Option<PpoLosses> {
        if self.ppo.is_empty() {
            return None;
        }
        let n = self.ppo.len() as f64;
        let sum = |f: fn(&PpoLosses) -> f64| self.ppo.iter().map(f).sum::<f64>() / n;
        Some(PpoLosses {
            l1: sum(|l| l.l1),
            l2: sum(|l| l.l2),
            l3: sum(|l| l.l3),
            total: sum(|l| l.total),
        })
    }
}
