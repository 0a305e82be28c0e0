//! Evaluation: policy rollouts on held-out students, accuracy and AUC,
//! ability-estimation error, exposure and overlap, mutual-information
//! analysis, and report files.

mod ability;
mod exposure;
mod metrics;
mod mi;
mod report;

pub use ability::{ability_error_study, AbilityErrorReport, AbilityErrorRow};
pub use exposure::{exposure_and_overlap, ExposureReport, MAX_OVERLAP_PAIRS};
pub use metrics::{accuracy, auc};
pub use mi::{decile_bins, mi_analysis, mi_from_counts, mutual_information, weighted_mi, MethodBins, MiReport, NUM_BINS};
pub use report::{emit_report, load_json_report, write_csv, PlotData, PlotRow, Report, ReportFormat};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EvalPartitionSet, StudentResponses};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::policy::AvailabilityMask;
use crate::rng::{stream, tag_str};

const EVAL_STREAM_TAG: u64 = 0xE7A2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub n: usize,
    pub fold: usize,
    /// Mean over repetitions of the pooled meta-set accuracy.
    pub accuracy: f64,
    pub accuracy_std: f64,
    /// Mean over repetitions with a defined pooled AUC.
    pub auc: Option<f64>,
    pub auc_std: Option<f64>,
    pub repetitions: usize,
    /// Repetitions whose pooled labels had a single class.
    pub undefined_auc: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn merge(&mut self, other: MetricsReport) {
        self.rows.extend(other.rows);
    }

    pub fn row(&self, method: &str, n: usize, fold: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method && r.n == n && r.fold == fold)
    }

    /// Mean and standard deviation across folds per method and n.
    pub fn plot_data(&self) -> PlotData {
        let mut groups: BTreeMap<(String, usize), Vec<&MetricsRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.method.clone(), r.n)).or_default().push(r);
        }
        let rows = groups
            .into_iter()
            .map(|((method, n), rows)| {
                let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
                let auc: Vec<f64> = rows.iter().filter_map(|r| r.auc).collect();
                let (accuracy_mean, accuracy_std) = metrics::mean_std(&acc);
                let (auc_mean, auc_std) = metrics::mean_std(&auc);
                PlotRow {
                    method,
                    n,
                    folds: rows.len(),
                    accuracy_mean,
                    accuracy_std,
                    auc_mean,
                    auc_std,
                }
            })
            .collect();
        PlotData { rows }
    }
}

/// Questions administered to one student in one repetition, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub student: usize,
    pub student_id: String,
    pub repetition: usize,
    pub questions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub selections: Vec<SelectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub method: String,
    pub fold: usize,
    pub n_list: Vec<usize>,
    /// Seeds the random policy's draws.
    pub seed: u64,
}

struct Rollout {
    questions: Vec<usize>,
    /// Per entry of the n list: meta labels and predictions.
    snapshots: Vec<(Vec<bool>, Vec<f64>)>,
}

fn answered(student: &StudentResponses, questions: &[usize]) -> Result<Vec<(usize, bool)>> {
    questions
        .iter()
        .map(|&j| {
            student
                .answer(j)
                .map(|y| (j, y))
                .ok_or_else(|| Error::Config(format!("student {} has no response to question {j}", student.id)))
        })
        .collect()
}

fn rollout(
    engine: &Engine,
    student: &StudentResponses,
    pool: &[usize],
    meta: &[usize],
    n_list: &[usize],
    seed: u64,
    repetition: usize,
) -> Result<Rollout> {
    let q = engine.num_questions();
    let pool_answers = answered(student, pool)?;
    let meta_answers = answered(student, meta)?;
    let labels: Vec<bool> = meta_answers.iter().map(|&(_, y)| y).collect();
    let max_n = n_list.iter().copied().max().unwrap_or(0);
    let mut rng = stream(seed, &[EVAL_STREAM_TAG, tag_str(&student.id), repetition as u64]);
    let mut mask = AvailabilityMask::from_pool(q, pool)?;
    let mut administered = Vec::with_capacity(max_n);
    let mut local = engine.adapt(&administered)?;
    let mut at_step: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for step in 0..=max_n {
        if n_list.contains(&step) {
            at_step.insert(step, engine.predict(&local, meta)?);
        }
        if step == max_n || mask.is_empty() {
            // Pool exhausted: later snapshots repeat the final state.
            if step < max_n {
                let probs = engine.predict(&local, meta)?;
                for &n in n_list.iter().filter(|&&n| n > step) {
                    at_step.insert(n, probs.clone());
                }
            }
            break;
        }
        let j = engine.select(&administered, &local, &mask, &mut rng)?;
        mask.take(j)?;
        let y = pool_answers
            .iter()
            .find(|&&(q, _)| q == j)
            .map(|&(_, y)| y)
            .expect("mask only offers pool questions");
        administered.push((j, y));
        local = engine.adapt(&administered)?;
    }
    Ok(Rollout {
        questions: administered.iter().map(|&(j, _)| j).collect(),
        snapshots: n_list.iter().map(|n| (labels.clone(), at_step[n].clone())).collect(),
    })
}

/// Rolls the engine's policy for each evaluation student and repetition
/// against the recorded training-pool answers, scoring the meta set after
/// each test length in `n_list`.
pub fn eval_policy(
    engine: &Engine,
    dataset: &Dataset,
    partitions: &EvalPartitionSet,
    opts: &EvalOptions,
) -> Result<EvalOutcome> {
    if dataset.num_questions() != engine.num_questions() {
        return Err(Error::QuestionCountMismatch {
            checkpoint: engine.num_questions(),
            data: dataset.num_questions(),
        });
    }
    let jobs: Vec<(usize, usize)> = partitions
        .students
        .iter()
        .enumerate()
        .flat_map(|(s, sp)| (0..sp.repetitions.len()).map(move |r| (s, r)))
        .collect();
    let rollouts: Vec<Rollout> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let sp = &partitions.students[s];
            let part = &sp.repetitions[r];
            rollout(engine, dataset.student(sp.student), &part.training, &part.meta, &opts.n_list, opts.seed, r)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(opts.n_list.len());
    for (k, &n) in opts.n_list.iter().enumerate() {
        let mut accs = Vec::new();
        let mut aucs = Vec::new();
        let mut undefined = 0;
        for rep in 0..partitions.repetitions {
            let mut labels = Vec::new();
            let mut probs = Vec::new();
            for (&(_, r), ro) in jobs.iter().zip(&rollouts) {
                if r == rep {
                    labels.extend_from_slice(&ro.snapshots[k].0);
                    probs.extend_from_slice(&ro.snapshots[k].1);
                }
            }
            if labels.is_empty() {
                continue;
            }
            accs.push(accuracy(&labels, &probs));
            match auc(&labels, &probs) {
                Some(a) => aucs.push(a),
                None => undefined += 1,
            }
        }
        let (accuracy, accuracy_std) = metrics::mean_std(&accs);
        let (auc_mean, auc_std) = metrics::mean_std(&aucs);
        rows.push(MetricsRow {
            method: opts.method.clone(),
            n,
            fold: opts.fold,
            accuracy,
            accuracy_std,
            auc: (!aucs.is_empty()).then_some(auc_mean),
            auc_std: (!aucs.is_empty()).then_some(auc_std),
            repetitions: accs.len(),
            undefined_auc: undefined,
        });
    }
    let selections = jobs
        .iter()
        .zip(rollouts)
        .map(|(&(s, r), ro)| SelectionRecord {
            student: partitions.students[s].student,
            student_id: partitions.students[s].student_id.clone(),
            repetition: r,
            questions: ro.questions,
        })
        .collect();
    Ok(EvalOutcome {
        report: MetricsReport { rows },
        selections,
    })
}
