use serde::{Deserialize, Serialize};

use super::SelectionRecord;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::response::irt_map_ability;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityErrorRow {
    pub n: usize,
    pub mse: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityErrorReport {
    pub method: String,
    pub rows: Vec<AbilityErrorRow>,
}

impl AbilityErrorReport {
    pub fn mse_at(&self, n: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.n == n).map(|r| r.mse)
    }
}

/// Squared error between the MAP ability from the first `n` selected
/// responses and the MAP ability from all of the student's responses,
/// averaged over the selection records.
pub fn ability_error_study(
    method: &str,
    dataset: &Dataset,
    selections: &[SelectionRecord],
    difficulties: &[f64],
    prior_mean: f64,
    lambda2: f64,
    n_list: &[usize],
) -> Result<AbilityErrorReport> {
    if difficulties.len() != dataset.num_questions() {
        return Err(Error::QuestionCountMismatch {
            checkpoint: difficulties.len(),
            data: dataset.num_questions(),
        });
    }
    let mut full = std::collections::HashMap::new();
    let mut sums = vec![(0.0, 0usize); n_list.len()];
    for rec in selections {
        let student = dataset.student(rec.student);
        let theta_full = match full.get(&rec.student) {
            Some(&t) => t,
            None => {
                let t = irt_map_ability(&student.responses, difficulties, lambda2, prior_mean)?;
                full.insert(rec.student, t);
                t
            }
        };
        for (slot, &n) in sums.iter_mut().zip(n_list) {
            if n > rec.questions.len() {
                continue;
            }
            let answered: Vec<(usize, bool)> = rec.questions[..n]
                .iter()
                .map(|&j| {
                    student
                        .answer(j)
                        .map(|y| (j, y))
                        .ok_or_else(|| Error::Config(format!("student {} never answered question {j}", student.id)))
                })
                .collect::<Result<_>>()?;
            let theta = irt_map_ability(&answered, difficulties, lambda2, prior_mean)?;
            slot.0 += (theta - theta_full).powi(2);
            slot.1 += 1;
        }
    }
    let rows = n_list
        .iter()
        .zip(sums)
        .map(|(&n, (s, c))| AbilityErrorRow {
            n,
            mse: if c == 0 { f64::NAN } else { s / c as f64 },
            count: c,
        })
        .collect();
    Ok(AbilityErrorReport {
        method: method.to_string(),
        rows,
    })
}
