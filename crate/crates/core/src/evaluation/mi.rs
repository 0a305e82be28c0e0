use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const NUM_BINS: usize = 10;

/// Plug-in mutual information (natural log) of a 2×2 count table
/// `counts[a][b]`, with `0·log 0 = 0`. `None` for an empty table.
pub fn mi_from_counts(counts: [[u64; 2]; 2]) -> Option<f64> {
    let n: u64 = counts.iter().flatten().sum();
    if n == 0 {
        return None;
    }
    let n = n as f64;
    let row = [counts[0][0] + counts[0][1], counts[1][0] + counts[1][1]];
    let col = [counts[0][0] + counts[1][0], counts[0][1] + counts[1][1]];
    let mut mi = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let c = counts[a][b];
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += c / n * (c * n / (row[a] as f64 * col[b] as f64)).ln();
        }
    }
    // Rounding can leave a tiny negative value for independent tables.
    Some(mi.max(0.0))
}

/// Bitsets of who answered each question and who answered it correctly.
struct AnswerBits {
    words: usize,
    answered: Vec<Vec<u64>>,
    correct: Vec<Vec<u64>>,
}

impl AnswerBits {
    fn new(dataset: &Dataset) -> Self {
        let words = dataset.num_students().div_ceil(64);
        let q = dataset.num_questions();
        let mut answered = vec![vec![0u64; words]; q];
        let mut correct = vec![vec![0u64; words]; q];
        for (i, s) in dataset.students().iter().enumerate() {
            for &(j, y) in &s.responses {
                answered[j][i / 64] |= 1 << (i % 64);
                if y {
                    correct[j][i / 64] |= 1 << (i % 64);
                }
            }
        }
        Self {
            words,
            answered,
            correct,
        }
    }

    fn table(&self, j: usize, k: usize) -> [[u64; 2]; 2] {
        let (mut both, mut n11, mut j1, mut k1) = (0u64, 0u64, 0u64, 0u64);
        for w in 0..self.words {
            let (aj, ak, cj, ck) = (self.answered[j][w], self.answered[k][w], self.correct[j][w], self.correct[k][w]);
            both += u64::from((aj & ak).count_ones());
            n11 += u64::from((cj & ck).count_ones());
            j1 += u64::from((cj & ak).count_ones());
            k1 += u64::from((aj & ck).count_ones());
        }
        let n10 = j1 - n11;
        let n01 = k1 - n11;
        [[both - n11 - n10 - n01, n01], [n10, n11]]
    }
}

/// MI between the responses to questions `j` and `k` over students who
/// answered both. `None` when nobody did.
pub fn mutual_information(dataset: &Dataset, j: usize, k: usize) -> Result<Option<f64>> {
    let q = dataset.num_questions();
    for idx in [j, k] {
        if idx >= q {
            return Err(Error::QuestionOutOfRange {
                index: idx,
                num_questions: q,
            });
        }
    }
    let mut counts = [[0u64; 2]; 2];
    for s in dataset.students() {
        if let (Some(a), Some(b)) = (s.answer(j), s.answer(k)) {
            counts[usize::from(a)][usize::from(b)] += 1;
        }
    }
    Ok(mi_from_counts(counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodBins {
    pub method: String,
    pub selections: usize,
    /// Fraction of selections in bins 1..=10.
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiReport {
    /// `Σ_{k≠j} p_k · MI(j, k)` per question.
    pub weighted_mi: Vec<f64>,
    /// Decile bin 1..=10 per question, by ascending weighted MI.
    pub bins: Vec<usize>,
    /// Question pairs without co-respondents, counted once per unordered pair.
    pub undefined_pairs: usize,
    pub methods: Vec<MethodBins>,
}

pub fn weighted_mi(dataset: &Dataset) -> (Vec<f64>, usize) {
    let q = dataset.num_questions();
    let bits = AnswerBits::new(dataset);
    let students = dataset.num_students().max(1) as f64;
    let freq: Vec<f64> = bits
        .answered
        .iter()
        .map(|a| a.iter().map(|w| w.count_ones() as f64).sum::<f64>() / students)
        .collect();
    let rows: Vec<(f64, usize)> = (0..q)
        .into_par_iter()
        .map(|j| {
            let mut total = 0.0;
            let mut undefined = 0;
            for k in 0..q {
                if k == j {
                    continue;
                }
                match mi_from_counts(bits.table(j, k)) {
                    Some(mi) => total += freq[k] * mi,
                    None if k > j => undefined += 1,
                    None => {}
                }
            }
            (total, undefined)
        })
        .collect();
    let undefined = rows.iter().map(|r| r.1).sum();
    (rows.into_iter().map(|r| r.0).collect(), undefined)
}

/// Equal-count bins 1..=10 by ascending score, ties by question index.
pub fn decile_bins(scores: &[f64]) -> Vec<usize> {
    let q = scores.len();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut bins = vec![0; q];
    for (rank, &j) in order.iter().enumerate() {
        bins[j] = rank * NUM_BINS / q + 1;
    }
    bins
}

pub fn mi_analysis(dataset: &Dataset, methods: &[(String, Vec<Vec<usize>>)]) -> Result<MiReport> {
    let q = dataset.num_questions();
    let (weighted, undefined_pairs) = weighted_mi(dataset);
    let bins = decile_bins(&weighted);
    let methods = methods
        .iter()
        .map(|(name, selections)| {
            let mut counts = [0usize; NUM_BINS];
            let mut total = 0;
            for &j in selections.iter().flatten() {
                if j >= q {
                    return Err(Error::QuestionOutOfRange {
                        index: j,
                        num_questions: q,
                    });
                }
                counts[bins[j] - 1] += 1;
                total += 1;
            }
            let fractions = counts
                .iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect();
            Ok(MethodBins {
                method: name.clone(),
                selections: total,
                fractions,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MiReport {
        weighted_mi: weighted,
        bins,
        undefined_pairs,
        methods,
    })
}
