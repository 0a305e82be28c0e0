use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

/// Largest number of student pairs compared exactly; above this, pairs are
/// sampled with a fixed seed.
pub const MAX_OVERLAP_PAIRS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureReport {
    pub method: String,
    pub num_students: usize,
    pub n: usize,
    /// Students who were administered each question.
    pub counts: Vec<usize>,
    /// `counts[j] / num_students`.
    pub rates: Vec<f64>,
    pub median_rate: f64,
    /// Fraction of questions exposed to more than 20% of students.
    pub fraction_above_20: f64,
    /// Mean of `|Sᵢ ∩ Sⱼ| / n` over student pairs.
    pub mean_overlap: f64,
    pub pairs_compared: usize,
}

impl ExposureReport {
    /// `Σ_j rate_j`, computed from the integer counts.
    pub fn exposure_sum(&self) -> f64 {
        self.counts.iter().sum::<usize>() as f64 / self.num_students as f64
    }
}

pub fn exposure_and_overlap(
    method: &str,
    selections: &[Vec<usize>],
    num_questions: usize,
    n: usize,
    seed: u64,
) -> Result<ExposureReport> {
    if selections.is_empty() || n == 0 {
        return Err(Error::Config("exposure needs at least one student and n >= 1".into()));
    }
    let mut sorted = Vec::with_capacity(selections.len());
    let mut counts = vec![0usize; num_questions];
    for (i, s) in selections.iter().enumerate() {
        let mut s = s.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != n {
            return Err(Error::Config(format!(
                "student {i} has {} distinct selections, expected {n}",
                s.len()
            )));
        }
        for &j in &s {
            if j >= num_questions {
                return Err(Error::QuestionOutOfRange { index: j, num_questions });
            }
            counts[j] += 1;
        }
        sorted.push(s);
    }
    let students = selections.len();
    let rates: Vec<f64> = counts.iter().map(|&c| c as f64 / students as f64).collect();
    let mut by_rate = rates.clone();
    by_rate.sort_by(f64::total_cmp);
    let median_rate = if by_rate.is_empty() {
        0.0
    } else if by_rate.len() % 2 == 1 {
        by_rate[by_rate.len() / 2]
    } else {
        (by_rate[by_rate.len() / 2 - 1] + by_rate[by_rate.len() / 2]) / 2.0
    };
    let fraction_above_20 = if rates.is_empty() {
        0.0
    } else {
        rates.iter().filter(|&&r| r > 0.2).count() as f64 / rates.len() as f64
    };

    let total_pairs = students * (students - 1) / 2;
    let overlap = |a: &[usize], b: &[usize]| intersection_size(a, b) as f64 / n as f64;
    let (sum, pairs) = if total_pairs <= MAX_OVERLAP_PAIRS {
        let mut sum = 0.0;
        for i in 0..students {
            for k in i + 1..students {
                sum += overlap(&sorted[i], &sorted[k]);
            }
        }
        (sum, total_pairs)
    } else {
        let mut r = stream(seed, &[0x0E4A]);
        let mut sum = 0.0;
        for _ in 0..MAX_OVERLAP_PAIRS {
            let i = r.random_range(0..students);
            let mut k = r.random_range(0..students - 1);
            if k >= i {
                k += 1;
            }
            sum += overlap(&sorted[i], &sorted[k]);
        }
        (sum, MAX_OVERLAP_PAIRS)
    };
    let mean_overlap = if pairs == 0 { 0.0 } else { sum / pairs as f64 };
    Ok(ExposureReport {
        method: method.to_string(),
        num_students: students,
        n,
        counts,
        rates,
        median_rate,
        fraction_above_20,
        mean_overlap,
        pairs_compared: pairs,
    })
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut k, mut c) = (0, 0, 0);
    while i < a.len() && k < b.len() {
        match a[i].cmp(&b[k]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => k += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                k += 1;
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::index::sample;

    #[test]
    fn identical_sets() {
        let s = vec![vec![1, 3], vec![3, 1], vec![1, 3]];
        let r = exposure_and_overlap("m", &s, 5, 2, 0).unwrap();
        assert_eq!(r.rates, vec![0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(r.mean_overlap, 1.0);
        assert_eq!(r.pairs_compared, 3);
        assert_eq!(r.exposure_sum(), 2.0);
        assert_eq!(r.median_rate, 0.0);
        assert_eq!(r.fraction_above_20, 0.4);
    }

    #[test]
    fn hand_enumerated_overlap() {
        let s = vec![vec![0, 1], vec![0, 2], vec![3, 4]];
        let r = exposure_and_overlap("m", &s, 5, 2, 0).unwrap();
        assert!((r.mean_overlap - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn sum_identity_on_random_sets() {
        let mut rng = crate::rng::stream(4, &[]);
        for students in [1usize, 7, 33] {
            let s: Vec<Vec<usize>> = (0..students).map(|_| sample(&mut rng, 40, 6).into_vec()).collect();
            let r = exposure_and_overlap("m", &s, 40, 6, 0).unwrap();
            assert_eq!(r.counts.iter().sum::<usize>(), 6 * students);
            assert_eq!(r.exposure_sum(), 6.0);
            assert!(r.rates.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rejects_wrong_sizes() {
        assert!(exposure_and_overlap("m", &[vec![0, 0]], 3, 2, 0).is_err());
        assert!(exposure_and_overlap("m", &[vec![5]], 3, 1, 0).is_err());
    }
}
