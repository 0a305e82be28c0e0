/// Area under the ROC curve as the Mann–Whitney statistic with midranks.
/// `None` when the labels contain a single class.
pub fn auc(labels: &[bool], scores: &[f64]) -> Option<f64> {
    assert_eq!(labels.len(), scores.len(), "labels and scores differ in length");
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut k = i;
        while k + 1 < order.len() && scores[order[k + 1]] == scores[order[i]] {
            k += 1;
        }
        // Ranks i+1..=k+1 share their mean.
        let midrank = (i + k + 2) as f64 / 2.0;
        let tied_pos = order[i..=k].iter().filter(|&&o| labels[o]).count();
        rank_sum_pos += midrank * tied_pos as f64;
        i = k + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

pub fn accuracy(labels: &[bool], probs: &[f64]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels
        .iter()
        .zip(probs)
        .filter(|(&y, &p)| crate::response::predicts_correct(p) == y)
        .count();
    hits as f64 / labels.len() as f64
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
pub(crate) fn auc_brute_force(labels: &[bool], scores: &[f64]) -> Option<f64> {
    let mut num = 0.0;
    let mut pairs = 0usize;
    for (i, &yi) in labels.iter().enumerate() {
        if !yi {
            continue;
        }
        for (k, &yk) in labels.iter().enumerate() {
            if yk {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[k] {
                num += 1.0;
            } else if scores[i] == scores[k] {
                num += 0.5;
            }
        }
    }
    (pairs > 0).then(|| num / pairs as f64)
}
