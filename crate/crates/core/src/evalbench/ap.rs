use serde::{Deserialize, Serialize};

/// One ranked prediction: its score and whether it was a true positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub score: f64,
    pub true_positive: bool,
}

/// Precision/recall after each prediction in descending-score order.
/// Equal scores keep their input order.
pub fn pr_curve(ranked: &[Ranked], num_truths: usize) -> Vec<[f64; 2]> {
    if num_truths == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..ranked.len()).collect();
    order.sort_by(|&a, &b| ranked[b].score.total_cmp(&ranked[a].score).then(a.cmp(&b)));
    let mut tp = 0usize;
    order
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            tp += usize::from(ranked[r].true_positive);
            [tp as f64 / num_truths as f64, tp as f64 / (i + 1) as f64]
        })
        .collect()
}

/// All-point interpolated average precision; `None` without truths.
pub fn average_precision(ranked: &[Ranked], num_truths: usize) -> Option<f64> {
    if num_truths == 0 {
        return None;
    }
    let curve = pr_curve(ranked, num_truths);
    let mut envelope = vec![0.0; curve.len()];
    let mut best: f64 = 0.0;
    for i in (0..curve.len()).rev() {
        best = best.max(curve[i][1]);
        envelope[i] = best;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (point, p) in curve.iter().zip(envelope) {
        ap += (point[0] - prev_recall) * p;
        prev_recall = point[0];
    }
    Some(ap.clamp(0.0, 1.0))
}
