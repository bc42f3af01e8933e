use serde::{Deserialize, Serialize};

use crate::geometry::{IouKind, ObjectState};

/// Result of greedy matching in one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    /// Truth index matched by each prediction, if any.
    pub prediction_truth: Vec<Option<usize>>,
    pub truth_matched: Vec<bool>,
}

impl Matching {
    pub fn true_positives(&self) -> usize {
        self.prediction_truth.iter().filter(|m| m.is_some()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.prediction_truth.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.truth_matched.iter().filter(|m| !**m).count()
    }
}

/// Visits predictions by descending score (ties: lower index) and pairs each
/// with the unmatched truth of highest IoU, if that IoU reaches `threshold`.
pub fn match_detections(predictions: &[(ObjectState, f64)], truths: &[ObjectState], threshold: f64, iou: IouKind) -> Matching {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].1.total_cmp(&predictions[a].1).then(a.cmp(&b)));
    let mut prediction_truth = vec![None; predictions.len()];
    let mut truth_matched = vec![false; truths.len()];
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (t, truth) in truths.iter().enumerate() {
            if truth_matched[t] {
                continue;
            }
            let v = iou.iou(&predictions[p].0, truth);
            if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((t, v));
            }
        }
        if let Some((t, _)) = best {
            truth_matched[t] = true;
            prediction_truth[p] = Some(t);
        }
    }
    Matching {
        prediction_truth,
        truth_matched,
    }
}
