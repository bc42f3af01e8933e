//! Detection quality: greedy IoU matching, all-point average precision, and
//! per-slice breakdowns over range, occlusion and witness density.

pub mod ap;
pub mod matching;
pub mod report;
pub mod tags;

use serde::{Deserialize, Serialize};

pub use ap::{average_precision, pr_curve, Ranked};
pub use matching::{match_detections, Matching};
pub use report::{build_report, EvalContext, EvalReport, Method, MethodOutput, MethodReport, Predictions, Traffic};
pub use tags::{tag_objects, BenchmarkTag, DensityClass, EvalThresholds, FrameTruth, OcclusionClass, RangeClass, Slice};

use crate::geometry::ObjectState;

/// Matched predictions of one frame, with what slicing needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub truth_tags: Vec<BenchmarkTag>,
    pub density: DensityClass,
    /// `(score, matched truth, range class of the prediction)`.
    pub predictions: Vec<(f64, Option<usize>, RangeClass)>,
}

pub fn evaluate_frame(truth: &FrameTruth, predictions: &[(ObjectState, f64)], th: &EvalThresholds) -> FrameOutcome {
    let m = match_detections(predictions, &truth.objects, th.iou, th.iou_kind);
    FrameOutcome {
        truth_tags: truth.tags.clone(),
        density: truth.density,
        predictions: predictions
            .iter()
            .zip(&m.prediction_truth)
            .map(|((s, score), t)| (*score, *t, truth.range_of([s.center[0], s.center[1]], th)))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceAp {
    pub slice: Slice,
    pub ap: Option<f64>,
    pub truths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub ap: Option<f64>,
    pub truths: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub slices: Vec<SliceAp>,
    /// `[recall, precision]` points, thinned to at most [`CURVE_POINTS`].
    pub curve: Vec<[f64; 2]>,
}

pub const CURVE_POINTS: usize = 200;

fn thin(curve: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    if curve.len() <= CURVE_POINTS {
        return curve;
    }
    let step = curve.len().div_ceil(CURVE_POINTS);
    let last = *curve.last().expect("non-empty");
    let mut out: Vec<[f64; 2]> = curve.into_iter().step_by(step).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Summarizes any number of frame outcomes as one pooled evaluation.
pub fn summarize<'a>(outcomes: impl IntoIterator<Item = &'a FrameOutcome> + Clone) -> ApSummary {
    let mut ranked = Vec::new();
    let mut truths = 0;
    for o in outcomes.clone() {
        truths += o.truth_tags.len();
        ranked.extend(o.predictions.iter().map(|(s, t, _)| Ranked {
            score: *s,
            true_positive: t.is_some(),
        }));
    }
    let tp = ranked.iter().filter(|r| r.true_positive).count();
    let slices = Slice::ALL
        .iter()
        .map(|&slice| {
            let mut r = Vec::new();
            let mut n = 0;
            for o in outcomes.clone() {
                n += o.truth_tags.iter().filter(|t| slice.contains(t)).count();
                for (score, truth, range) in &o.predictions {
                    let keep = match truth {
                        Some(t) => slice.contains(&o.truth_tags[*t]),
                        None => slice.admits_false_positive(*range, o.density),
                    };
                    if keep {
                        r.push(Ranked {
                            score: *score,
                            true_positive: truth.is_some(),
                        });
                    }
                }
            }
            SliceAp {
                slice,
                ap: average_precision(&r, n),
                truths: n,
            }
        })
        .collect();
    ApSummary {
        ap: average_precision(&ranked, truths),
        truths,
        true_positives: tp,
        false_positives: ranked.len() - tp,
        slices,
        curve: thin(pr_curve(&ranked, truths)),
    }
}
