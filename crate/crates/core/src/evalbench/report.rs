//! The eight-way method comparison and its CSV/JSON outputs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tags::{EvalThresholds, FrameTruth, Slice};
use super::{evaluate_frame, summarize, ApSummary, FrameOutcome};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{ObjectState, Pose};
use crate::simworld::SensorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NoFusionNoFl,
    FlOnly,
    EdflOnly,
    MeanFusion,
    MaxScoreFusion,
    ThreeStage,
    PerfectFlFusion,
    EdflFusion,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::NoFusionNoFl,
        Method::FlOnly,
        Method::EdflOnly,
        Method::MeanFusion,
        Method::MaxScoreFusion,
        Method::ThreeStage,
        Method::PerfectFlFusion,
        Method::EdflFusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::NoFusionNoFl => "no_fusion_no_fl",
            Method::FlOnly => "fl_only",
            Method::EdflOnly => "edfl_only",
            Method::MeanFusion => "mean_fusion",
            Method::MaxScoreFusion => "max_score_fusion",
            Method::ThreeStage => "three_stage",
            Method::PerfectFlFusion => "perfect_fl_fusion",
            Method::EdflFusion => "edfl_fusion",
        }
    }

    /// Whether the method produces one fused global map per frame.
    pub fn is_fused(self) -> bool {
        !matches!(self, Method::NoFusionNoFl | Method::FlOnly | Method::EdflOnly)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

/// Message and byte totals over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    pub messages: u64,
    pub bytes: u64,
}

/// Global-frame predictions of one method over the test frames.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    /// `[frame][vehicle]` local maps, no fusion.
    PerVehicle(Vec<Vec<Vec<(ObjectState, f64)>>>),
    /// `[frame]` fused global maps.
    Fused(Vec<Vec<(ObjectState, f64)>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutput {
    pub method: Method,
    pub frames: Vec<usize>,
    pub predictions: Predictions,
    pub traffic: Traffic,
}

/// Ground truth and vehicle poses for the test frames.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub truths: Vec<FrameTruth>,
    /// `[frame][vehicle]`.
    pub poses: Vec<Vec<Pose>>,
    pub sensor: SensorSpec,
    pub thresholds: EvalThresholds,
}

impl EvalContext {
    pub fn frames(&self) -> Vec<usize> {
        self.truths.iter().map(|t| t.frame).collect()
    }

    pub fn num_vehicles(&self) -> usize {
        self.poses.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    /// All vehicles: the fused map against every truth, or pooled
    /// per-vehicle results for methods without fusion.
    pub all_vehicles: ApSummary,
    /// Each vehicle's view restricted to its own sensing region.
    pub per_vehicle: Vec<ApSummary>,
    pub traffic: Traffic,
}

impl MethodReport {
    pub fn slice_ap(&self, slice: Slice) -> Option<f64> {
        self.all_vehicles.slices.iter().find(|s| s.slice == slice).and_then(|s| s.ap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: EvalThresholds,
    pub frames: Vec<usize>,
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Rows of `method,scope,slice,ap,truths,true_positives,false_positives`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "scope", "slice", "ap", "truths", "true_positives", "false_positives"])?;
        for m in &self.methods {
            let scopes = std::iter::once(("all".to_string(), &m.all_vehicles))
                .chain(m.per_vehicle.iter().enumerate().map(|(k, s)| (format!("vehicle_{k}"), s)));
            for (scope, s) in scopes {
                w.write_record([
                    m.method.name(),
                    &scope,
                    "overall",
                    &fmt_ap(s.ap),
                    &s.truths.to_string(),
                    &s.true_positives.to_string(),
                    &s.false_positives.to_string(),
                ])?;
                for sl in &s.slices {
                    w.write_record([
                        m.method.name(),
                        &scope,
                        sl.slice.name(),
                        &fmt_ap(sl.ap),
                        &sl.truths.to_string(),
                        "",
                        "",
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One row per method with the all-vehicle AP of each slice.
    pub fn write_radar_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["method"];
        header.extend(Slice::ALL.iter().map(|s| s.name()));
        w.write_record(&header)?;
        for m in &self.methods {
            let mut row = vec![m.method.name().to_string()];
            row.extend(Slice::ALL.iter().map(|&s| fmt_ap(m.slice_ap(s))));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_ap(ap: Option<f64>) -> String {
    ap.map_or_else(String::new, |v| format!("{v:.6}"))
}

fn restrict_predictions(preds: &[(ObjectState, f64)], sensor: &SensorSpec, pose: &Pose) -> Vec<(ObjectState, f64)> {
    preds
        .iter()
        .filter(|(o, _)| sensor.covers(pose, [o.center[0], o.center[1]]))
        .copied()
        .collect()
}

fn evaluate_method(output: &MethodOutput, ctx: &EvalContext, exec: Exec) -> Result<MethodReport> {
    let k = ctx.num_vehicles();
    let th = &ctx.thresholds;
    let n = ctx.truths.len();
    match &output.predictions {
        Predictions::PerVehicle(p) if p.len() != n || p.iter().any(|f| f.len() != k) => {
            return Err(Error::DimensionMismatch {
                expected: n * k,
                actual: p.iter().map(Vec::len).sum(),
            });
        }
        Predictions::Fused(p) if p.len() != n => {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: p.len(),
            });
        }
        _ => {}
    }
    // [frame] -> (fused outcome, [vehicle] outcome)
    let per_frame: Vec<(Option<FrameOutcome>, Vec<FrameOutcome>)> = exec.map_range(n, |f| {
        let truth = &ctx.truths[f];
        let vehicle_view = |v: usize, preds: &[(ObjectState, f64)]| {
            let pose = &ctx.poses[f][v];
            let local_truth = truth.restrict(|p| ctx.sensor.covers(pose, p));
            evaluate_frame(&local_truth, &restrict_predictions(preds, &ctx.sensor, pose), th)
        };
        match &output.predictions {
            Predictions::PerVehicle(p) => (None, (0..k).map(|v| vehicle_view(v, &p[f][v])).collect()),
            Predictions::Fused(p) => (
                Some(evaluate_frame(truth, &p[f], th)),
                (0..k).map(|v| vehicle_view(v, &p[f])).collect(),
            ),
        }
    });
    let per_vehicle: Vec<ApSummary> = (0..k).map(|v| summarize(per_frame.iter().map(|(_, o)| &o[v]))).collect();
    let all_vehicles = if output.method.is_fused() || matches!(output.predictions, Predictions::Fused(_)) {
        summarize(per_frame.iter().filter_map(|(o, _)| o.as_ref()))
    } else {
        summarize(per_frame.iter().flat_map(|(_, o)| o.iter()))
    };
    Ok(MethodReport {
        method: output.method,
        all_vehicles,
        per_vehicle,
        traffic: output.traffic,
    })
}

/// Evaluates every method on the same test frames; any frame mismatch is
/// rejected.
pub fn build_report(outputs: &[MethodOutput], ctx: &EvalContext, exec: Exec) -> Result<EvalReport> {
    ctx.thresholds.validate()?;
    if ctx.poses.len() != ctx.truths.len() {
        return Err(Error::DimensionMismatch {
            expected: ctx.truths.len(),
            actual: ctx.poses.len(),
        });
    }
    let frames = ctx.frames();
    for o in outputs {
        if o.frames != frames {
            return Err(Error::invalid(format!(
                "method {} was evaluated on a different frame set",
                o.method
            )));
        }
    }
    let methods = outputs.iter().map(|o| evaluate_method(o, ctx, exec)).collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        thresholds: ctx.thresholds,
        frames,
        methods,
    })
}
