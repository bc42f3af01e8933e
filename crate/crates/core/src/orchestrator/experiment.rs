//! Train, test every method on the same held-out frames, and report.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::distill::{LabelSource, TrainingSetup};
use crate::error::Result;
use crate::evalbench::{build_report, tag_objects, EvalContext, EvalReport, Method, MethodOutput, Predictions, Traffic};
use crate::exec::Exec;
use crate::fedlearn::ModelParams;
use crate::fusion::FusionMethod;
use crate::simworld::{generate_scenario, visible_sets, Scenario, VisibleObject};

use super::codec::ByteLedger;
use super::config::RunConfig;
use super::system::{federated_training, run_frame, vehicle_frames, FrameInputs, TrainingLabels, TrainingRun};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub report: EvalReport,
    pub perfect_fl: Option<TrainingRun>,
    pub edfl: Option<TrainingRun>,
}

/// Parameters a method detects with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Detector {
    Pretrained,
    PerfectFl,
    Edfl,
}

fn detector_of(m: Method) -> Detector {
    match m {
        Method::FlOnly | Method::PerfectFlFusion => Detector::PerfectFl,
        Method::EdflOnly | Method::EdflFusion => Detector::Edfl,
        _ => Detector::Pretrained,
    }
}

fn fusion_of(m: Method) -> Option<FusionMethod> {
    match m {
        Method::NoFusionNoFl | Method::FlOnly | Method::EdflOnly => None,
        Method::MeanFusion => Some(FusionMethod::Mean),
        Method::MaxScoreFusion => Some(FusionMethod::MaxScore),
        Method::ThreeStage | Method::PerfectFlFusion | Method::EdflFusion => Some(FusionMethod::ThreeStage),
    }
}

/// Ground truth, tags and poses of the test frames.
pub fn evaluation_context(cfg: &RunConfig, scenario: &Scenario, frames: &[usize], visible: &[Vec<Vec<VisibleObject>>]) -> EvalContext {
    EvalContext {
        truths: frames
            .iter()
            .zip(visible)
            .map(|(&f, vis)| tag_objects(&scenario.frames[f], &scenario.vehicles, vis, &cfg.eval))
            .collect(),
        poses: frames.iter().map(|&f| scenario.frames[f].poses.clone()).collect(),
        sensor: cfg.sensing.sensor,
        thresholds: cfg.eval,
    }
}

/// Predictions of one method over the test frames, with test-time traffic.
pub fn test_method(
    cfg: &RunConfig,
    scenario: &Scenario,
    frames: &[usize],
    visible: &[Vec<Vec<VisibleObject>>],
    method: Method,
    params: &ModelParams,
    exec: Exec,
) -> Result<(Predictions, ByteLedger)> {
    let held = vec![params.clone(); scenario.num_vehicles()];
    let mut ledger = ByteLedger::default();
    let inputs = |i: usize| FrameInputs {
        scenario,
        frame: frames[i],
        visible: Some(&visible[i]),
        sensing: &cfg.sensing,
        params: &held,
        sensing_seed: cfg.seeds.sensing,
    };
    let predictions = match fusion_of(method) {
        Some(fm) => {
            let mut maps = Vec::with_capacity(frames.len());
            for i in 0..frames.len() {
                let r = run_frame(&inputs(i), &cfg.fusion, fm, exec)?;
                ledger.merge(&r.ledger);
                maps.push(r.broadcast.iter().map(|d| (d.state, d.score)).collect());
            }
            Predictions::Fused(maps)
        }
        None => {
            let mut maps = Vec::with_capacity(frames.len());
            for i in 0..frames.len() {
                let vehicles = vehicle_frames(&inputs(i), exec)?;
                maps.push(vehicles.iter().map(|v| v.local.global_detections()).collect());
            }
            Predictions::PerVehicle(maps)
        }
    };
    Ok((predictions, ledger))
}

/// The full benchmark: generate, train what the methods need, test each
/// method on the held-out window and build the report.
pub fn run_experiment(cfg: &RunConfig, exec: Exec) -> Result<ExperimentRun> {
    cfg.validate()?;
    let scenario = generate_scenario(&cfg.scenario, cfg.seeds.scenario)?;
    let methods = &cfg.experiment.methods;
    let init = ModelParams::pretrained();
    let train = cfg.train_config();
    let setup = TrainingSetup {
        scenario: &scenario,
        sensing: &cfg.sensing,
        fusion: &cfg.fusion,
        train: &train,
        init: &init,
        sensing_seed: cfg.seeds.sensing,
    };
    let train_with = |labels: TrainingLabels| federated_training(&setup, &labels, exec);
    let perfect_fl = if methods.iter().any(|&m| detector_of(m) == Detector::PerfectFl) {
        Some(train_with(TrainingLabels::Perfect {
            gate: cfg.distill.truth_gate,
        })?)
    } else {
        None
    };
    let edfl = if methods.iter().any(|&m| detector_of(m) == Detector::Edfl) {
        Some(train_with(TrainingLabels::Distilled(LabelSource::Distilled {
            registry: cfg.teachers.clone(),
            scope: cfg.distill.scope,
            student_threshold: cfg.distill.student_threshold,
        }))?)
    } else {
        None
    };

    let frames = cfg.experiment.test_frames(scenario.num_frames(), scenario.frame_rate());
    let visible: Vec<Vec<Vec<VisibleObject>>> = exec.map(&frames, |&f| visible_sets(&scenario, f, &cfg.sensing.sensor));
    let ctx = evaluation_context(cfg, &scenario, &frames, &visible);

    let mut outputs = Vec::with_capacity(methods.len());
    for &method in methods {
        let (params, training) = match detector_of(method) {
            Detector::Pretrained => (&init, None),
            Detector::PerfectFl => {
                let r = perfect_fl.as_ref().expect("trained above");
                (&r.outcome.params, Some(&r.ledger))
            }
            Detector::Edfl => {
                let r = edfl.as_ref().expect("trained above");
                (&r.outcome.params, Some(&r.ledger))
            }
        };
        let (predictions, mut ledger) = test_method(cfg, &scenario, &frames, &visible, method, params, exec)?;
        if let Some(t) = training {
            ledger.merge(t);
        }
        let Traffic { messages, bytes } = ledger.total();
        outputs.push(MethodOutput {
            method,
            frames: frames.clone(),
            predictions,
            traffic: Traffic { messages, bytes },
        });
    }
    let report = build_report(&outputs, &ctx, exec)?;
    Ok(ExperimentRun { report, perfect_fl, edfl })
}

/// Writes `report.json`, `report.csv` and `radar.csv` into `dir`.
pub fn write_bench_outputs(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    report.write_json(BufWriter::new(File::create(dir.join("report.json"))?))?;
    report.write_csv(BufWriter::new(File::create(dir.join("report.csv"))?))?;
    report.write_radar_csv(BufWriter::new(File::create(dir.join("radar.csv"))?))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::ScenarioConfig;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig {
            scenario: ScenarioConfig {
                duration: 3.0,
                num_background: 10,
                ..ScenarioConfig::default()
            },
            ..RunConfig::default()
        };
        cfg.train.train_window = [0.0, 1.5];
        cfg.train.max_rounds = 1;
        cfg.experiment.test_window = [1.5, 3.0];
        cfg
    }

    #[test]
    fn single_method_reports_only_itself() {
        let mut cfg = tiny();
        cfg.experiment.methods = vec![Method::NoFusionNoFl];
        let run = run_experiment(&cfg, Exec::Sequential).unwrap();
        assert_eq!(run.report.methods.len(), 1);
        assert_eq!(run.report.methods[0].per_vehicle.len(), 5);
        assert_eq!(run.report.methods[0].traffic, Traffic::default());
        assert!(run.perfect_fl.is_none() && run.edfl.is_none());
    }

    #[test]
    fn repeated_runs_are_identical() {
        let cfg = tiny();
        let a = run_experiment(&cfg, Exec::Sequential).unwrap();
        let b = run_experiment(&cfg, Exec::Parallel).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.methods.len(), 8);
        let fused = a.report.method(Method::ThreeStage).unwrap();
        let edfl = a.report.method(Method::EdflFusion).unwrap();
        assert!(edfl.traffic.bytes > fused.traffic.bytes);
    }
}
