//! Vehicles and the edge server, talking only through encoded messages.

use crate::distill::{label_training_frames, LabelSource, TrainingFrame, TrainingSetup};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fedlearn::{predict, run_federated, FederatedOutcome, LabelSet, ModelParams, SensorFrame, PARAM_DIM};
use crate::fusion::{fuse_frame, FusionConfig, FusionMethod, FusionOutput, LocalMap, ScoredDetection};
use crate::simworld::{sense_visible, visible_sets, Scenario, SensingConfig, VisibleObject};

use super::codec::{decode, encode, ByteLedger, MessageKind, Payload, V2xMessage, BROADCAST, EDGE, HEADER_LEN};

/// What one frame of the system loop needs.
#[derive(Debug, Clone, Copy)]
pub struct FrameInputs<'a> {
    pub scenario: &'a Scenario,
    pub frame: usize,
    /// Visible set of every vehicle; computed when absent.
    pub visible: Option<&'a [Vec<VisibleObject>]>,
    pub sensing: &'a SensingConfig,
    /// Parameters each vehicle currently holds.
    pub params: &'a [ModelParams],
    pub sensing_seed: u64,
}

/// A vehicle's own view of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleFrame {
    pub sensor: SensorFrame,
    pub local: LocalMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub vehicles: Vec<VehicleFrame>,
    /// Local maps as decoded at the edge.
    pub received: Vec<LocalMap>,
    pub fused: FusionOutput,
    /// The global map as decoded from the broadcast.
    pub broadcast: Vec<ScoredDetection>,
    pub ledger: ByteLedger,
}

/// Sense and predict for every vehicle of a frame.
pub fn vehicle_frames(inputs: &FrameInputs<'_>, exec: Exec) -> Result<Vec<VehicleFrame>> {
    let sc = inputs.scenario;
    if inputs.params.len() != sc.num_vehicles() {
        return Err(Error::DimensionMismatch {
            expected: sc.num_vehicles(),
            actual: inputs.params.len(),
        });
    }
    let computed;
    let visible = match inputs.visible {
        Some(v) => v,
        None => {
            computed = visible_sets(sc, inputs.frame, &inputs.sensing.sensor);
            &computed
        }
    };
    let out: Vec<Result<VehicleFrame>> = exec.map_range(sc.num_vehicles(), |k| {
        let noise = inputs.sensing.noise_for(k);
        let sensed = sense_visible(
            sc,
            k,
            inputs.frame,
            &visible[k],
            &inputs.sensing.sensor,
            &noise,
            inputs.sensing_seed,
        );
        let detections = predict(&inputs.params[k], &sensed.sensor)?;
        Ok(VehicleFrame {
            sensor: sensed.sensor,
            local: LocalMap {
                detections,
                ..sensed.local
            },
        })
    });
    out.into_iter().collect()
}

/// The pose and map uploads of one vehicle.
pub fn upload_messages(local: &LocalMap) -> [V2xMessage; 2] {
    let sender = local.vehicle as u32;
    [
        V2xMessage {
            sender,
            receiver: EDGE,
            payload: Payload::PoseUpload {
                frame_time: local.frame_time,
                pose: local.pose,
            },
        },
        V2xMessage {
            sender,
            receiver: EDGE,
            payload: Payload::LocalMapUpload(local.detections.clone()),
        },
    ]
}

/// Rebuilds local maps from encoded uploads, ordered by sender.
pub fn assemble_uploads(messages: &[Vec<u8>]) -> Result<Vec<LocalMap>> {
    let mut poses = std::collections::BTreeMap::new();
    let mut maps = std::collections::BTreeMap::new();
    for bytes in messages {
        let msg = decode(bytes)?;
        let sender = msg.sender as usize;
        let duplicate = match msg.payload {
            Payload::PoseUpload { frame_time, pose } => poses.insert(sender, (frame_time, pose)).is_some(),
            Payload::LocalMapUpload(d) => maps.insert(sender, d).is_some(),
            other => {
                return Err(Error::invalid(format!("edge received an unexpected {:?} message", other.kind())));
            }
        };
        if duplicate {
            return Err(Error::invalid(format!("vehicle {sender} uploaded twice")));
        }
    }
    if poses.keys().ne(maps.keys()) {
        return Err(Error::invalid("every local map upload needs exactly one pose upload"));
    }
    Ok(maps
        .into_iter()
        .map(|(vehicle, detections)| {
            let (frame_time, pose) = poses[&vehicle];
            LocalMap {
                vehicle,
                frame_time,
                pose,
                detections,
            }
        })
        .collect())
}

/// One frame: sense and predict on every vehicle, upload, fuse at the edge
/// and broadcast the global map.
pub fn run_frame(inputs: &FrameInputs<'_>, fusion: &FusionConfig, method: FusionMethod, exec: Exec) -> Result<FrameResult> {
    let vehicles = vehicle_frames(inputs, exec)?;
    let uploads: Vec<Vec<u8>> = vehicles
        .iter()
        .flat_map(|v| upload_messages(&v.local))
        .map(|m| encode(&m))
        .collect();
    let mut ledger = ByteLedger::default();
    for u in &uploads {
        ledger.record_encoded(u)?;
    }
    let received = assemble_uploads(&uploads)?;
    let fused = fuse_frame(&received, fusion, method)?;
    let broadcast = encode(&V2xMessage {
        sender: EDGE,
        receiver: BROADCAST,
        payload: Payload::GlobalMapBroadcast(
            fused
                .global
                .objects
                .iter()
                .map(|o| ScoredDetection {
                    state: o.state,
                    score: o.score,
                })
                .collect(),
        ),
    });
    ledger.record_encoded(&broadcast)?;
    let Payload::GlobalMapBroadcast(broadcast) = decode(&broadcast)?.payload else {
        unreachable!("encoded a global map broadcast");
    };
    Ok(FrameResult {
        vehicles,
        received,
        fused,
        broadcast,
        ledger,
    })
}

/// Closed-form traffic of one frame: a pose and a map upload per vehicle and
/// one broadcast.
pub fn frame_traffic_formula(detections_per_vehicle: &[usize], fused_objects: usize) -> u64 {
    let uploads: usize = detections_per_vehicle.iter().map(|n| 56 + 20 + 66 * n).sum();
    (uploads + 20 + 66 * fused_objects) as u64
}

/// Which labels a federated run trains on.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingLabels {
    /// Ground truth known to each vehicle offline; no label traffic.
    Perfect { gate: f64 },
    /// Distilled at the edge from the fused map and sent back per vehicle.
    Distilled(LabelSource),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub outcome: FederatedOutcome,
    pub ledger: ByteLedger,
}

/// Federated training over the training window with every exchange encoded.
pub fn federated_training(setup: &TrainingSetup<'_>, labels: &TrainingLabels, exec: Exec) -> Result<TrainingRun> {
    let TrainingSetup {
        scenario,
        sensing,
        fusion,
        train,
        init,
        sensing_seed,
    } = *setup;
    train.validate()?;
    let k = scenario.num_vehicles();
    let frames = train.window_frames(scenario.num_frames(), scenario.frame_rate());
    let params = vec![init.clone(); k];
    let mut ledger = ByteLedger::default();
    let mut data = Vec::with_capacity(frames.len());
    for &frame in &frames {
        let inputs = FrameInputs {
            scenario,
            frame,
            visible: None,
            sensing,
            params: &params,
            sensing_seed,
        };
        let r = run_frame(&inputs, fusion, FusionMethod::ThreeStage, exec)?;
        if matches!(labels, TrainingLabels::Distilled(_)) {
            ledger.merge(&r.ledger);
        }
        data.push(TrainingFrame {
            frame,
            sensors: r.vehicles.into_iter().map(|v| v.sensor).collect(),
            locals: r.received,
            fused: r.fused,
        });
    }
    let source = match labels {
        TrainingLabels::Perfect { gate } => LabelSource::GroundTruth { gate: *gate },
        TrainingLabels::Distilled(s) => s.clone(),
    };
    let mut sets = label_training_frames(scenario, &sensing.sensor, data, &source)?;
    if matches!(labels, TrainingLabels::Distilled(_)) {
        for (vehicle, set) in sets.iter_mut().enumerate() {
            for (_, l) in set.iter_mut() {
                if l.num_labeled() == 0 {
                    continue;
                }
                let bytes = encode(&V2xMessage {
                    sender: EDGE,
                    receiver: vehicle as u32,
                    payload: Payload::LabelBroadcast(l.labels.clone()),
                });
                ledger.record_encoded(&bytes)?;
                let Payload::LabelBroadcast(received) = decode(&bytes)?.payload else {
                    unreachable!("encoded a label broadcast");
                };
                *l = LabelSet {
                    frame_time: l.frame_time,
                    labels: received,
                };
            }
        }
    }
    let outcome = run_federated(&sets, init, train, exec)?;
    let params_len = HEADER_LEN + 8 + 8 * PARAM_DIM;
    for _ in 0..outcome.rounds {
        for _ in 0..k {
            ledger.record(MessageKind::ParamsUpload, params_len);
        }
        ledger.record(MessageKind::ParamsBroadcast, params_len);
    }
    Ok(TrainingRun { outcome, ledger })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou_bev;
    use crate::simworld::{generate_scenario, visible_from, DetectorNoiseSpec, ScenarioConfig};

    fn small_scenario(num_vehicles: usize) -> Scenario {
        let cfg = ScenarioConfig {
            duration: 1.0,
            num_vehicles,
            num_background: 12,
            ..ScenarioConfig::default()
        };
        generate_scenario(&cfg, 3).unwrap()
    }

    #[test]
    fn zero_vehicles_is_header_only() {
        let sc = small_scenario(0);
        let inputs = FrameInputs {
            scenario: &sc,
            frame: 0,
            visible: None,
            sensing: &SensingConfig::default(),
            params: &[],
            sensing_seed: 1,
        };
        let r = run_frame(&inputs, &FusionConfig::default(), FusionMethod::ThreeStage, Exec::Sequential).unwrap();
        assert!(r.broadcast.is_empty());
        assert_eq!(r.ledger.total().messages, 1);
        assert_eq!(r.ledger.total().bytes, 20);
    }

    #[test]
    fn noiseless_frame_reproduces_visible_truth() {
        let sc = small_scenario(3);
        let sensing = SensingConfig {
            noise: DetectorNoiseSpec::noiseless(),
            ..SensingConfig::default()
        };
        let params = vec![ModelParams::pretrained(); 3];
        let inputs = FrameInputs {
            scenario: &sc,
            frame: 5,
            visible: None,
            sensing: &sensing,
            params: &params,
            sensing_seed: 1,
        };
        let r = run_frame(&inputs, &FusionConfig::default(), FusionMethod::ThreeStage, Exec::Sequential).unwrap();
        let wf = &sc.frames[5];
        let mut truth: Vec<usize> = (0..3)
            .flat_map(|k| visible_from(&wf.poses[k], &wf.objects, Some(sc.vehicles[k]), &sensing.sensor))
            .map(|v| v.object)
            .collect();
        truth.sort_unstable();
        truth.dedup();
        assert!(!truth.is_empty());
        assert_eq!(r.broadcast.len(), truth.len());
        for &t in &truth {
            let best = r.broadcast.iter().map(|d| iou_bev(&d.state, &wf.objects[t])).fold(0.0, f64::max);
            assert!((best - 1.0).abs() < 1e-9, "object {t} best IoU {best}");
        }
    }

    #[test]
    fn ledger_matches_closed_form() {
        let sc = generate_scenario(&ScenarioConfig::default(), 0).unwrap();
        let params = vec![ModelParams::pretrained(); 5];
        let sensing = SensingConfig::default();
        let inputs = FrameInputs {
            scenario: &sc,
            frame: 600,
            visible: None,
            sensing: &sensing,
            params: &params,
            sensing_seed: 4,
        };
        let r = run_frame(&inputs, &FusionConfig::default(), FusionMethod::ThreeStage, Exec::Sequential).unwrap();
        let counts: Vec<usize> = r.vehicles.iter().map(|v| v.local.detections.len()).collect();
        assert_eq!(r.ledger.total().bytes, frame_traffic_formula(&counts, r.broadcast.len()));
        assert_eq!(r.ledger.total().messages, 11);
        assert_eq!(r.received, r.vehicles.iter().map(|v| v.local.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn edge_rejects_unpaired_uploads() {
        let local = LocalMap {
            vehicle: 1,
            frame_time: 0.0,
            pose: crate::geometry::Pose::IDENTITY,
            detections: vec![],
        };
        let [pose, map] = upload_messages(&local);
        assert!(assemble_uploads(&[encode(&map)]).is_err());
        assert!(assemble_uploads(&[encode(&pose), encode(&map), encode(&map)]).is_err());
        assert_eq!(assemble_uploads(&[encode(&map), encode(&pose)]).unwrap(), vec![local]);
    }
}
