//! Training labels without ground truth at the vehicles.
//!
//! Each detection is labeled either by a teacher (an oracle that knows the
//! true state of objects inside its coverage) or, failing that, by the fused
//! global object it was clustered into, mapped back to the vehicle's frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fedlearn::{predict, run_federated, FederatedOutcome, LabelSet, ModelParams, SensorFrame, TrainConfig};
use crate::fusion::{three_stage_fuse, FusionConfig, FusionOutput, LocalMap};
use crate::geometry::{ObjectState, Point2};
use crate::simworld::{sense_visible, visible_sets, Scenario, SensingConfig, SensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coverage {
    Everywhere,
    Disc { center: Point2, radius: f64 },
}

impl Coverage {
    pub fn contains(&self, p: Point2) -> bool {
        match *self {
            Coverage::Everywhere => true,
            Coverage::Disc { center, radius } => (p[0] - center[0]).hypot(p[1] - center[1]) <= radius,
        }
    }
}

/// Oracle teachers, e.g. road-side units, each exact inside its coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherRegistry {
    pub teachers: Vec<Coverage>,
    /// Largest center distance at which a detection is attributed to a true object.
    pub gate: f64,
}

impl Default for TeacherRegistry {
    fn default() -> Self {
        Self {
            teachers: Vec::new(),
            gate: 3.0,
        }
    }
}

impl TeacherRegistry {
    pub fn full_coverage() -> Self {
        Self {
            teachers: vec![Coverage::Everywhere],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gate > 0.0) {
            return Err(Error::invalid("label gate must be positive"));
        }
        for t in &self.teachers {
            if let Coverage::Disc { radius, .. } = t {
                if !(*radius >= 0.0) {
                    return Err(Error::invalid("teacher radius must be non-negative"));
                }
            }
        }
        Ok(())
    }

    /// Index of the first teacher covering a world point.
    pub fn covering(&self, p: Point2) -> Option<usize> {
        self.teachers.iter().position(|t| t.contains(p))
    }
}

/// Ground truth of a frame as seen by one vehicle's labeler: every object
/// except the vehicle itself.
#[derive(Debug, Clone, Copy)]
pub struct TruthView<'a> {
    pub objects: &'a [ObjectState],
    pub exclude: Option<usize>,
}

impl TruthView<'_> {
    /// Nearest true object within `gate` of a world-frame detection.
    pub fn nearest(&self, det: &ObjectState, gate: f64) -> Option<ObjectState> {
        self.objects
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != self.exclude)
            .map(|(_, o)| (o.planar_distance(det), o))
            .filter(|(d, _)| *d <= gate)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, o)| *o)
    }
}

/// Labels every detection of a local map with the nearest true object.
pub fn ground_truth_labels(local: &LocalMap, truth: TruthView<'_>, gate: f64) -> LabelSet {
    LabelSet {
        frame_time: local.frame_time,
        labels: local
            .detections
            .iter()
            .map(|d| {
                truth
                    .nearest(&local.pose.to_global(&d.state), gate)
                    .map(|o| local.pose.to_local(&o))
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelBranch {
    Teacher,
    Ensemble,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudentSelection {
    pub students: Vec<usize>,
    /// Mean divergence per vehicle, indexed like the local maps.
    pub divergence: Vec<f64>,
}

impl StudentSelection {
    pub fn contains(&self, vehicle: usize) -> bool {
        self.students.contains(&vehicle)
    }
}

/// Who receives labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScope {
    #[default]
    AllVehicles,
    StudentsOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistilledLabels {
    /// One label set per local map.
    pub labels: Vec<LabelSet>,
    /// Which branch produced each label; `None` where no label was emitted.
    pub branches: Vec<Vec<Option<LabelBranch>>>,
}

fn check_consistent(locals: &[LocalMap], fused: &FusionOutput) -> Result<()> {
    if fused.matrices.len() != locals.len() {
        return Err(Error::DimensionMismatch {
            expected: locals.len(),
            actual: fused.matrices.len(),
        });
    }
    for (l, m) in locals.iter().zip(&fused.matrices) {
        if m.vehicle != l.vehicle || m.num_detections() != l.detections.len() || m.num_objects != fused.num_objects {
            return Err(Error::invalid(format!(
                "association matrix does not match the local map of vehicle {}",
                l.vehicle
            )));
        }
    }
    if fused.candidates.len() != fused.num_objects || fused.kept.len() != fused.num_objects {
        return Err(Error::invalid("fusion output is internally inconsistent"));
    }
    Ok(())
}

/// Generates labels for the detections of the selected vehicles.
///
/// `truth[k]` is the ground truth available to teachers when labeling
/// vehicle `k`. Detections whose cluster was pruned, or that belong to no
/// cluster, stay unlabeled.
pub fn distill_labels(
    locals: &[LocalMap],
    fused: &FusionOutput,
    registry: &TeacherRegistry,
    students: &StudentSelection,
    scope: LabelScope,
    truth: &[TruthView<'_>],
) -> Result<DistilledLabels> {
    check_consistent(locals, fused)?;
    if !registry.teachers.is_empty() && truth.len() != locals.len() {
        return Err(Error::DimensionMismatch {
            expected: locals.len(),
            actual: truth.len(),
        });
    }
    let mut labels = Vec::with_capacity(locals.len());
    let mut branches = Vec::with_capacity(locals.len());
    for (k, local) in locals.iter().enumerate() {
        let n = local.detections.len();
        let selected = match scope {
            LabelScope::AllVehicles => true,
            LabelScope::StudentsOnly => students.contains(local.vehicle),
        };
        let mut set = LabelSet::unlabeled(local.frame_time, n);
        let mut branch = vec![None; n];
        if selected {
            for (i, det) in local.detections.iter().enumerate() {
                let Some(m) = fused.matrices[k].object_of(i) else { continue };
                let v = &fused.candidates[m].state;
                if registry.covering([v.center[0], v.center[1]]).is_some() {
                    let global = local.pose.to_global(&det.state);
                    set.labels[i] = truth[k].nearest(&global, registry.gate).map(|o| local.pose.to_local(&o));
                    if set.labels[i].is_some() {
                        branch[i] = Some(LabelBranch::Teacher);
                    }
                } else if fused.kept[m] {
                    set.labels[i] = Some(local.pose.to_local(v));
                    branch[i] = Some(LabelBranch::Ensemble);
                }
            }
        }
        labels.push(set);
        branches.push(branch);
    }
    Ok(DistilledLabels { labels, branches })
}

/// Divergence of one vehicle's map from the fused map in one frame:
/// `1 − matched / (detections + fused objects in view − matched)`.
pub fn frame_divergence(local: &LocalMap, matrix_index: usize, fused: &FusionOutput, spec: &SensorSpec) -> f64 {
    let matrix = &fused.matrices[matrix_index];
    let mut matched_objects: Vec<usize> = (0..local.detections.len())
        .filter_map(|n| matrix.object_of(n))
        .filter(|&m| fused.kept[m])
        .collect();
    matched_objects.sort_unstable();
    matched_objects.dedup();
    let matched = matched_objects.len();
    let in_view = fused
        .global
        .objects
        .iter()
        .filter(|o| matched_objects.binary_search(&o.cluster).is_ok() || spec.covers(&local.pose, [o.state.center[0], o.state.center[1]]))
        .count();
    let union = local.detections.len() + in_view - matched;
    if union == 0 {
        0.0
    } else {
        1.0 - matched as f64 / union as f64
    }
}

/// Vehicles whose maps diverge from the fused map by more than `threshold`
/// on average over a window of frames.
pub fn select_students(window: &[(Vec<LocalMap>, FusionOutput)], spec: &SensorSpec, threshold: f64) -> Result<StudentSelection> {
    let Some((first, _)) = window.first() else {
        return Ok(StudentSelection::default());
    };
    let vehicles: Vec<usize> = first.iter().map(|l| l.vehicle).collect();
    let mut sums = vec![0.0; vehicles.len()];
    for (locals, fused) in window {
        check_consistent(locals, fused)?;
        if locals.iter().map(|l| l.vehicle).ne(vehicles.iter().copied()) {
            return Err(Error::invalid("vehicle roster changes inside the window"));
        }
        for (k, l) in locals.iter().enumerate() {
            sums[k] += frame_divergence(l, k, fused, spec);
        }
    }
    let divergence: Vec<f64> = sums.iter().map(|s| s / window.len() as f64).collect();
    let students = vehicles
        .iter()
        .zip(&divergence)
        .filter(|(_, &d)| d > threshold)
        .map(|(&v, _)| v)
        .collect();
    Ok(StudentSelection { students, divergence })
}

/// Where training labels come from.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelSource {
    /// Nearest true object for every detection.
    GroundTruth { gate: f64 },
    /// Teachers where they cover, fused map elsewhere.
    Distilled {
        registry: TeacherRegistry,
        scope: LabelScope,
        student_threshold: f64,
    },
}

/// Everything needed to build per-vehicle training sets from a scenario.
#[derive(Debug, Clone)]
pub struct TrainingSetup<'a> {
    pub scenario: &'a Scenario,
    pub sensing: &'a SensingConfig,
    pub fusion: &'a FusionConfig,
    pub train: &'a TrainConfig,
    pub init: &'a ModelParams,
    pub sensing_seed: u64,
}

/// One training frame as seen at the edge: each vehicle's raw candidates and
/// predicted local map, plus the fused map.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFrame {
    pub frame: usize,
    pub sensors: Vec<SensorFrame>,
    pub locals: Vec<LocalMap>,
    pub fused: FusionOutput,
}

fn sense_and_fuse(setup: &TrainingSetup<'_>, frame: usize) -> Result<TrainingFrame> {
    let sc = setup.scenario;
    let visible = visible_sets(sc, frame, &setup.sensing.sensor);
    let mut sensors = Vec::with_capacity(sc.num_vehicles());
    let mut locals = Vec::with_capacity(sc.num_vehicles());
    for k in 0..sc.num_vehicles() {
        let noise = setup.sensing.noise_for(k);
        let sensed = sense_visible(sc, k, frame, &visible[k], &setup.sensing.sensor, &noise, setup.sensing_seed);
        let detections = predict(setup.init, &sensed.sensor)?;
        locals.push(LocalMap {
            detections,
            ..sensed.local
        });
        sensors.push(sensed.sensor);
    }
    let fused = three_stage_fuse(&locals, setup.fusion)?;
    Ok(TrainingFrame {
        frame,
        sensors,
        locals,
        fused,
    })
}

/// Per-vehicle `(frame, labels)` datasets from already fused training frames.
pub fn label_training_frames(
    scenario: &Scenario,
    sensor: &SensorSpec,
    data: Vec<TrainingFrame>,
    source: &LabelSource,
) -> Result<Vec<Vec<(SensorFrame, LabelSet)>>> {
    let students = match source {
        LabelSource::Distilled {
            scope: LabelScope::StudentsOnly,
            student_threshold,
            ..
        } => {
            let window: Vec<(Vec<LocalMap>, FusionOutput)> = data.iter().map(|t| (t.locals.clone(), t.fused.clone())).collect();
            select_students(&window, sensor, *student_threshold)?
        }
        _ => StudentSelection::default(),
    };

    let mut sets: Vec<Vec<(SensorFrame, LabelSet)>> = vec![Vec::new(); scenario.num_vehicles()];
    for t in data {
        let wf = &scenario.frames[t.frame];
        let truth: Vec<TruthView<'_>> = scenario
            .vehicles
            .iter()
            .map(|&obj| TruthView {
                objects: &wf.objects,
                exclude: Some(obj),
            })
            .collect();
        let labels = match source {
            LabelSource::GroundTruth { gate } => t
                .locals
                .iter()
                .zip(&truth)
                .map(|(l, v)| ground_truth_labels(l, *v, *gate))
                .collect(),
            LabelSource::Distilled { registry, scope, .. } => {
                distill_labels(&t.locals, &t.fused, registry, &students, *scope, &truth)?.labels
            }
        };
        if t.sensors.len() != sets.len() {
            return Err(Error::DimensionMismatch {
                expected: sets.len(),
                actual: t.sensors.len(),
            });
        }
        for (k, (s, l)) in t.sensors.into_iter().zip(labels).enumerate() {
            sets[k].push((s, l));
        }
    }
    Ok(sets)
}

/// Per-vehicle `(frame, labels)` datasets over the training window.
pub fn training_sets(setup: &TrainingSetup<'_>, source: &LabelSource, exec: Exec) -> Result<Vec<Vec<(SensorFrame, LabelSet)>>> {
    let sc = setup.scenario;
    let frames = setup.train.window_frames(sc.num_frames(), sc.frame_rate());
    let data: Vec<Result<TrainingFrame>> = exec.map(&frames, |&f| sense_and_fuse(setup, f));
    let data: Vec<TrainingFrame> = data.into_iter().collect::<Result<_>>()?;
    label_training_frames(sc, &setup.sensing.sensor, data, source)
}

/// Federated training on labels distilled from the fused map.
pub fn run_edfl(
    setup: &TrainingSetup<'_>,
    registry: &TeacherRegistry,
    scope: LabelScope,
    student_threshold: f64,
    exec: Exec,
) -> Result<FederatedOutcome> {
    let source = LabelSource::Distilled {
        registry: registry.clone(),
        scope,
        student_threshold,
    };
    let sets = training_sets(setup, &source, exec)?;
    run_federated(&sets, setup.init, setup.train, exec)
}

/// Federated training on ground-truth labels.
pub fn run_perfect_fl(setup: &TrainingSetup<'_>, gate: f64, exec: Exec) -> Result<FederatedOutcome> {
    let sets = training_sets(setup, &LabelSource::GroundTruth { gate }, exec)?;
    run_federated(&sets, setup.init, setup.train, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::ScoredDetection;
    use crate::geometry::Pose;

    fn obj(x: f64, y: f64) -> ObjectState {
        ObjectState::new(0, [x, y, 0.8], [4.5, 1.9, 1.6], 0.0)
    }

    fn local(vehicle: usize, pose: Pose, global: &[ObjectState]) -> LocalMap {
        LocalMap {
            vehicle,
            frame_time: 0.0,
            pose,
            detections: global
                .iter()
                .map(|g| ScoredDetection {
                    state: pose.to_local(g),
                    score: 2.0,
                })
                .collect(),
        }
    }

    #[test]
    fn ensemble_labels_are_fused_objects_in_local_frame() {
        let pose = Pose::new([5.0, -3.0, 0.0], 0.4);
        let a = local(0, pose, &[obj(20.0, 0.0)]);
        let b = local(1, Pose::IDENTITY, &[obj(20.4, 0.2)]);
        let locals = vec![a, b];
        let fused = three_stage_fuse(&locals, &FusionConfig::default()).unwrap();
        let out = distill_labels(
            &locals,
            &fused,
            &TeacherRegistry::default(),
            &StudentSelection::default(),
            LabelScope::AllVehicles,
            &[],
        )
        .unwrap();
        let v = fused.global.objects[0].state;
        let label = out.labels[0].labels[0].unwrap();
        let back = pose.to_global(&label);
        assert!(back.planar_distance(&v) < 1e-9);
        assert_eq!(out.branches[0][0], Some(LabelBranch::Ensemble));
    }

    #[test]
    fn teacher_labels_round_trip_to_truth() {
        let truth = [obj(20.0, 0.0), obj(60.0, 0.0)];
        let pose = Pose::new([1.0, 2.0, 0.0], -0.3);
        let noisy = [obj(20.5, 0.3), obj(60.2, -0.4)];
        let locals = vec![local(0, pose, &noisy)];
        let fused = three_stage_fuse(&locals, &FusionConfig::default()).unwrap();
        let registry = TeacherRegistry {
            teachers: vec![Coverage::Disc {
                center: [20.0, 0.0],
                radius: 10.0,
            }],
            ..TeacherRegistry::default()
        };
        let view = TruthView {
            objects: &truth,
            exclude: None,
        };
        let out = distill_labels(
            &locals,
            &fused,
            &registry,
            &StudentSelection::default(),
            LabelScope::AllVehicles,
            &[view],
        )
        .unwrap();
        assert_eq!(out.branches[0], vec![Some(LabelBranch::Teacher), Some(LabelBranch::Ensemble)]);
        let back = pose.to_global(&out.labels[0].labels[0].unwrap());
        assert!(back.planar_distance(&truth[0]) < 1e-9);
        assert!((back.yaw - truth[0].yaw).abs() < 1e-9);
    }

    #[test]
    fn pruned_cluster_gets_no_label() {
        // Two clusters 2.5 m apart overlap heavily; the weaker one is pruned.
        let mut l = local(0, Pose::IDENTITY, &[obj(0.0, 0.0)]);
        l.detections.push(ScoredDetection {
            state: obj(4.1, 0.0),
            score: 0.0,
        });
        let mut l2 = local(1, Pose::IDENTITY, &[obj(2.0, 0.5)]);
        l2.detections[0].score = -2.0;
        let locals = vec![l, l2];
        let fused = three_stage_fuse(&locals, &FusionConfig::default()).unwrap();
        let out = distill_labels(
            &locals,
            &fused,
            &TeacherRegistry::default(),
            &StudentSelection::default(),
            LabelScope::AllVehicles,
            &[],
        )
        .unwrap();
        for (k, l) in locals.iter().enumerate() {
            for n in 0..l.detections.len() {
                let m = fused.matrices[k].object_of(n).unwrap();
                assert_eq!(out.labels[k].labels[n].is_some(), fused.kept[m]);
            }
        }
    }

    #[test]
    fn students_only_scope() {
        let locals = vec![
            local(0, Pose::IDENTITY, &[obj(20.0, 0.0)]),
            local(1, Pose::IDENTITY, &[obj(20.0, 0.0)]),
        ];
        let fused = three_stage_fuse(&locals, &FusionConfig::default()).unwrap();
        let none = distill_labels(
            &locals,
            &fused,
            &TeacherRegistry::default(),
            &StudentSelection::default(),
            LabelScope::StudentsOnly,
            &[],
        )
        .unwrap();
        assert!(none.labels.iter().all(|l| l.num_labeled() == 0));
        let one = StudentSelection {
            students: vec![1],
            divergence: vec![0.0, 0.5],
        };
        let out = distill_labels(&locals, &fused, &TeacherRegistry::default(), &one, LabelScope::StudentsOnly, &[]).unwrap();
        assert_eq!(out.labels[0].num_labeled(), 0);
        assert_eq!(out.labels[1].num_labeled(), 1);
    }

    #[test]
    fn divergence_examples() {
        let spec = SensorSpec::default();
        let world = [obj(20.0, 0.0), obj(30.0, 5.0), obj(40.0, -5.0), obj(50.0, 0.0)];
        // Vehicle 0 sees everything; vehicle 1 sees three of four plus a
        // false positive; vehicle 2 sees nothing.
        let v0 = local(0, Pose::IDENTITY, &world);
        let v1 = local(1, Pose::IDENTITY, &[world[0], world[1], world[2], obj(70.0, 10.0)]);
        let v2 = local(2, Pose::IDENTITY, &[]);
        let locals = vec![v0.clone(), v1, v2];
        // Fused map is built from vehicle 0 alone so the false positive is not in it.
        let mut fused = three_stage_fuse(&locals, &FusionConfig::default()).unwrap();
        let fp_cluster = fused.matrices[1].object_of(3).unwrap();
        fused.kept[fp_cluster] = false;
        fused.global.objects.retain(|o| o.cluster != fp_cluster);

        assert_eq!(frame_divergence(&locals[0], 0, &fused, &spec), 0.0);
        assert!((frame_divergence(&locals[1], 1, &fused, &spec) - 0.4).abs() < 1e-12);
        assert_eq!(frame_divergence(&locals[2], 2, &fused, &spec), 1.0);

        let sel = select_students(&[(locals, fused)], &spec, 0.2).unwrap();
        assert_eq!(sel.students, vec![1, 2]);
        assert!(select_students(&[], &spec, 0.2).unwrap().students.is_empty());
    }

    #[test]
    fn inconsistent_matrices_are_rejected() {
        let locals = vec![local(0, Pose::IDENTITY, &[obj(20.0, 0.0)])];
        let fused = three_stage_fuse(&locals, &FusionConfig::default()).unwrap();
        let other = vec![local(0, Pose::IDENTITY, &[obj(20.0, 0.0), obj(40.0, 0.0)])];
        assert!(distill_labels(
            &other,
            &fused,
            &TeacherRegistry::default(),
            &StudentSelection::default(),
            LabelScope::AllVehicles,
            &[]
        )
        .is_err());
    }
}
