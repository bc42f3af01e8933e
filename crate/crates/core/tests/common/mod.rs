//! Independent reference computations shared by the property suite and the
//! acceptance harness. Each check returns `Err` with a description on the
//! first violation.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use dmfusion::association::{cluster_brute_force_oracle, cluster_detections, ClusterConfig, TaggedDetection};
use dmfusion::fedlearn::model::BIAS_CHANNELS;
use dmfusion::fedlearn::{fedavg, gradient, loss, Candidate, LabelSet, LossWeights, ModelParams, SensorFrame};
use dmfusion::fusion::{aligned_yaws, compute_weights, fuse_members, Member, ScoredDetection, WeightMode};
use dmfusion::geometry::{wrap_angle, ObjectState, Pose};
use dmfusion::orchestrator::{decode, encode, Payload, V2xMessage};

pub fn state(category: u16, x: f64, y: f64, yaw: f64) -> ObjectState {
    ObjectState::new(category, [x, y, 0.8], [4.5, 1.9, 1.6], yaw)
}

pub fn random_state(rng: &mut ChaCha8Rng, span: f64) -> ObjectState {
    ObjectState::new(
        rng.random_range(0..3),
        [
            rng.random_range(-span..span),
            rng.random_range(-span..span),
            rng.random_range(0.0..2.0),
        ],
        [rng.random_range(3.0..8.0), rng.random_range(1.5..2.6), rng.random_range(1.2..3.2)],
        rng.random_range(-PI..PI),
    )
}

// ---- clustering ----

fn canonical(groups: Vec<Vec<usize>>) -> BTreeSet<BTreeSet<usize>> {
    groups.into_iter().map(|g| g.into_iter().collect()).collect()
}

fn planar(a: &ObjectState, b: &ObjectState) -> f64 {
    (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1])
}

/// Density clustering written out directly: reachability closure over core
/// points by flood fill, border points to their nearest core, noise alone.
/// Only valid when no two detections share a vehicle.
pub fn reference_partition(dets: &[TaggedDetection], cfg: &ClusterConfig) -> Vec<Vec<usize>> {
    let n = dets.len();
    let near = |i: usize, j: usize| planar(&dets[i].state, &dets[j].state) <= cfg.eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= cfg.min_pts).collect();
    let mut group = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for seed in 0..n {
        if !core[seed] || group[seed] != usize::MAX {
            continue;
        }
        let id = groups.len();
        let mut members = vec![seed];
        group[seed] = id;
        let mut frontier = vec![seed];
        while let Some(p) = frontier.pop() {
            for q in 0..n {
                if core[q] && group[q] == usize::MAX && near(p, q) {
                    group[q] = id;
                    members.push(q);
                    frontier.push(q);
                }
            }
        }
        groups.push(members);
    }
    for i in (0..n).filter(|&i| !core[i]) {
        let mut best: Option<usize> = None;
        for c in (0..n).filter(|&c| core[c] && near(i, c)) {
            best = match best {
                None => Some(c),
                Some(b) => {
                    let (dc, db) = (planar(&dets[i].state, &dets[c].state), planar(&dets[i].state, &dets[b].state));
                    let key = |k: usize| (dets[k].vehicle, dets[k].index);
                    if dc < db || (dc == db && key(c) < key(b)) {
                        Some(c)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        match best {
            Some(c) => groups[group[c]].push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

/// Up to `max_points` detections packed into a small square, so that
/// neighbourhoods overlap often.
pub fn random_detections(rng: &mut ChaCha8Rng, max_points: usize, distinct_vehicles: bool) -> Vec<TaggedDetection> {
    let n = rng.random_range(0..=max_points);
    let span: f64 = rng.random_range(3.0..20.0);
    let mut per_vehicle = [0usize; 5];
    (0..n)
        .map(|i| {
            let (vehicle, index) = if distinct_vehicles {
                (i, 0)
            } else {
                let v = rng.random_range(0..5);
                per_vehicle[v] += 1;
                (v, per_vehicle[v] - 1)
            };
            // coarse grid so exact-eps ties actually occur
            let x = (rng.random_range(0.0..span) * 4.0f64).round() / 4.0;
            let y = (rng.random_range(0.0..span) * 4.0f64).round() / 4.0;
            TaggedDetection {
                vehicle,
                index,
                state: state(0, x, y, 0.0),
            }
        })
        .collect()
}

pub fn random_cluster_config(rng: &mut ChaCha8Rng) -> ClusterConfig {
    ClusterConfig {
        eps: [0.5, 1.0, 1.5, 2.0, 2.5][rng.random_range(0..5)],
        min_pts: rng.random_range(1..=4),
    }
}

pub fn check_clustering(dets: &[TaggedDetection], cfg: &ClusterConfig, distinct_vehicles: bool) -> Result<(), String> {
    let fast = cluster_detections(dets, cfg).map_err(|e| e.to_string())?;
    let brute = cluster_brute_force_oracle(dets, cfg).map_err(|e| e.to_string())?;
    if canonical(fast.partition()) != canonical(brute.partition()) {
        return Err(format!("clustering differs from closure oracle on {} points, {cfg:?}", dets.len()));
    }
    if distinct_vehicles && canonical(fast.partition()) != canonical(reference_partition(dets, cfg)) {
        return Err(format!(
            "clustering differs from flood-fill reference on {} points, {cfg:?}",
            dets.len()
        ));
    }
    for m in &fast.matrices {
        if (0..m.num_detections()).any(|n| m.row_sum(n) != 1) {
            return Err("association row does not sum to one".into());
        }
    }
    Ok(())
}

// ---- weighted least-squares fusion ----

/// `Σ γ_i (|c − c_i|² + |e − e_i|² + wrap(θ − θ_i)²)` with member yaws
/// taken after direction alignment.
pub fn fusion_objective(fused: &ObjectState, members: &[Member], weights: &[f64], aligned: &[f64]) -> f64 {
    members
        .iter()
        .zip(weights)
        .zip(aligned)
        .map(|((m, w), yaw)| {
            let c: f64 = (0..3).map(|d| (fused.center[d] - m.state.center[d]).powi(2)).sum();
            let e: f64 = (0..3).map(|d| (fused.extents[d] - m.state.extents[d]).powi(2)).sum();
            w * (c + e + wrap_angle(fused.yaw - yaw).powi(2))
        })
        .sum()
}

/// A cluster of 2..=6 noisy views of one object, some of them reversed.
pub fn random_members(rng: &mut ChaCha8Rng) -> Vec<Member> {
    let base = random_state(rng, 50.0);
    let n = rng.random_range(2..=6);
    (0..n)
        .map(|_| {
            let mut s = base;
            for d in 0..3 {
                s.center[d] += rng.random_range(-0.8..0.8);
                s.extents[d] += rng.random_range(-0.3..0.3);
            }
            s.yaw = wrap_angle(s.yaw + rng.random_range(-0.3..0.3) + if rng.random_bool(0.2) { PI } else { 0.0 });
            Member {
                state: s,
                score: rng.random_range(-3.0..5.0),
            }
        })
        .collect()
}

pub fn check_fusion_optimality(members: &[Member], mode: WeightMode) -> Result<(), String> {
    let scores: Vec<f64> = members.iter().map(|m| m.score).collect();
    let weights = compute_weights(&scores, mode);
    let (fused, _) = fuse_members(members, &weights).map_err(|e| e.to_string())?;
    let aligned = aligned_yaws(members, weights.as_slice());
    let at = |s: &ObjectState| fusion_objective(s, members, weights.as_slice(), &aligned);
    let best = at(&fused);
    for field in 0..7 {
        for step in [-1e-3, 1e-3] {
            let mut moved = fused;
            match field {
                0..=2 => moved.center[field] += step,
                3..=5 => moved.extents[field - 3] += step,
                _ => moved.yaw = wrap_angle(moved.yaw + step),
            }
            if at(&moved) <= best {
                return Err(format!(
                    "moving field {field} by {step} did not raise the objective ({} vs {best})",
                    at(&moved)
                ));
            }
        }
    }
    Ok(())
}

// ---- federated averaging ----

pub fn check_fedavg(all: &[ModelParams]) -> Result<(), String> {
    let avg = fedavg(all).map_err(|e| e.to_string())?;
    for i in 0..avg.len() {
        let mean = all.iter().map(|p| p.values[i]).sum::<f64>() / all.len() as f64;
        if (avg.values[i] - mean).abs() > 1e-12 {
            return Err(format!("coordinate {i}: {} vs mean {mean}", avg.values[i]));
        }
    }
    Ok(())
}

// ---- loss gradients ----

/// A frame of 1..=4 candidates, each labeled with probability 0.8 (at least
/// one labeled) near its observation, a third of labels pointing backwards.
pub fn random_training_frame(rng: &mut ChaCha8Rng) -> (SensorFrame, LabelSet) {
    let n = rng.random_range(1..=4);
    let mut candidates = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let observed = random_state(rng, 40.0);
        let distance = observed.center[0].hypot(observed.center[1]);
        candidates.push(Candidate::new(
            &observed,
            distance,
            rng.random_range(0.0..1.0),
            rng.random_range(-2.0..5.0),
            rng.random_range(0..BIAS_CHANNELS),
        ));
        if i == 0 || rng.random_bool(0.8) {
            let mut l = observed;
            for d in 0..3 {
                l.center[d] += rng.random_range(-0.6..0.6);
                l.extents[d] = (l.extents[d] + rng.random_range(-0.3..0.3)).max(0.5);
            }
            l.yaw = wrap_angle(l.yaw + rng.random_range(-0.4..0.4) + if rng.random_bool(0.33) { PI } else { 0.0 });
            l.category = rng.random_range(0..3);
            labels.push(Some(l));
        } else {
            labels.push(None);
        }
    }
    (
        SensorFrame {
            frame_time: 0.0,
            candidates,
        },
        LabelSet { frame_time: 0.0, labels },
    )
}

pub fn random_params(rng: &mut ChaCha8Rng, scale: f64) -> ModelParams {
    let mut p = ModelParams::pretrained();
    for v in &mut p.values {
        *v += rng.random_range(-scale..scale);
    }
    p
}

/// The loss heads isolated through their coefficients, plus all together.
pub const HEADS: [(&str, LossWeights); 4] = [
    (
        "class",
        LossWeights {
            class: 1.0,
            regression: 0.0,
            direction: 0.0,
            smooth_l1_beta: 1.0,
        },
    ),
    (
        "regression",
        LossWeights {
            class: 0.0,
            regression: 1.0,
            direction: 0.0,
            smooth_l1_beta: 1.0,
        },
    ),
    (
        "direction",
        LossWeights {
            class: 0.0,
            regression: 0.0,
            direction: 1.0,
            smooth_l1_beta: 1.0,
        },
    ),
    (
        "combined",
        LossWeights {
            class: 1.0,
            regression: 2.0,
            direction: 0.2,
            smooth_l1_beta: 1.0,
        },
    ),
];

/// Relative error `|g − g_fd| / max(|g|, |g_fd|)` (Euclidean norms) of the
/// analytic gradient against central differences.
pub fn gradient_relative_error(params: &ModelParams, frame: &SensorFrame, labels: &LabelSet, w: &LossWeights) -> Result<f64, String> {
    let (_, analytic) = gradient(params, frame, labels, w).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let mut diff2 = 0.0;
    let mut norm_a = 0.0;
    let mut norm_fd = 0.0;
    let mut probe = params.clone();
    for i in 0..params.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + h;
        let up = loss(&probe, frame, labels, w).map_err(|e| e.to_string())?.total;
        probe.values[i] = orig - h;
        let down = loss(&probe, frame, labels, w).map_err(|e| e.to_string())?.total;
        probe.values[i] = orig;
        let fd = (up - down) / (2.0 * h);
        diff2 += (analytic[i] - fd).powi(2);
        norm_a += analytic[i].powi(2);
        norm_fd += fd.powi(2);
    }
    let scale = norm_a.sqrt().max(norm_fd.sqrt());
    Ok(if scale < 1e-12 { diff2.sqrt() } else { diff2.sqrt() / scale })
}

// ---- codec ----

pub fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    Pose::new(
        [rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), 0.0],
        rng.random_range(-PI..PI),
    )
}

pub fn random_message(rng: &mut ChaCha8Rng) -> V2xMessage {
    let dets = |rng: &mut ChaCha8Rng| -> Vec<ScoredDetection> {
        (0..rng.random_range(0..6))
            .map(|_| ScoredDetection {
                state: random_state(rng, 60.0),
                score: rng.random_range(-5.0..5.0),
            })
            .collect()
    };
    let payload = match rng.random_range(0..6) {
        0 => Payload::LocalMapUpload(dets(rng)),
        1 => Payload::GlobalMapBroadcast(dets(rng)),
        2 => Payload::ParamsUpload {
            round: rng.random(),
            params: random_params(rng, 1.0),
        },
        3 => Payload::ParamsBroadcast {
            round: rng.random(),
            params: random_params(rng, 1.0),
        },
        4 => Payload::LabelBroadcast(
            (0..rng.random_range(0..6))
                .map(|_| rng.random_bool(0.6).then(|| random_state(rng, 60.0)))
                .collect(),
        ),
        _ => Payload::PoseUpload {
            frame_time: rng.random_range(0.0..100.0),
            pose: random_pose(rng),
        },
    };
    V2xMessage {
        sender: rng.random(),
        receiver: rng.random(),
        payload,
    }
}

/// Message length from the wire layout: 16-byte header plus body.
pub fn expected_len(payload: &Payload) -> usize {
    let object = 2 + 7 * 8;
    16 + match payload {
        Payload::LocalMapUpload(d) | Payload::GlobalMapBroadcast(d) => 4 + d.len() * (object + 8),
        Payload::ParamsUpload { params, .. } | Payload::ParamsBroadcast { params, .. } => 4 + 4 + 8 * params.len(),
        Payload::LabelBroadcast(l) => 4 + l.iter().map(|x| 1 + if x.is_some() { object } else { 0 }).sum::<usize>(),
        Payload::PoseUpload { .. } => 8 + 4 * 8,
    }
}

pub fn check_codec(msg: &V2xMessage) -> Result<(), String> {
    let bytes = encode(msg);
    if bytes.len() != expected_len(&msg.payload) || bytes.len() != msg.encoded_len() {
        return Err(format!(
            "{:?}: {} bytes, layout says {}",
            msg.kind(),
            bytes.len(),
            expected_len(&msg.payload)
        ));
    }
    if &bytes[..4] != b"DMF1" {
        return Err("missing magic".into());
    }
    let back = decode(&bytes).map_err(|e| e.to_string())?;
    if &back != msg {
        return Err(format!("{:?} did not round-trip", msg.kind()));
    }
    if bytes.len() > 16 && decode(&bytes[..bytes.len() - 1]).is_ok() {
        return Err("truncated message decoded".into());
    }
    Ok(())
}
