//! Edge-side map fusion: clustering, score-weighted least-squares fusion per
//! cluster, then overlap pruning. The mean-fusion and max-score baselines share
//! the same pipeline and differ only in how a cluster collapses to one object.

pub mod export;

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::association::{cluster_detections, AssociationMatrix, ClusterConfig, TaggedDetection};
use crate::error::{Error, Result};
use crate::geometry::{angle_diff, wrap_angle, IouKind, ObjectState, Pose};

/// A detection in its vehicle's local frame with a pre-sigmoid confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredDetection {
    pub state: ObjectState,
    pub score: f64,
}

/// One vehicle's object list for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMap {
    pub vehicle: usize,
    pub frame_time: f64,
    pub pose: Pose,
    pub detections: Vec<ScoredDetection>,
}

impl LocalMap {
    /// Detections mapped into the world frame, scores kept.
    pub fn global_detections(&self) -> Vec<(ObjectState, f64)> {
        self.detections.iter().map(|d| (self.pose.to_global(&d.state), d.score)).collect()
    }
}

/// A fused object with the pre-prune cluster it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalObject {
    pub state: ObjectState,
    pub score: f64,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalMap {
    pub frame_time: f64,
    pub objects: Vec<GlobalObject>,
}

impl GlobalMap {
    pub fn scored(&self) -> Vec<(ObjectState, f64)> {
        self.objects.iter().map(|o| (o.state, o.score)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Weight ∝ σ(s): higher confidence, larger weight.
    #[default]
    Confidence,
    /// Weight ∝ (1 + e^s)^-1, the decreasing form.
    Literal,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(WeightMode::Confidence),
            "literal" => Ok(WeightMode::Literal),
            other => Err(Error::invalid(format!("unknown weight mode `{other}`"))),
        }
    }
}

/// How one cluster collapses into one object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    /// Score-weighted least squares (weights from [`WeightMode`]).
    ThreeStage,
    /// Uniform weights.
    Mean,
    /// Highest-scoring member verbatim.
    MaxScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub cluster: ClusterConfig,
    pub weight_mode: WeightMode,
    /// Pruning threshold δ on pairwise IoU.
    pub delta: f64,
    pub iou: IouKind,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            cluster: ClusterConfig::default(),
            weight_mode: WeightMode::Confidence,
            delta: 0.1,
            iou: IouKind::Bev,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// Normalized per-member weights `γ` of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights(pub Vec<f64>);

impl FusionWeights {
    pub fn uniform(n: usize) -> Self {
        FusionWeights(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic function.
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Normalized fusion weights from raw scores. Computed in log space so
/// extreme scores neither overflow nor collapse every weight to zero.
pub fn compute_weights(scores: &[f64], mode: WeightMode) -> FusionWeights {
    if scores.is_empty() {
        return FusionWeights(Vec::new());
    }
    let logw: Vec<f64> = scores
        .iter()
        .map(|&s| match mode {
            WeightMode::Confidence => -softplus(-s),
            WeightMode::Literal => -softplus(s),
        })
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    FusionWeights(raw.into_iter().map(|r| r / total).collect())
}

/// A cluster member already mapped into the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Member {
    pub state: ObjectState,
    pub score: f64,
}

impl Member {
    pub fn from_local(det: &ScoredDetection, pose: &Pose) -> Self {
        Member {
            state: pose.to_global(&det.state),
            score: det.score,
        }
    }
}

/// Index of the member acting as yaw reference: largest weight, then largest
/// score, then first.
fn reference_member(members: &[Member], weights: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..members.len() {
        let better = weights[i] > weights[best] || (weights[i] == weights[best] && members[i].score > members[best].score);
        if better {
            best = i;
        }
    }
    best
}

/// Member yaws after flipping any that point more than π/2 away from the
/// reference member.
pub fn aligned_yaws(members: &[Member], weights: &[f64]) -> Vec<f64> {
    let r = reference_member(members, weights);
    let ref_yaw = members[r].state.yaw;
    members
        .iter()
        .map(|m| {
            if angle_diff(m.state.yaw, ref_yaw).abs() > FRAC_PI_2 {
                wrap_angle(m.state.yaw + PI)
            } else {
                m.state.yaw
            }
        })
        .collect()
}

/// Weighted least-squares fusion of one cluster.
///
/// Center and extents are weighted means. Yaw is the weighted mean of the
/// aligned yaws unwrapped around the reference member, which minimizes the
/// weighted sum of squared wrapped residuals. Category is a weighted vote and
/// the fused score is the weighted mean of raw scores.
pub fn fuse_members(members: &[Member], weights: &FusionWeights) -> Result<(ObjectState, f64)> {
    let w = weights.as_slice();
    if members.is_empty() {
        return Err(Error::invalid("cannot fuse an empty cluster"));
    }
    if w.len() != members.len() {
        return Err(Error::DimensionMismatch {
            expected: members.len(),
            actual: w.len(),
        });
    }
    if members.len() == 1 {
        return Ok((members[0].state, members[0].score));
    }

    let mut center = [0.0; 3];
    let mut extents = [0.0; 3];
    let mut score = 0.0;
    for (m, &wi) in members.iter().zip(w) {
        for d in 0..3 {
            center[d] += wi * m.state.center[d];
            extents[d] += wi * m.state.extents[d];
        }
        score += wi * m.score;
    }

    let ref_yaw = members[reference_member(members, w)].state.yaw;
    let offset: f64 = aligned_yaws(members, w)
        .iter()
        .zip(w)
        .map(|(y, wi)| wi * angle_diff(*y, ref_yaw))
        .sum();
    let yaw = wrap_angle(ref_yaw + offset);

    Ok((
        ObjectState {
            category: vote_category(members, w),
            center,
            extents,
            yaw,
        },
        score,
    ))
}

/// Weighted majority class; ties go to the lower class id.
fn vote_category(members: &[Member], w: &[f64]) -> u16 {
    let mut tally: Vec<(u16, f64)> = Vec::new();
    for (m, &wi) in members.iter().zip(w) {
        match tally.iter_mut().find(|(c, _)| *c == m.state.category) {
            Some(slot) => slot.1 += wi,
            None => tally.push((m.state.category, wi)),
        }
    }
    tally
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(c, _)| c)
        .expect("non-empty cluster")
}

/// Fuses local-frame members given their poses.
pub fn fuse_cluster(members: &[(ScoredDetection, Pose)], weights: &FusionWeights) -> Result<(ObjectState, f64)> {
    let global: Vec<Member> = members.iter().map(|(d, p)| Member::from_local(d, p)).collect();
    fuse_members(&global, weights)
}

/// Greedy score-descending suppression. Returns kept indices in visiting
/// order; ties in score go to the lower index.
pub fn prune_indices(objects: &[(ObjectState, f64)], delta: f64, iou: IouKind) -> Vec<usize> {
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.sort_by(|&a, &b| objects[b].1.total_cmp(&objects[a].1).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou.iou(&objects[i].0, &objects[k].0) <= delta) {
            kept.push(i);
        }
    }
    kept
}

/// Removes overlapping boxes, keeping the higher score of any pair with
/// IoU above `delta`. Survivors keep their input order.
pub fn prune_overlaps(objects: &[(ObjectState, f64)], delta: f64) -> Vec<(ObjectState, f64)> {
    let mut kept = prune_indices(objects, delta, IouKind::Bev);
    kept.sort_unstable();
    kept.into_iter().map(|i| objects[i]).collect()
}

/// Everything the edge produces for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub global: GlobalMap,
    /// Pre-prune object count `M`.
    pub num_objects: usize,
    /// One matrix per input local map, same order.
    pub matrices: Vec<AssociationMatrix>,
    /// Pre-prune fused objects `v_m`, indexed by cluster.
    pub candidates: Vec<GlobalObject>,
    /// Whether each cluster survived pruning.
    pub kept: Vec<bool>,
    /// `γ` for every detection, per local map.
    pub weights: Vec<Vec<f64>>,
}

fn check_frame(locals: &[LocalMap]) -> Result<f64> {
    let Some(first) = locals.first() else {
        return Ok(0.0);
    };
    for (i, l) in locals.iter().enumerate() {
        if l.frame_time != first.frame_time {
            return Err(Error::invalid(format!(
                "local map {i} has frame time {} but {} was expected",
                l.frame_time, first.frame_time
            )));
        }
        if locals[..i].iter().any(|o| o.vehicle == l.vehicle) {
            return Err(Error::invalid(format!("vehicle {} appears twice", l.vehicle)));
        }
    }
    Ok(first.frame_time)
}

/// Fuses one frame of local maps with the chosen cluster collapse rule.
pub fn fuse_frame(locals: &[LocalMap], cfg: &FusionConfig, method: FusionMethod) -> Result<FusionOutput> {
    cfg.validate()?;
    let frame_time = check_frame(locals)?;

    let mut tagged = Vec::new();
    for l in locals {
        for (n, d) in l.detections.iter().enumerate() {
            tagged.push(TaggedDetection {
                vehicle: l.vehicle,
                index: n,
                state: l.pose.to_global(&d.state),
            });
        }
    }
    let clustering = cluster_detections(&tagged, &cfg.cluster)?;
    let roster: Vec<(usize, usize)> = locals.iter().map(|l| (l.vehicle, l.detections.len())).collect();
    let matrices = clustering.matrices_for(&tagged, &roster)?;

    let scores: Vec<f64> = locals.iter().flat_map(|l| l.detections.iter().map(|d| d.score)).collect();
    let mut flat_weights = vec![0.0; tagged.len()];
    let mut candidates = Vec::with_capacity(clustering.num_objects);
    for (m, group) in clustering.partition().into_iter().enumerate() {
        let members: Vec<Member> = group
            .iter()
            .map(|&i| Member {
                state: tagged[i].state,
                score: scores[i],
            })
            .collect();
        let member_scores: Vec<f64> = members.iter().map(|mb| mb.score).collect();
        let (state, score, weights) = match method {
            FusionMethod::ThreeStage | FusionMethod::Mean => {
                let weights = if method == FusionMethod::Mean {
                    FusionWeights::uniform(members.len())
                } else {
                    compute_weights(&member_scores, cfg.weight_mode)
                };
                let (s, q) = fuse_members(&members, &weights)?;
                (s, q, weights)
            }
            FusionMethod::MaxScore => {
                let best = (0..members.len())
                    .reduce(|a, b| if members[b].score > members[a].score { b } else { a })
                    .expect("non-empty cluster");
                let mut w = vec![0.0; members.len()];
                w[best] = 1.0;
                (members[best].state, members[best].score, FusionWeights(w))
            }
        };
        for (&i, &wi) in group.iter().zip(weights.as_slice()) {
            flat_weights[i] = wi;
        }
        candidates.push(GlobalObject { state, score, cluster: m });
    }

    let scored: Vec<(ObjectState, f64)> = candidates.iter().map(|c| (c.state, c.score)).collect();
    let mut kept = vec![false; candidates.len()];
    for i in prune_indices(&scored, cfg.delta, cfg.iou) {
        kept[i] = true;
    }
    let objects = candidates.iter().zip(&kept).filter(|(_, &k)| k).map(|(c, _)| *c).collect();

    let mut weights = Vec::with_capacity(locals.len());
    let mut cursor = 0;
    for l in locals {
        weights.push(flat_weights[cursor..cursor + l.detections.len()].to_vec());
        cursor += l.detections.len();
    }

    Ok(FusionOutput {
        global: GlobalMap { frame_time, objects },
        num_objects: clustering.num_objects,
        matrices,
        candidates,
        kept,
        weights,
    })
}

/// Clustering, score-weighted fusion and overlap pruning.
pub fn three_stage_fuse(locals: &[LocalMap], cfg: &FusionConfig) -> Result<FusionOutput> {
    fuse_frame(locals, cfg, FusionMethod::ThreeStage)
}

/// Same pipeline with uniform weights inside each cluster.
pub fn baseline_mean_fuse(locals: &[LocalMap], cfg: &FusionConfig) -> Result<GlobalMap> {
    Ok(fuse_frame(locals, cfg, FusionMethod::Mean)?.global)
}

/// Same pipeline keeping only each cluster's highest-scoring member.
pub fn baseline_max_score_fuse(locals: &[LocalMap], cfg: &FusionConfig) -> Result<GlobalMap> {
    Ok(fuse_frame(locals, cfg, FusionMethod::MaxScore)?.global)
}
