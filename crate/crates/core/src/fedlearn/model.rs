//! Per-candidate affine refinement detector.
//!
//! Every candidate carries a raw feature vector (the observed box plus range,
//! occlusion, sensor score and a per-vehicle bias channel). A fixed basis
//! expansion of those features feeds twelve affine heads: six box residuals,
//! a yaw residual, two direction logits and three class logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::ScoredDetection;
use crate::geometry::{wrap_angle, ObjectState};

pub const NUM_CLASSES: usize = 3;
pub const BIAS_CHANNELS: usize = 8;
/// Raw candidate feature length.
pub const FEATURE_DIM: usize = 11 + BIAS_CHANNELS;
/// Basis length fed to every head.
pub const BASIS_DIM: usize = 12 + NUM_CLASSES + BIAS_CHANNELS;
pub const NUM_OUTPUTS: usize = 9 + NUM_CLASSES;
/// Parameter count.
pub const PARAM_DIM: usize = NUM_OUTPUTS * BASIS_DIM;

/// Distance scale used to normalize positions and ranges.
pub const RANGE_SCALE: f64 = 100.0;
/// Smallest extent a refined box may report.
pub const MIN_EXTENT: f64 = 0.05;

pub(crate) const YAW_ROW: usize = 6;
pub(crate) const DIR_ROW: usize = 7;
pub(crate) const CLASS_ROW: usize = 9;
const SCORE_BASIS: usize = 11;
const CLASS_BASIS: usize = 12;
const BIAS_BASIS: usize = 12 + NUM_CLASSES;
/// Basis value of an active bias channel.
pub const BIAS_CHANNEL_SCALE: f64 = 3.0;

/// Raw observation features of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate(pub [f64; FEATURE_DIM]);

impl Candidate {
    pub fn new(observed: &ObjectState, distance: f64, occlusion: f64, score: f64, bias_channel: usize) -> Self {
        let mut f = [0.0; FEATURE_DIM];
        f[0] = observed.category as f64;
        f[1..4].copy_from_slice(&observed.center);
        f[4..7].copy_from_slice(&observed.extents);
        f[7] = observed.yaw;
        f[8] = distance;
        f[9] = occlusion;
        f[10] = score;
        f[11 + bias_channel % BIAS_CHANNELS] = 1.0;
        Candidate(f)
    }

    /// The observed box embedded in the features.
    pub fn observed(&self) -> ObjectState {
        let f = &self.0;
        ObjectState {
            category: f[0] as u16,
            center: [f[1], f[2], f[3]],
            extents: [f[4], f[5], f[6]],
            yaw: f[7],
        }
    }

    pub fn distance(&self) -> f64 {
        self.0[8]
    }

    pub fn occlusion(&self) -> f64 {
        self.0[9]
    }

    pub fn score(&self) -> f64 {
        self.0[10]
    }

    pub fn detection(&self) -> ScoredDetection {
        ScoredDetection {
            state: self.observed(),
            score: self.score(),
        }
    }

    pub fn basis(&self) -> [f64; BASIS_DIM] {
        let f = &self.0;
        let mut b = [0.0; BASIS_DIM];
        b[0] = 1.0;
        b[1] = f[1] / RANGE_SCALE;
        b[2] = f[2] / RANGE_SCALE;
        b[3] = f[3] / 2.0;
        b[4] = f[4] / 4.0;
        b[5] = f[5] / 2.0;
        b[6] = f[6] / 2.0;
        b[7] = f[7].sin();
        b[8] = f[7].cos();
        b[9] = f[8] / RANGE_SCALE;
        b[10] = f[9];
        b[SCORE_BASIS] = f[10] / 4.0;
        let class = f[0] as usize;
        if class < NUM_CLASSES {
            b[CLASS_BASIS + class] = 1.0;
        }
        for (slot, on) in b[BIAS_BASIS..].iter_mut().zip(&f[11..]) {
            *slot = BIAS_CHANNEL_SCALE * on;
        }
        b
    }
}

/// One vehicle's candidates for one frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorFrame {
    pub frame_time: f64,
    pub candidates: Vec<Candidate>,
}

/// Optional label per candidate, in the vehicle's local frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelSet {
    pub frame_time: f64,
    pub labels: Vec<Option<ObjectState>>,
}

impl LabelSet {
    pub fn unlabeled(frame_time: f64, n: usize) -> Self {
        LabelSet {
            frame_time,
            labels: vec![None; n],
        }
    }

    pub fn num_labeled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

/// Flat parameter vector, row-major over (head output, basis entry).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros() -> Self {
        ModelParams {
            values: vec![0.0; PARAM_DIM],
        }
    }

    /// Starting point that reproduces the sensed candidates unchanged: zero
    /// residuals, a confident "same direction" logit, and class logits equal
    /// to the sensor score for the observed class and four lower otherwise.
    pub fn pretrained() -> Self {
        let mut p = Self::zeros();
        p.values[index(DIR_ROW + 1, 0)] = -4.0;
        for j in 0..NUM_CLASSES {
            p.values[index(CLASS_ROW + j, SCORE_BASIS)] = 4.0;
            for k in 0..NUM_CLASSES {
                if k != j {
                    p.values[index(CLASS_ROW + j, CLASS_BASIS + k)] = -4.0;
                }
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        if self.values.len() != PARAM_DIM {
            return Err(Error::DimensionMismatch {
                expected: PARAM_DIM,
                actual: self.values.len(),
            });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters contain non-finite entries"));
        }
        Ok(())
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn index(output: usize, basis: usize) -> usize {
    output * BASIS_DIM + basis
}

fn heads(params: &ModelParams, basis: &[f64; BASIS_DIM]) -> [f64; NUM_OUTPUTS] {
    let mut out = [0.0; NUM_OUTPUTS];
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &params.values[o * BASIS_DIM..(o + 1) * BASIS_DIM];
        *slot = row.iter().zip(basis).map(|(w, b)| w * b).sum();
    }
    out
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

fn refine(params: &ModelParams, cand: &Candidate) -> ScoredDetection {
    let out = heads(params, &cand.basis());
    let obs = cand.observed();
    let mut state = obs;
    for d in 0..3 {
        state.center[d] = obs.center[d] + out[d];
        state.extents[d] = (obs.extents[d] + out[3 + d]).max(MIN_EXTENT);
    }
    let mut yaw = obs.yaw + out[YAW_ROW];
    if out[DIR_ROW + 1] > out[DIR_ROW] {
        yaw += std::f64::consts::PI;
    }
    state.yaw = wrap_angle(yaw);
    let logits = &out[CLASS_ROW..];
    let class = argmax(logits);
    state.category = class as u16;
    ScoredDetection {
        state,
        score: logits[class],
    }
}

/// Refines every candidate of a frame.
pub fn predict(params: &ModelParams, frame: &SensorFrame) -> Result<Vec<ScoredDetection>> {
    params.check()?;
    Ok(frame.candidates.iter().map(|c| refine(params, c)).collect())
}

/// Loss coefficients for the class, regression (box + angle) and direction terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub class: f64,
    pub regression: f64,
    pub direction: f64,
    /// Transition point of the smooth-L1 terms.
    pub smooth_l1_beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            class: 1.0,
            regression: 2.0,
            direction: 0.2,
            smooth_l1_beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.class, self.regression, self.direction]
            .iter()
            .all(|b| b.is_finite() && *b >= 0.0);
        if !ok || !(self.smooth_l1_beta > 0.0) {
            return Err(Error::invalid("loss coefficients must be non-negative and beta positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub class_loss: f64,
    pub angle_loss: f64,
    pub box_loss: f64,
    pub dir_loss: f64,
    /// Labeled candidates that contributed; zero means the frame is inert.
    pub labeled: usize,
}

impl LossBreakdown {
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        w.class * self.class_loss + w.regression * (self.angle_loss + self.box_loss) + w.direction * self.dir_loss
    }
}

pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        0.5 * a * a / beta
    } else {
        a - 0.5 * beta
    }
}

fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

/// Softmax and cross-entropy against `target`, computed stably.
fn softmax_ce(logits: &[f64], target: usize) -> (Vec<f64>, f64) {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = exps.iter().sum();
    let ce = z.ln() + top - logits[target];
    (exps.into_iter().map(|e| e / z).collect(), ce)
}

/// Whether the label points into the opposite half-circle from the observed yaw.
pub fn direction_bin(observed_yaw: f64, label_yaw: f64) -> usize {
    usize::from(crate::geometry::angle_diff(label_yaw, observed_yaw).abs() > std::f64::consts::FRAC_PI_2)
}

/// Loss of one labeled candidate plus the derivative with respect to each
/// head output, both already scaled by `scale`.
fn candidate_terms(
    params: &ModelParams,
    cand: &Candidate,
    label: &ObjectState,
    w: &LossWeights,
    scale: f64,
) -> Result<([f64; 4], [f64; NUM_OUTPUTS], [f64; BASIS_DIM])> {
    let target = label.category as usize;
    if target >= NUM_CLASSES {
        return Err(Error::invalid(format!("label category {target} out of range")));
    }
    let basis = cand.basis();
    let out = heads(params, &basis);
    let obs = cand.observed();
    let beta = w.smooth_l1_beta;
    let mut d_out = [0.0; NUM_OUTPUTS];

    let observed_box = [
        obs.center[0],
        obs.center[1],
        obs.center[2],
        obs.extents[0],
        obs.extents[1],
        obs.extents[2],
    ];
    let label_box = [
        label.center[0],
        label.center[1],
        label.center[2],
        label.extents[0],
        label.extents[1],
        label.extents[2],
    ];
    let mut box_loss = 0.0;
    for f in 0..6 {
        let e = observed_box[f] + out[f] - label_box[f];
        box_loss += smooth_l1(e, beta);
        d_out[f] = scale * w.regression * smooth_l1_grad(e, beta);
    }

    let delta = obs.yaw + out[YAW_ROW] - label.yaw;
    let s = delta.sin();
    let angle_loss = smooth_l1(s, beta);
    d_out[YAW_ROW] = scale * w.regression * smooth_l1_grad(s, beta) * delta.cos();

    let dir_target = direction_bin(obs.yaw, label.yaw);
    let (p_dir, dir_loss) = softmax_ce(&out[DIR_ROW..DIR_ROW + 2], dir_target);
    for j in 0..2 {
        d_out[DIR_ROW + j] = scale * w.direction * (p_dir[j] - f64::from(u8::from(j == dir_target)));
    }

    let (p_cls, class_loss) = softmax_ce(&out[CLASS_ROW..], target);
    for j in 0..NUM_CLASSES {
        d_out[CLASS_ROW + j] = scale * w.class * (p_cls[j] - f64::from(u8::from(j == target)));
    }

    Ok(([class_loss, angle_loss, box_loss, dir_loss], d_out, basis))
}

fn check_alignment(frame: &SensorFrame, labels: &LabelSet) -> Result<()> {
    if frame.candidates.len() != labels.labels.len() {
        return Err(Error::DimensionMismatch {
            expected: frame.candidates.len(),
            actual: labels.labels.len(),
        });
    }
    Ok(())
}

/// Mean loss over the labeled candidates of one frame.
pub fn loss(params: &ModelParams, frame: &SensorFrame, labels: &LabelSet, w: &LossWeights) -> Result<LossBreakdown> {
    Ok(loss_and_gradient(params, frame, labels, w, false)?.0)
}

/// Loss and its gradient with respect to every parameter.
pub fn gradient(params: &ModelParams, frame: &SensorFrame, labels: &LabelSet, w: &LossWeights) -> Result<(LossBreakdown, Vec<f64>)> {
    let (l, g) = loss_and_gradient(params, frame, labels, w, true)?;
    Ok((l, g.expect("gradient requested")))
}

fn loss_and_gradient(
    params: &ModelParams,
    frame: &SensorFrame,
    labels: &LabelSet,
    w: &LossWeights,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    params.check()?;
    check_alignment(frame, labels)?;
    let labeled = labels.num_labeled();
    let mut grad = want_grad.then(|| vec![0.0; PARAM_DIM]);
    if labeled == 0 {
        return Ok((LossBreakdown::default(), grad));
    }
    let scale = 1.0 / labeled as f64;
    let mut parts = [0.0; 4];
    for (cand, label) in frame.candidates.iter().zip(&labels.labels) {
        let Some(label) = label else { continue };
        let (terms, d_out, basis) = candidate_terms(params, cand, label, w, scale)?;
        for (acc, t) in parts.iter_mut().zip(terms) {
            *acc += scale * t;
        }
        if let Some(g) = grad.as_mut() {
            for (o, d) in d_out.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut g[o * BASIS_DIM..(o + 1) * BASIS_DIM];
                for (gi, b) in row.iter_mut().zip(&basis) {
                    *gi += d * b;
                }
            }
        }
    }
    let mut out = LossBreakdown {
        total: 0.0,
        class_loss: parts[0],
        angle_loss: parts[1],
        box_loss: parts[2],
        dir_loss: parts[3],
        labeled,
    };
    out.total = out.recombine(w);
    Ok((out, grad))
}
