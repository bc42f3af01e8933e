use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{gradient, loss, LabelSet, LossBreakdown, LossWeights, ModelParams, SensorFrame};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng;

const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub max_rounds: usize,
    pub batch_size: usize,
    pub loss: LossWeights,
    /// Half-open training window `[start, end)` in seconds.
    pub train_window: [f64; 2],
    /// Keep one frame in every `sampling_ratio` inside the window.
    pub sampling_ratio: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            local_epochs: 2,
            max_rounds: 5,
            batch_size: 1,
            loss: LossWeights::default(),
            train_window: [0.0, 25.5],
            sampling_ratio: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        if self.local_epochs == 0 || self.batch_size == 0 || self.sampling_ratio == 0 {
            return Err(Error::invalid("local_epochs, batch_size and sampling_ratio must be at least 1"));
        }
        if !(self.train_window[0] <= self.train_window[1]) {
            return Err(Error::invalid("train_window start must not exceed its end"));
        }
        self.loss.validate()
    }

    /// Frame indices used for training, given the frame rate.
    pub fn window_frames(&self, num_frames: usize, frame_rate: f64) -> Vec<usize> {
        (0..num_frames)
            .filter(|&f| {
                let t = f as f64 / frame_rate;
                t >= self.train_window[0] && t < self.train_window[1]
            })
            .step_by(self.sampling_ratio)
            .collect()
    }
}

pub type Dataset = [(SensorFrame, LabelSet)];

/// `local_epochs` passes of mini-batch gradient descent. Batches are drawn
/// from a shuffle driven by `shuffle_seed`; each step moves by the learning
/// rate times the mean frame gradient of the batch.
pub fn local_train(params: &ModelParams, dataset: &Dataset, cfg: &TrainConfig, shuffle_seed: u64) -> Result<ModelParams> {
    params.check()?;
    let mut w = params.clone();
    if dataset.is_empty() || cfg.learning_rate == 0.0 {
        return Ok(w);
    }
    let mut rng = rng::stream(shuffle_seed, &[SHUFFLE_STREAM]);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut step = vec![0.0; w.len()];
            for &i in batch {
                let (frame, labels) = &dataset[i];
                let (_, g) = gradient(&w, frame, labels, &cfg.loss)?;
                for (s, gi) in step.iter_mut().zip(g) {
                    *s += gi;
                }
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for (wi, s) in w.values.iter_mut().zip(step) {
                *wi -= scale * s;
            }
        }
    }
    w.check()?;
    Ok(w)
}

/// Elementwise mean with equal vehicle weights.
pub fn fedavg(all: &[ModelParams]) -> Result<ModelParams> {
    let first = all.first().ok_or_else(|| Error::invalid("cannot average zero parameter vectors"))?;
    let len = first.len();
    let mut sum = vec![0.0; len];
    for p in all {
        if p.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: p.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(&p.values) {
            *s += v;
        }
    }
    let k = all.len() as f64;
    Ok(ModelParams {
        values: sum.into_iter().map(|s| s / k).collect(),
    })
}

/// Mean loss of `params` over the labeled frames of a dataset.
pub fn dataset_loss(params: &ModelParams, dataset: &Dataset, w: &LossWeights) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown::default();
    let mut frames = 0usize;
    for (frame, labels) in dataset {
        let l = loss(params, frame, labels, w)?;
        if l.labeled == 0 {
            continue;
        }
        frames += 1;
        acc.class_loss += l.class_loss;
        acc.angle_loss += l.angle_loss;
        acc.box_loss += l.box_loss;
        acc.dir_loss += l.dir_loss;
        acc.labeled += l.labeled;
    }
    if frames > 0 {
        let n = frames as f64;
        acc.class_loss /= n;
        acc.angle_loss /= n;
        acc.box_loss /= n;
        acc.dir_loss /= n;
    }
    acc.total = acc.recombine(w);
    Ok(acc)
}

/// One line of the training curve: a vehicle's loss on its own data after
/// its local epochs in a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub round: usize,
    pub vehicle: usize,
    pub total: f64,
    pub class_loss: f64,
    pub angle_loss: f64,
    pub box_loss: f64,
    pub dir_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedOutcome {
    /// Final aggregated parameters.
    pub params: ModelParams,
    /// What each vehicle holds after the last broadcast.
    pub vehicle_params: Vec<ModelParams>,
    pub curve: Vec<CurveRow>,
    pub rounds: usize,
}

/// Shuffle seed of a vehicle in a round.
pub fn round_seed(cfg: &TrainConfig, vehicle: usize, round: usize) -> u64 {
    rng::derive_seed(cfg.seed, &[vehicle as u64, round as u64])
}

/// `max_rounds` rounds of local training on every vehicle, averaging, and
/// broadcasting the average back.
pub fn run_federated(
    datasets: &[Vec<(SensorFrame, LabelSet)>],
    init: &ModelParams,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<FederatedOutcome> {
    cfg.validate()?;
    init.check()?;
    let mut held: Vec<ModelParams> = vec![init.clone(); datasets.len()];
    let mut global = init.clone();
    let mut curve = Vec::new();
    for round in 0..cfg.max_rounds {
        let trained: Vec<Result<(ModelParams, LossBreakdown)>> = exec.map_range(datasets.len(), |k| {
            let w = local_train(&held[k], &datasets[k], cfg, round_seed(cfg, k, round))?;
            let l = dataset_loss(&w, &datasets[k], &cfg.loss)?;
            Ok((w, l))
        });
        let mut locals = Vec::with_capacity(trained.len());
        for (k, r) in trained.into_iter().enumerate() {
            let (w, l) = r?;
            curve.push(CurveRow {
                round,
                vehicle: k,
                total: l.total,
                class_loss: l.class_loss,
                angle_loss: l.angle_loss,
                box_loss: l.box_loss,
                dir_loss: l.dir_loss,
            });
            locals.push(w);
        }
        global = fedavg(&locals)?;
        for h in held.iter_mut() {
            h.clone_from(&global);
        }
    }
    Ok(FederatedOutcome {
        params: global,
        vehicle_params: held,
        curve,
        rounds: cfg.max_rounds,
    })
}

pub fn write_curve_csv<W: Write>(w: W, rows: &[CurveRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedlearn::model::Candidate;
    use crate::geometry::ObjectState;

    fn sample(dx: f64) -> (SensorFrame, LabelSet) {
        let truth = ObjectState::new(0, [20.0, 1.0, 0.8], [4.5, 1.9, 1.6], 0.1);
        let mut obs = truth;
        obs.center[0] += dx;
        (
            SensorFrame {
                frame_time: 0.0,
                candidates: vec![Candidate::new(&obs, 20.0, 0.0, 3.0, 0)],
            },
            LabelSet {
                frame_time: 0.0,
                labels: vec![Some(truth)],
            },
        )
    }

    #[test]
    fn fedavg_examples() {
        let a = ModelParams { values: vec![1.0, 2.0] };
        let b = ModelParams { values: vec![3.0, 4.0] };
        assert_eq!(fedavg(&[a.clone(), b]).unwrap().values, vec![2.0, 3.0]);
        assert_eq!(fedavg(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);
        assert!(fedavg(&[]).is_err());
        assert!(fedavg(&[a, ModelParams { values: vec![1.0] }]).is_err());
    }

    #[test]
    fn zero_rate_and_empty_data_keep_params() {
        let p = ModelParams::pretrained();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(local_train(&p, &[sample(0.5)], &cfg, 1).unwrap(), p);
        assert_eq!(local_train(&p, &[], &TrainConfig::default(), 1).unwrap(), p);
    }

    #[test]
    fn descent_on_box_residual() {
        let cfg = TrainConfig {
            learning_rate: 0.05,
            local_epochs: 1,
            loss: LossWeights {
                class: 0.0,
                direction: 0.0,
                ..LossWeights::default()
            },
            ..TrainConfig::default()
        };
        let data = [sample(0.8)];
        let mut p = ModelParams::pretrained();
        let mut prev = dataset_loss(&p, &data, &cfg.loss).unwrap().box_loss;
        for step in 0..20 {
            p = local_train(&p, &data, &cfg, step).unwrap();
            let now = dataset_loss(&p, &data, &cfg.loss).unwrap().box_loss;
            assert!(now < prev, "step {step}: {now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn single_vehicle_federation_is_local_training() {
        let cfg = TrainConfig {
            learning_rate: 0.01,
            max_rounds: 3,
            ..TrainConfig::default()
        };
        let data = vec![sample(0.4), sample(-0.2), sample(0.3)];
        let fed = run_federated(std::slice::from_ref(&data), &ModelParams::pretrained(), &cfg, Exec::Sequential).unwrap();
        let mut p = ModelParams::pretrained();
        for r in 0..3 {
            p = local_train(&p, &data, &cfg, round_seed(&cfg, 0, r)).unwrap();
        }
        assert_eq!(fed.params, p);
        assert_eq!(fed.curve.len(), 3);

        let none = TrainConfig { max_rounds: 0, ..cfg };
        let out = run_federated(&[data], &ModelParams::pretrained(), &none, Exec::Sequential).unwrap();
        assert_eq!(out.params, ModelParams::pretrained());
    }

    #[test]
    fn all_vehicles_hold_the_average() {
        let cfg = TrainConfig {
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let sets = vec![vec![sample(0.5)], vec![sample(-0.5)], vec![]];
        let out = run_federated(&sets, &ModelParams::pretrained(), &cfg, Exec::Parallel).unwrap();
        assert!(out.vehicle_params.iter().all(|p| *p == out.params));
        let seq = run_federated(&sets, &ModelParams::pretrained(), &cfg, Exec::Sequential).unwrap();
        assert_eq!(seq.params, out.params);
    }

    #[test]
    fn window_subsampling() {
        let cfg = TrainConfig::default();
        let frames = cfg.window_frames(1010, 20.0);
        assert_eq!(frames.len(), 170);
        assert_eq!(frames[..3], [0, 3, 6]);
        assert_eq!(*frames.last().unwrap(), 507);
    }

    #[test]
    fn curve_csv_has_header() {
        let mut buf = Vec::new();
        write_curve_csv(
            &mut buf,
            &[CurveRow {
                round: 0,
                vehicle: 1,
                total: 1.0,
                class_loss: 0.1,
                angle_loss: 0.2,
                box_loss: 0.3,
                dir_loss: 0.4,
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("round,vehicle,total,class_loss,angle_loss,box_loss,dir_loss\n"));
    }
}
