//! Adam optimizer and the training loop.

use super::{
    backward, cross_entropy, forward, predict_labels, DiffusionNetParams, MeshOperators, NetConfig,
    Scalar,
};
use crate::error::{Error, Result};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Optimizer and schedule settings. Serialized key names are normative
/// for the pipeline config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Meshes per optimizer step (gradient accumulation).
    pub batch_size: usize,
    pub seed: u64,
    /// Network width C.
    pub width: usize,
    /// Number of diffusion blocks B.
    pub blocks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            epsilon: 1e-8,
            epochs: 25,
            batch_size: 1,
            seed: 0,
            width: 32,
            blocks: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("learningRate", self.learning_rate),
            ("adamBeta1", self.adam_beta1),
            ("adamBeta2", self.adam_beta2),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.adam_beta1 >= 1.0 || self.adam_beta2 >= 1.0 {
            return Err(Error::InvalidArgument("Adam betas must be below 1".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.width == 0 || self.blocks == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batchSize, width, blocks must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Adam moment buffers.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }
}

/// One Adam update with bias correction; deterministic.
pub fn adam_step<T: Scalar>(
    params: &mut DiffusionNetParams<T>,
    grads: &DiffusionNetParams<T>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let b1 = T::from_f64(cfg.adam_beta1);
    let b2 = T::from_f64(cfg.adam_beta2);
    let lr = T::from_f64(cfg.learning_rate);
    let eps = T::from_f64(cfg.epsilon);
    let one = T::one();
    let bc1 = one - T::from_f64(cfg.adam_beta1.powi(state.step as i32));
    let bc2 = one - T::from_f64(cfg.adam_beta2.powi(state.step as i32));
    for i in 0..params.values.len() {
        let g = grads.values[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let mh = state.m[i] / bc1;
        let vh = state.v[i] / bc2;
        params.values[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

/// One mesh ready for training: constant operators, input features,
/// ground-truth labels.
pub struct TrainSample<T: Scalar> {
    pub ops: MeshOperators<T>,
    pub features: Array2<T>,
    pub labels: Vec<u8>,
    /// Identifier carried through logs.
    pub name: String,
}

/// Per-epoch log record.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_miou: f64,
}

pub struct TrainOutcome<T: Scalar> {
    pub params: DiffusionNetParams<T>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_miou: f64,
    pub class_weights: [f64; 2],
}

/// Inverse-class-frequency weights over the training set.
pub fn inverse_frequency_weights<T: Scalar>(samples: &[TrainSample<T>]) -> [f64; 2] {
    let mut counts = [0usize; 2];
    for s in samples {
        for &l in &s.labels {
            counts[l as usize] += 1;
        }
    }
    let total = (counts[0] + counts[1]).max(1) as f64;
    [
        if counts[0] == 0 { 1.0 } else { total / (2.0 * counts[0] as f64) },
        if counts[1] == 0 { 1.0 } else { total / (2.0 * counts[1] as f64) },
    ]
}

/// Mean intersection-over-union for binary labels (shared with the
/// evaluation pipeline).
pub fn miou(pred: &[u8], gt: &[u8]) -> Result<f64> {
    crate::segpipe::miou(pred, gt)
}

/// Mean mIoU of the current parameters over a sample set.
pub fn evaluate_miou<T: Scalar>(
    params: &DiffusionNetParams<T>,
    samples: &[TrainSample<T>],
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for s in samples {
        let (logits, _) = forward(params, &s.ops, &s.features)?;
        let pred = predict_labels(&logits);
        acc += miou(&pred, &s.labels)?;
    }
    Ok(acc / samples.len() as f64)
}

/// Train on `train_set`, tracking held-out mIoU on `val_set` each epoch;
/// returns the best-validation parameters (final parameters when the
/// validation set is empty). Epoch order is shuffled from the seed; one
/// Adam step per `batch_size` meshes. Aborts on NaN loss with
/// diagnostics.
pub fn train<T: Scalar>(
    train_set: &[TrainSample<T>],
    val_set: &[TrainSample<T>],
    cfg: &TrainConfig,
    d_in: usize,
    k_eig: usize,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    for s in train_set.iter().chain(val_set) {
        if s.features.ncols() != d_in {
            return Err(Error::ConfigMismatch(format!(
                "sample {} has {} feature channels, expected {d_in}",
                s.name,
                s.features.ncols()
            )));
        }
    }
    let net_cfg = NetConfig {
        d_in,
        width: cfg.width,
        blocks: cfg.blocks,
        k_eig,
    };
    let mut params = DiffusionNetParams::<T>::init(net_cfg, cfg.seed);
    let mut state = AdamState::<T>::new(params.values.len());
    let class_weights = inverse_frequency_weights(train_set);

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, DiffusionNetParams<T>)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut accum: Option<DiffusionNetParams<T>> = None;
        let mut in_batch = 0usize;
        for (step, &si) in order.iter().enumerate() {
            let s = &train_set[si];
            let (logits, cache) = forward(&params, &s.ops, &s.features)?;
            let (loss, dlogits) = cross_entropy(&logits, &s.labels, class_weights)?;
            if !loss.is_finite() {
                let pnorm: f64 = params.values.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
                return Err(Error::TrainingDiverged(format!(
                    "loss {loss} at epoch {epoch} step {step} (sample {}); |params| = {pnorm:.3e}, lr = {}",
                    s.name, cfg.learning_rate
                )));
            }
            epoch_loss += loss;
            let grads = backward(&params, &s.ops, &cache, &dlogits);
            match &mut accum {
                None => accum = Some(grads),
                Some(a) => {
                    for (av, gv) in a.values.iter_mut().zip(&grads.values) {
                        *av += *gv;
                    }
                }
            }
            in_batch += 1;
            if in_batch == cfg.batch_size || step + 1 == order.len() {
                let mut g = accum.take().expect("accumulated gradients");
                let scale = T::from_f64(1.0 / in_batch as f64);
                for v in &mut g.values {
                    *v *= scale;
                }
                adam_step(&mut params, &g, &mut state, cfg);
                in_batch = 0;
            }
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_miou = evaluate_miou(&params, val_set)?;
        log.push(EpochLog {
            epoch,
            train_loss,
            val_miou,
        });
        let better = match &best {
            None => true,
            Some((_, b, _)) => val_miou > *b,
        };
        if better {
            best = Some((epoch, val_miou, params.clone()));
        }
    }

    let (best_epoch, best_val_miou, best_params) = if val_set.is_empty() {
        (cfg.epochs - 1, 0.0, params)
    } else {
        best.expect("at least one epoch ran")
    };
    Ok(TrainOutcome {
        params: best_params,
        log,
        best_epoch,
        best_val_miou,
        class_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::tests::tiny_setup;

    fn quad_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_gradient_no_update() {
        let net_cfg = NetConfig {
            d_in: 2,
            width: 4,
            blocks: 1,
            k_eig: 5,
        };
        let mut params = DiffusionNetParams::<f64>::init(net_cfg, 1);
        let before = params.values.clone();
        let grads = DiffusionNetParams::<f64>::zeros(net_cfg);
        let mut state = AdamState::new(params.values.len());
        adam_step(&mut params, &grads, &mut state, &quad_cfg());
        assert_eq!(params.values, before);
    }

    /// With a constant gradient the Adam step approaches lr * sign(g).
    #[test]
    fn constant_gradient_limit() {
        let net_cfg = NetConfig {
            d_in: 1,
            width: 2,
            blocks: 1,
            k_eig: 3,
        };
        let mut params = DiffusionNetParams::<f64>::zeros(net_cfg);
        let mut grads = DiffusionNetParams::<f64>::zeros(net_cfg);
        for (i, g) in grads.values.iter_mut().enumerate() {
            *g = if i % 2 == 0 { 0.35 } else { -2.0 };
        }
        let cfg = quad_cfg();
        let mut state = AdamState::new(params.values.len());
        for _ in 0..200 {
            adam_step(&mut params, &grads, &mut state, &cfg);
        }
        let before = params.values.clone();
        adam_step(&mut params, &grads, &mut state, &cfg);
        for (i, (b, a)) in before.iter().zip(&params.values).enumerate() {
            let step = b - a;
            let expect = cfg.learning_rate * grads.values[i].signum();
            assert!(
                (step - expect).abs() < 0.05 * cfg.learning_rate,
                "param {i}: step {step} vs {expect}"
            );
        }
    }

    /// Scalar-problem oracle: Adam on a quadratic bowl decreases the loss
    /// monotonically after warmup.
    #[test]
    fn quadratic_bowl_descent() {
        // reuse the parameter vector as a plain point; loss = |p - c|^2 / 2
        let net_cfg = NetConfig {
            d_in: 1,
            width: 2,
            blocks: 1,
            k_eig: 3,
        };
        let mut params = DiffusionNetParams::<f64>::zeros(net_cfg);
        let target: Vec<f64> = (0..params.values.len()).map(|i| (i as f64 * 0.7).sin()).collect();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            ..quad_cfg()
        };
        let mut state = AdamState::new(params.values.len());
        let loss_of = |p: &DiffusionNetParams<f64>| -> f64 {
            p.values
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b) / 2.0)
                .sum()
        };
        let mut prev = f64::INFINITY;
        let mut best = f64::INFINITY;
        for step in 0..300 {
            let mut grads = DiffusionNetParams::<f64>::zeros(net_cfg);
            for i in 0..grads.values.len() {
                grads.values[i] = params.values[i] - target[i];
            }
            adam_step(&mut params, &grads, &mut state, &cfg);
            let l = loss_of(&params);
            // monotone descent after warmup until Adam's oscillation
            // floor (amplitude ~ lr per coordinate) is reached
            if step > 5 && prev > 0.2 {
                assert!(l <= prev + 1e-12, "step {step}: {l} > {prev}");
            }
            prev = l;
            best = best.min(l);
        }
        assert!(best < 0.05, "best loss {best}");
    }

    fn toy_samples(seeds: &[u64], k: usize) -> Vec<TrainSample<f64>> {
        seeds
            .iter()
            .map(|&seed| {
                let (mesh, ops) = tiny_setup(60, k, seed);
                // learnable geometric rule with a margin: the sign of a
                // linear functional of the position, samples kept away
                // from the decision plane
                let score = |p: &nalgebra::Vector3<f64>| 0.31 * p.x - 0.47 * p.y + p.z;
                let mut scores: Vec<f64> = mesh.positions().iter().map(score).collect();
                let mut sorted = scores.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let median = sorted[sorted.len() / 2];
                for v in &mut scores {
                    *v -= median;
                }
                let labels: Vec<u8> = scores.iter().map(|&z| (z > 0.2) as u8).collect();
                let features = Array2::from_shape_fn((mesh.vertex_count(), 4), |(i, j)| {
                    if j < 3 {
                        mesh.positions()[i][j]
                    } else {
                        // margin channel makes the task separable with slack
                        if scores[i] > 0.2 { 1.0 } else { -1.0 }
                    }
                });
                TrainSample {
                    ops,
                    features,
                    labels,
                    name: format!("toy{seed}"),
                }
            })
            .collect()
    }

    #[test]
    fn overfits_toy_problem() {
        let train_set = toy_samples(&[1, 2], 8);
        let cfg = TrainConfig {
            learning_rate: 2e-2,
            epochs: 60,
            width: 8,
            blocks: 2,
            seed: 4,
            ..TrainConfig::default()
        };
        let out = train(&train_set, &[], &cfg, 4, 8).unwrap();
        let train_miou = evaluate_miou(&out.params, &train_set).unwrap();
        assert!(train_miou >= 0.95, "train mIoU {train_miou}");
        let last = out.log.last().unwrap();
        assert!(last.train_loss < out.log[0].train_loss);
    }

    #[test]
    fn seed_identical_runs_match() {
        let train_set = toy_samples(&[5, 6], 8);
        let val_set = toy_samples(&[7], 8);
        let cfg = TrainConfig {
            epochs: 5,
            width: 8,
            blocks: 2,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&train_set, &val_set, &cfg, 4, 8).unwrap();
        let b = train(&train_set, &val_set, &cfg, 4, 8).unwrap();
        assert_eq!(a.params.values, b.params.values);
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.val_miou.to_bits(), y.val_miou.to_bits());
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.learning_rate = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
    }
}
