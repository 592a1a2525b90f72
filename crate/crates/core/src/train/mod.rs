//! Adam training of the unrolled network, checkpoints and gradient checking.

mod checkpoint;
mod gradcheck;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::rlne;
use crate::net::{network_backward, network_forward, xavier_init, GradientSet, NetworkParams, NetworkShape, Variant};
use crate::numerics::ComplexImage;
use crate::par::Exec;
use crate::sim::Sample;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shape: NetworkShape,
}

impl TrainConfig {
    pub const DEFAULT_BATCH_SIZE: usize = 1;

    pub fn new(shape: NetworkShape, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs,
            batch_size: Self::DEFAULT_BATCH_SIZE,
            seed,
            shape,
        }
    }

    /// Full-size network, 150 epochs.
    pub fn full(variant: Variant, seed: u64) -> Self {
        Self::new(NetworkShape::full(variant), 150, seed)
    }

    /// Small network that trains on a laptop CPU in minutes.
    pub fn desk(variant: Variant, seed: u64) -> Self {
        Self::new(NetworkShape::desk(variant), 20, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        self.shape.validate()
    }
}

/// First and second moment estimates, congruent with the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        AdamState {
            m: GradientSet::zeros_like(params),
            v: GradientSet::zeros_like(params),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place. Returns the largest absolute
/// parameter change.
pub fn adam_step(params: &mut NetworkParams, grads: &GradientSet, state: &mut AdamState, cfg: &TrainConfig) -> Result<f64> {
    if !grads.congruent_with(params) || !state.m.congruent_with(params) || !state.v.congruent_with(params) {
        return Err(Error::shape("gradients or optimizer state do not match the parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let mut max_update = 0.0f64;
    let g_all = grads.tensors();
    let m_all = state.m.tensors_mut();
    let v_all = state.v.tensors_mut();
    for (((p, (_, g)), m), v) in params.tensors_mut().into_iter().zip(g_all).zip(m_all).zip(v_all) {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let step = cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
            p[i] -= step;
            max_update = max_update.max(step.abs());
        }
    }
    Ok(max_update)
}

/// Summed loss and summed gradients over `samples`, reduced in sample order.
pub fn batch_gradients(params: &NetworkParams, samples: &[&Sample], exec: Exec) -> Result<(f64, GradientSet)> {
    let per_sample = exec.try_map(samples, |s| network_backward(&s.kspace, &s.coils, &s.mask, params, &s.truth))?;
    let mut total = GradientSet::zeros_like(params);
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += l;
        total.add_assign(g);
    }
    Ok((loss, total))
}

/// The network's final output for one sample.
pub fn reconstruct_net(sample: &Sample, params: &NetworkParams) -> Result<ComplexImage> {
    let mut outs = network_forward(&sample.kspace, &sample.coils, &sample.mask, params)?;
    outs.pop().ok_or_else(|| Error::invalid("network has no blocks"))
}

/// Mean RLNE of the network over `samples`.
pub fn mean_rlne(samples: &[Sample], params: &NetworkParams, exec: Exec) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to score".into()));
    }
    let errs = exec.try_map(samples, |s| rlne(&s.truth, &reconstruct_net(s, params)?))?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Mean per-sample loss over each epoch, measured before each update.
    pub epoch_loss: Vec<f64>,
    /// Mean validation RLNE after each epoch (empty without validation data).
    pub val_rlne: Vec<f64>,
    /// Largest single-parameter Adam update seen during the run.
    pub max_update: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub state: AdamState,
    pub history: TrainingHistory,
}

/// Trains from Xavier initialization seeded by `cfg.seed`.
pub fn train(dataset: &[Sample], validation: &[Sample], cfg: &TrainConfig, exec: Exec) -> Result<TrainOutcome> {
    cfg.validate()?;
    let params = xavier_init(&cfg.shape, cfg.seed)?;
    let state = AdamState::new(&params);
    train_from(params, state, dataset, validation, cfg, exec, |_, _| {})
}

/// Runs `cfg.epochs` epochs starting from the given parameters and optimizer
/// state. `on_epoch` is called with the epoch index and the history so far.
pub fn train_from(
    mut params: NetworkParams,
    mut state: AdamState,
    dataset: &[Sample],
    validation: &[Sample],
    cfg: &TrainConfig,
    exec: Exec,
    mut on_epoch: impl FnMut(usize, &TrainingHistory),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if params.shape != cfg.shape {
        return Err(Error::shape("parameters do not match the configured network shape"));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = TrainingHistory::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (loss, grads) = batch_gradients(&params, &batch, exec)?;
            epoch_loss += loss;
            let upd = adam_step(&mut params, &grads, &mut state, cfg)?;
            history.max_update = history.max_update.max(upd);
        }
        history.epoch_loss.push(epoch_loss / dataset.len() as f64);
        if !validation.is_empty() {
            history.val_rlne.push(mean_rlne(validation, &params, exec)?);
        }
        on_epoch(epoch, &history);
    }
    Ok(TrainOutcome { params, state, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, GAMMA_INIT};
    use crate::sim::{generate_dataset, DatasetSpec};

    fn scalar_shape() -> NetworkShape {
        NetworkShape {
            blocks: 1,
            layers: 1,
            channels: 2,
            kernel: 1,
            variant: Variant::ResNet,
            activation: Activation::Relu,
        }
    }

    fn tiny_cfg(epochs: usize, seed: u64) -> TrainConfig {
        let shape = NetworkShape {
            blocks: 2,
            layers: 2,
            channels: 4,
            kernel: 3,
            variant: Variant::ResNet,
            activation: Activation::Relu,
        };
        let mut cfg = TrainConfig::new(shape, epochs, seed);
        cfg.batch_size = 3;
        cfg
    }

    fn tiny_data(count: usize, seed: u64) -> Vec<Sample> {
        let mut spec = DatasetSpec::desk(count, seed);
        spec.size = 16;
        spec.coils = 2;
        spec.center_lines = 2;
        generate_dataset(&spec, Exec::Sequential).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = TrainConfig::new(scalar_shape(), 1, 0);
        let mut p = xavier_init(&cfg.shape, 1).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let g = GradientSet::zeros_like(&p);
        assert_eq!(adam_step(&mut p, &g, &mut st, &cfg).unwrap(), 0.0);
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_is_learning_rate() {
        let cfg = TrainConfig::new(scalar_shape(), 1, 0);
        let mut p = NetworkParams::zeros(cfg.shape).unwrap();
        let mut st = AdamState::new(&p);
        let mut g = GradientSet::zeros_like(&p);
        for t in g.tensors_mut() {
            t.fill(1.0);
        }
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        let delta = p.blocks[0].gamma - GAMMA_INIT;
        assert!((delta + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!((delta + 0.001).abs() < 1e-8);
    }

    #[test]
    fn two_steps_match_scalar_recurrence() {
        let cfg = TrainConfig::new(scalar_shape(), 1, 0);
        let mut p = NetworkParams::zeros(cfg.shape).unwrap();
        let mut st = AdamState::new(&p);
        let mut g = GradientSet::zeros_like(&p);
        let gval = 0.37;
        for t in g.tensors_mut() {
            t.fill(gval);
        }
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();

        let (mut x, mut m, mut v) = (GAMMA_INIT, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * gval;
            v = 0.999 * v + 0.001 * gval * gval;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.001 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p.blocks[0].gamma - x).abs() < 1e-14);
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let cfg = TrainConfig::new(scalar_shape(), 1, 0);
        let mut p = NetworkParams::zeros(cfg.shape).unwrap();
        let other = NetworkParams::zeros(tiny_cfg(1, 0).shape).unwrap();
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &GradientSet::zeros_like(&other), &mut st, &cfg).is_err());
        let mut st = AdamState::new(&other);
        let g = GradientSet::zeros_like(&p);
        assert!(adam_step(&mut p, &g, &mut st, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let good = tiny_cfg(1, 0);
        assert!(good.validate().is_ok());
        for f in [
            |c: &mut TrainConfig| c.learning_rate = 0.0,
            |c: &mut TrainConfig| c.beta1 = 1.0,
            |c: &mut TrainConfig| c.beta2 = -0.1,
            |c: &mut TrainConfig| c.epochs = 0,
            |c: &mut TrainConfig| c.batch_size = 0,
        ] {
            let mut c = good.clone();
            f(&mut c);
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(train(&[], &[], &tiny_cfg(1, 0), Exec::Sequential), Err(Error::Empty(_))));
    }

    #[test]
    fn zero_loss_dataset_is_a_fixed_point() {
        let mut data = tiny_data(2, 3);
        for s in data.iter_mut() {
            let full = crate::sense::SamplingMask::full(16, 16);
            s.kspace = crate::sense::sense_forward(&s.truth, &s.coils, &full).unwrap();
            s.mask = full;
        }
        let cfg = tiny_cfg(1, 0);
        let params = NetworkParams::zeros(cfg.shape).unwrap();
        let out = train_from(params.clone(), AdamState::new(&params), &data, &[], &cfg, Exec::Sequential, |_, _| {}).unwrap();
        assert!(out.history.epoch_loss[0] < 1e-20);
        for ((_, a), (_, b)) in out.params.tensors().into_iter().zip(params.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_sequential_matches_parallel() {
        let data = tiny_data(5, 4);
        let val = tiny_data(2, 99);
        let cfg = tiny_cfg(2, 7);
        let a = train(&data, &val, &cfg, Exec::Sequential).unwrap();
        let b = train(&data, &val, &cfg, Exec::Sequential).unwrap();
        let c = train(&data, &val, &cfg, Exec::Parallel).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.params, c.params);
        assert_eq!(a.history, c.history);
        assert_eq!(a.history.val_rlne.len(), 2);
        assert_eq!(a.state.step, 4);
        assert!(a.history.max_update <= cfg.learning_rate / (1.0 - cfg.beta1));
        let d = train(&data, &val, &tiny_cfg(2, 8), Exec::Sequential).unwrap();
        assert_ne!(a.params, d.params);
    }

    #[test]
    fn batch_gradient_is_sum_of_sample_gradients() {
        let data = tiny_data(3, 5);
        let params = xavier_init(&tiny_cfg(1, 0).shape, 2).unwrap();
        let refs: Vec<&Sample> = data.iter().collect();
        let (loss, g) = batch_gradients(&params, &refs, Exec::Parallel).unwrap();
        let mut expect = GradientSet::zeros_like(&params);
        let mut el = 0.0;
        for s in &data {
            let (l, gi) = network_backward(&s.kspace, &s.coils, &s.mask, &params, &s.truth).unwrap();
            el += l;
            expect.add_assign(&gi);
        }
        assert_eq!(loss, el);
        assert_eq!(g, expect);
    }
}
