//! Minibatch Adam training over any differentiable objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SHUFFLE_STREAM;
use crate::autodiff::{grad_check_fn, GradCheckReport, Matrix, Tape, Var};
use crate::error::{invalid, Error, Result};

/// A scalar loss over a batch of sample indices, built from parameter leaves
/// in the order of [`Objective::params`].
pub trait Objective {
    fn num_samples(&self) -> usize;

    fn params(&self) -> Vec<Matrix>;

    fn loss(&self, tape: &mut Tape, params: &[Var], batch: &[usize]) -> Var;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs between learning-rate decays; 0 disables decay.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 20,
            learning_rate: 1e-2,
            decay_every: 20,
            decay_factor: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(invalid("decay_factor must lie in (0, 1]"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("Adam epsilon must be > 0"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            return self.learning_rate;
        }
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &[Matrix], cfg: &TrainConfig) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut [Matrix], grads: &[Matrix], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            for i in 0..p.len() {
                let gi = g.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                p.data_mut()[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: Vec<Matrix>,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Whatever the monitor reported after each epoch.
    pub epoch_metrics: Vec<Option<f64>>,
    /// Probabilities clamped at the epsilon floor over the whole run.
    pub clamped: usize,
}

/// Trains from `init` with a per-epoch shuffle drawn from `seed`.
pub fn train<O: Objective + ?Sized>(
    objective: &O,
    init: Vec<Matrix>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    train_monitored(objective, init, cfg, seed, |_, _| Ok(None))
}

/// [`train`], calling `monitor(epoch, params)` after every epoch.
pub fn train_monitored<O, F>(
    objective: &O,
    init: Vec<Matrix>,
    cfg: &TrainConfig,
    seed: u64,
    mut monitor: F,
) -> Result<TrainOutcome>
where
    O: Objective + ?Sized,
    F: FnMut(usize, &[Matrix]) -> Result<Option<f64>>,
{
    cfg.validate()?;
    let n = objective.num_samples();
    if n == 0 {
        return Err(invalid("training set is empty"));
    }
    let mut params = init;
    let mut adam = Adam::new(&params, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut epoch_metrics = Vec::with_capacity(cfg.epochs);
    let mut clamped = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.learning_rate_at(epoch);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
            let loss = objective.loss(&mut tape, &vars, batch);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            clamped += tape.clamped();
            let grads = tape.backward(loss);
            let grads: Vec<Matrix> = vars
                .iter()
                .zip(&params)
                .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
                .collect();
            if lr > 0.0 {
                adam.update(&mut params, &grads, lr);
            }
            total += value;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
        epoch_metrics.push(monitor(epoch, &params)?);
    }
    Ok(TrainOutcome {
        params,
        epoch_losses,
        epoch_metrics,
        clamped,
    })
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of `objective` on `batch`.
pub fn grad_check<O: Objective + ?Sized>(
    objective: &O,
    batch: &[usize],
    epsilon: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    grad_check_fn(
        &objective.params(),
        |tape, vars| objective.loss(tape, vars, batch),
        epsilon,
        per_param,
        seed,
    )
}
