//! Stochastic gradient descent with momentum, L2 weight decay and a stepped
//! learning rate, driven over an augmented patch pool.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::TrainingPool;
use crate::error::{Error, Result};
use crate::layers::{Mode, Param};
use crate::network::ContextualNet;
use crate::tensor::{Real, Tensor};

/// Stream of the batch-sampling generator; dropout layers use their own.
const SAMPLING_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub base_lr: f64,
    pub gamma: f64,
    /// Iterations at which the rate is multiplied by `gamma`.
    pub step_iters: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub augmentation: bool,
    /// Iterations between observer calls (checkpoints, held-out
    /// accuracy); 0 disables them.
    pub snapshot_every: usize,
    /// Iterations between log rows; the last iteration is always logged.
    pub log_every: usize,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            base_lr: 0.001,
            gamma: 0.1,
            step_iters: vec![33_333, 66_666],
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 10,
            max_iters: 100_000,
            seed: 0,
            augmentation: true,
            snapshot_every: 0,
            log_every: 1,
        }
    }
}

impl TrainPlan {
    /// Default hyperparameters over `max_iters` iterations, with the two rate
    /// steps at the same relative positions (one and two thirds).
    pub fn scaled(max_iters: usize) -> Self {
        let step_iters = if max_iters >= 3 {
            vec![max_iters / 3, 2 * max_iters / 3]
        } else {
            Vec::new()
        };
        TrainPlan {
            step_iters,
            max_iters,
            ..Self::default()
        }
    }

    /// Ten times shorter than the default schedule.
    pub fn fast() -> Self {
        Self::scaled(10_000)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("base_lr {} must be positive", self.base_lr)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("weight_decay {} is negative", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be >= 1"));
        }
        if self.step_iters.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "step_iters {:?} not strictly increasing",
                self.step_iters
            )));
        }
        if let Some(&last) = self.step_iters.last() {
            if last >= self.max_iters {
                return Err(Error::config(format!(
                    "step at iteration {last} is not before max_iters {}",
                    self.max_iters
                )));
            }
        }
        Ok(())
    }
}

/// `base_lr · gamma^k` where `k` counts the steps at or before `iter`.
/// The factor is applied by repeated multiplication.
pub fn lr_at(plan: &TrainPlan, iter: usize) -> f64 {
    plan.step_iters
        .iter()
        .filter(|&&s| s <= iter)
        .fold(plan.base_lr, |lr, _| lr * plan.gamma)
}

/// Classical momentum with L2 decay added to the gradient:
/// `v ← m·v − lr·(g + wd·p)`, `p ← p + v`.
///
/// Every gradient is checked before anything is modified, so a non-finite
/// gradient leaves all parameters and velocities untouched.
pub fn sgd_step<T: Real>(
    params: &mut [&mut Param<T>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    for (i, p) in params.iter().enumerate() {
        if !p.grad.same_shape(&p.value) || !p.velocity.same_shape(&p.value) {
            return Err(Error::shape(format!("parameter {i}: value, grad and velocity differ")));
        }
        if !p.grad.is_finite() {
            return Err(Error::NonFinite("parameter gradient"));
        }
    }
    let (lr, m, wd) = (T::lit(lr), T::lit(momentum), T::lit(weight_decay));
    for p in params.iter_mut() {
        let Param {
            value,
            grad,
            velocity,
        } = &mut **p;
        for ((w, &g), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(velocity.data_mut())
        {
            *v = m * *v - lr * (g + wd * *w);
            *w += *v;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub lr: f64,
    /// Mean cross-entropy of this iteration's batch.
    pub loss: f64,
    pub accuracy: Option<f64>,
    /// Wall time since the start of training.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    /// Mean batch loss over the logged iterations in the final `fraction`
    /// of the run.
    pub fn tail_mean_loss(&self, fraction: f64) -> Option<f64> {
        let last = self.entries.last()?.iteration;
        let first = self.entries.first()?.iteration;
        let cut = last as f64 - fraction * (last - first + 1) as f64;
        let tail: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.iteration as f64 > cut)
            .map(|e| e.loss)
            .collect();
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "iteration,lr,loss,accuracy,seconds")?;
        for e in &self.entries {
            let acc = e.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
            writeln!(out, "{},{:e},{:.8},{},{:.3}", e.iteration, e.lr, e.loss, acc, e.seconds)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        fs::write(path, buf).map_err(|e| Error::file(path, e))
    }
}

/// Runs `plan.max_iters` SGD iterations on `net`. See [`train_with`].
pub fn train<T: Real>(net: &mut ContextualNet<T>, pool: &TrainingPool, plan: &TrainPlan) -> Result<TrainLog> {
    train_with(net, pool, plan, |_, _| Ok(None))
}

/// Runs `plan.max_iters` SGD iterations on `net`.
///
/// Each iteration draws `batch_size` pool entries uniformly with
/// replacement, back-propagates the mean center-pixel cross-entropy with
/// dropout active and applies [`sgd_step`] at [`lr_at`]. Sampling and
/// dropout are seeded from `plan.seed`, so the run is a function of the
/// initial weights, the plan and the pool.
///
/// Every `snapshot_every` iterations (and after the last one) `observer` is
/// called with the number of completed iterations; an accuracy it returns
/// is attached to the log row of that iteration.
pub fn train_with<T: Real>(
    net: &mut ContextualNet<T>,
    pool: &TrainingPool,
    plan: &TrainPlan,
    mut observer: impl FnMut(usize, &ContextualNet<T>) -> Result<Option<f64>>,
) -> Result<TrainLog> {
    plan.validate()?;
    if pool.len() < plan.batch_size {
        return Err(Error::Argument(format!(
            "training pool holds {} patches, batch needs {}",
            pool.len(),
            plan.batch_size
        )));
    }
    if pool.classes() != net.config().classes {
        return Err(Error::Argument(format!(
            "pool has {} classes, network {}",
            pool.classes(),
            net.config().classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(SAMPLING_STREAM);
    net.reseed_dropout(plan.seed);
    let start = Instant::now();
    let mut log = TrainLog::default();
    let mut patches: Vec<Tensor<T>> = Vec::with_capacity(plan.batch_size);
    let mut labels = Vec::with_capacity(plan.batch_size);
    for iter in 0..plan.max_iters {
        patches.clear();
        labels.clear();
        for _ in 0..plan.batch_size {
            let i = rng.random_range(0..pool.len());
            patches.push(pool.patch(i));
            labels.push(pool.label(i));
        }
        net.zero_grad();
        let loss = net.accumulate_gradients(&patches, &labels, Mode::Train)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: iter, loss });
        }
        let lr = lr_at(plan, iter);
        sgd_step(&mut net.params_mut(), lr, plan.momentum, plan.weight_decay)?;

        let done = iter + 1;
        let observe = done == plan.max_iters || (plan.snapshot_every > 0 && done % plan.snapshot_every == 0);
        let accuracy = if observe { observer(done, net)? } else { None };
        if iter % plan.log_every == 0 || done == plan.max_iters || accuracy.is_some() {
            log.entries.push(LogEntry {
                iteration: iter,
                lr,
                loss,
                accuracy,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(log)
}
