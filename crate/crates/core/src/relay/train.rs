//! Training loop for the convolutional denoiser.

use std::io::Write;

use rand::Rng;

use super::ToyDataset;
use crate::denoiser::{batch_loss, batch_loss_and_grad, ConvDenoiserParams, LossSample};
use crate::error::{invalid, Error, Result};
use crate::rng::{open_unit, RandomSource};
use crate::schedule::ScheduleConfig;

/// Adam optimiser state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Hidden channels of both convolutional layers.
    pub hidden: usize,
    /// Probability of dropping the class label (unconditional training for guidance).
    pub label_dropout: f64,
    /// Size of the fixed evaluation set.
    pub eval_size: usize,
    /// Evaluate every this many steps (0: only at start and end).
    pub eval_every: usize,
    pub schedule: ScheduleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch: 32,
            lr: 1e-3,
            hidden: 16,
            label_dropout: 0.1,
            eval_size: 256,
            eval_every: 50,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.steps == 0 {
            return Err(invalid("train_steps", "must be at least 1"));
        }
        if self.batch == 0 || self.eval_size == 0 {
            return Err(invalid(
                "batch",
                "batch and evaluation sizes must be positive",
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid("lr", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.label_dropout) {
            return Err(invalid("label_dropout", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub batch_loss: f64,
    /// Loss on the fixed evaluation set after this step's update, at evaluation steps.
    pub eval_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ConvDenoiserParams,
    pub log: Vec<TrainLogRow>,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
}

impl TrainOutcome {
    pub fn write_log_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,batch_loss,eval_loss")?;
        for r in &self.log {
            match r.eval_loss {
                Some(e) => writeln!(out, "{},{},{}", r.step, r.batch_loss, e)?,
                None => writeln!(out, "{},{},", r.step, r.batch_loss)?,
            }
        }
        Ok(())
    }
}

fn draw_batch<R: Rng + ?Sized>(
    data: &ToyDataset,
    n: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<LossSample>> {
    (0..n)
        .map(|_| {
            let (x, label) = data.sample(rng)?;
            let keep = rng.random::<f64>() >= cfg.label_dropout;
            let t = open_unit(rng);
            LossSample::draw(&x, t, &cfg.schedule, label.filter(|_| keep), rng)
        })
        .collect()
}

/// Minimises the denoising loss with `t ~ U(0, 1)` by Adam.
///
/// Step `s` draws its batch from stream `s` of a fork of `source`, and the
/// evaluation set (fixed images, times and noise) from another fork, so a
/// seed fully determines the loss curve. A non-finite loss aborts training.
pub fn train_toy(
    data: &ToyDataset,
    cfg: &TrainConfig,
    source: RandomSource,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    let mut params = ConvDenoiserParams::init(
        cfg.hidden,
        data.classes(),
        cfg.schedule.sigma_data,
        &mut source.fork(0).stream(0),
    )?;
    let eval = draw_batch(data, cfg.eval_size, cfg, &mut source.fork(2).stream(0))?;
    let batches = source.fork(1);
    let mut opt = Adam::new(params.len(), cfg.lr);
    let initial_eval_loss = batch_loss(&params, &eval)?;
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = draw_batch(data, cfg.batch, cfg, &mut batches.stream(step as u64))?;
        let (loss, grad) = batch_loss_and_grad(&params, &batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                reason: format!("batch loss {loss}"),
            });
        }
        opt.step(params.values_mut(), &grad);
        let last = step + 1 == cfg.steps;
        let eval_loss = if step == 0 || last || (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
            Some(batch_loss(&params, &eval)?)
        } else {
            None
        };
        if let Some(e) = eval_loss {
            if !e.is_finite() {
                return Err(Error::Diverged {
                    step,
                    reason: format!("evaluation loss {e}"),
                });
            }
        }
        log.push(TrainLogRow {
            step,
            batch_loss: loss,
            eval_loss,
        });
    }
    let final_eval_loss = log
        .last()
        .and_then(|r| r.eval_loss)
        .unwrap_or(initial_eval_loss);
    Ok(TrainOutcome {
        params,
        log,
        initial_eval_loss,
        final_eval_loss,
    })
}
