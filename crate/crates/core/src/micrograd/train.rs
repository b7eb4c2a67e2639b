//! Minibatch SGD over per-sample gradient functions.
//!
//! Per-sample gradients may be computed on any number of threads; they are
//! summed in sample order, so the result is bit-identical for every thread
//! count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::micrograd::graph::Graph;
use crate::micrograd::optim::sgd_step;
use crate::micrograd::params::ParameterSet;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub clip_norm: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Learning-rate factor applied after `patience` epochs without a new best loss.
    pub lr_decay: f64,
    pub patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return arg("batch size must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return arg("learning rate must be finite and non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return arg("lr_decay must be in (0, 1]");
        }
        Ok(())
    }
}

/// Mutable optimizer state, enough to resume training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub best_loss: f64,
    /// Epochs since the best loss last improved.
    pub stale: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            lr: cfg.lr,
            best_loss: f64::INFINITY,
            stale: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean total loss over the epoch's samples.
    pub loss: f64,
    /// Mean of each loss component, in the order the sample function reports them.
    pub components: Vec<f64>,
    pub lr: f64,
    /// Log evaluations that hit the clamp during the epoch.
    pub clamped: usize,
}

/// What one sample contributes: gradients in parameter order (`None` for
/// parameters it does not touch), its loss, loss components, and clamp hits.
pub struct SampleGrad {
    pub grads: Vec<Option<Tensor>>,
    pub loss: f64,
    pub components: Vec<f64>,
    pub clamped: usize,
}

impl SampleGrad {
    /// Collects the parameter gradients of a graph after `backward`.
    pub fn from_graph(g: &Graph, params: &ParameterSet, loss: f64, components: Vec<f64>) -> Self {
        Self {
            grads: params.names().map(|n| g.param_grad(n).cloned()).collect(),
            loss,
            components,
            clamped: g.clamped_logs(),
        }
    }
}

/// Runs epochs `state.epoch + 1 ..= cfg.epochs`.
///
/// Each epoch visits the `n` samples in an order shuffled from
/// `(cfg.seed, epoch)`, averages gradients over each batch, and takes one
/// clipped SGD step per batch. After `cfg.patience` epochs whose mean loss
/// does not beat the best so far, the learning rate is multiplied by
/// `cfg.lr_decay`.
/// `on_epoch` sees every epoch's log, e.g. to write checkpoints.
pub fn train_loop<F, C>(
    params: &mut ParameterSet,
    n: usize,
    cfg: &TrainConfig,
    state: &mut TrainState,
    sample_fn: F,
    mut on_epoch: C,
) -> Result<Vec<EpochLog>>
where
    F: Fn(&ParameterSet, usize) -> Result<SampleGrad> + Sync,
    C: FnMut(&EpochLog, &ParameterSet, &TrainState) -> Result<()>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let names: Vec<String> = params.names().map(String::from).collect();
    let mut logs = Vec::new();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)));
        let mut total = 0.0;
        let mut comps: Vec<f64> = Vec::new();
        let mut clamped = 0;
        for batch in order.chunks(cfg.batch) {
            let frozen: &ParameterSet = params;
            let results: Vec<SampleGrad> = batch
                .par_iter()
                .map(|&i| sample_fn(frozen, i))
                .collect::<Result<_>>()?;
            let k = 1.0 / batch.len() as f64;
            for r in &results {
                if !r.loss.is_finite() {
                    return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
                }
                total += r.loss;
                if comps.len() < r.components.len() {
                    comps.resize(r.components.len(), 0.0);
                }
                for (a, b) in comps.iter_mut().zip(&r.components) {
                    *a += b;
                }
                clamped += r.clamped;
                for (name, g) in names.iter().zip(&r.grads) {
                    if let Some(g) = g {
                        let mut g = g.clone();
                        g.scale(k);
                        params.accumulate_grad(name, &g)?;
                    }
                }
            }
            sgd_step(params, state.lr, cfg.clip_norm)?;
        }
        let log = EpochLog {
            epoch,
            loss: total / n as f64,
            components: comps.iter().map(|c| c / n as f64).collect(),
            lr: state.lr,
            clamped,
        };
        if log.loss < state.best_loss {
            state.best_loss = log.loss;
            state.stale = 0;
        } else {
            state.stale += 1;
            if state.stale >= cfg.patience.max(1) {
                state.lr *= cfg.lr_decay;
                state.stale = 0;
            }
        }
        state.epoch = epoch;
        on_epoch(&log, params, state)?;
        logs.push(log);
    }
    Ok(logs)
}
