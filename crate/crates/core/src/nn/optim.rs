use std::fmt;

use crate::error::{Error, Result};

use super::{Params, Real};

/// Learning rate at or below which training stops.
pub const MIN_LR: f64 = 1e-4;

/// L2 norm over every gradient in the model, accumulated in f64.
pub fn global_grad_norm<T: Real, M: Params<T> + ?Sized>(model: &M) -> f64 {
    let mut sq = 0.0f64;
    model.visit(&mut |p| {
        for g in p.grad.data() {
            let g = g.as_f64();
            sq += g * g;
        }
    });
    sq.sqrt()
}

/// Plain SGD: clip the global gradient norm to `clip_norm`, then
/// `value -= lr * grad`. Returns the pre-clip norm.
pub fn sgd_step<T: Real, M: Params<T> + ?Sized>(model: &mut M, lr: f64, clip_norm: f64) -> Result<f64> {
    let mut bad = None;
    model.visit(&mut |p| {
        if bad.is_none() && !p.grad.is_finite() {
            bad = Some(p.name.clone());
        }
    });
    if let Some(name) = bad {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    let norm = global_grad_norm(model);
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    let step = T::lit(lr * scale);
    if step == T::zero() {
        return Ok(norm);
    }
    model.visit_mut(&mut |p| {
        for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *v -= step * *g;
        }
    });
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricDirection {
    HigherIsBetter,
    LowerIsBetter,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnnealEvent {
    Improved,
    NoImprovement,
    Annealed { lr: f64 },
    /// The learning rate fell to [`MIN_LR`]; training should end.
    Stop { lr: f64 },
}

/// Learning-rate schedule state: anneal on a development-metric plateau.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub lr: f64,
    pub anneal_factor: f64,
    pub patience: usize,
    pub best_dev_metric: f64,
    pub epochs_since_improve: usize,
    pub clip_norm: f64,
    pub direction: MetricDirection,
}

impl SgdState {
    pub fn new(
        lr: f64,
        anneal_factor: f64,
        patience: usize,
        clip_norm: f64,
        direction: MetricDirection,
    ) -> Result<Self> {
        if !(lr > 0.0) || !(anneal_factor > 1.0) || !(clip_norm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need lr > 0, anneal_factor > 1, clip_norm > 0 (got {lr}, {anneal_factor}, {clip_norm})"
            )));
        }
        let best_dev_metric = match direction {
            MetricDirection::HigherIsBetter => f64::NEG_INFINITY,
            MetricDirection::LowerIsBetter => f64::INFINITY,
        };
        Ok(SgdState {
            lr,
            anneal_factor,
            patience,
            best_dev_metric,
            epochs_since_improve: 0,
            clip_norm,
            direction,
        })
    }

    fn improves(&self, metric: f64) -> bool {
        match self.direction {
            MetricDirection::HigherIsBetter => metric > self.best_dev_metric,
            MetricDirection::LowerIsBetter => metric < self.best_dev_metric,
        }
    }

    pub fn maybe_anneal(&mut self, dev_metric: f64) -> AnnealEvent {
        if self.improves(dev_metric) {
            self.best_dev_metric = dev_metric;
            self.epochs_since_improve = 0;
            return AnnealEvent::Improved;
        }
        self.epochs_since_improve += 1;
        if self.epochs_since_improve < self.patience.max(1) {
            return AnnealEvent::NoImprovement;
        }
        self.epochs_since_improve = 0;
        self.lr /= self.anneal_factor;
        if self.lr <= MIN_LR {
            AnnealEvent::Stop { lr: self.lr }
        } else {
            AnnealEvent::Annealed { lr: self.lr }
        }
    }
}

/// One line of a training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Ordered `(key, value)` metrics.
    pub metrics: Vec<(String, f64)>,
    pub event: String,
}

impl EpochRecord {
    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={}", self.epoch)?;
        for (k, v) in &self.metrics {
            write!(f, " {k}={v:.6}")?;
        }
        write!(f, " lr={} event={}", self.lr, self.event)
    }
}

/// Per-epoch records rendered as line-delimited `key=value` text.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn push(&mut self, r: EpochRecord) {
        self.records.push(r);
    }

    pub fn render(&self) -> String {
        self.records.iter().map(|r| format!("{r}\n")).collect()
    }
}

impl fmt::Display for AnnealEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnnealEvent::Improved => f.write_str("improved"),
            AnnealEvent::NoImprovement => f.write_str("no_improvement"),
            AnnealEvent::Annealed { .. } => f.write_str("annealed"),
            AnnealEvent::Stop { .. } => f.write_str("stop"),
        }
    }
}
