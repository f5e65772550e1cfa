use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy of `softmax(y_out)` at every step.
    #[default]
    CePerStep,
    /// Mean squared error between `yhat_out` and a target trace.
    MseOnYhat,
    /// `beta(t) * MSE(yhat_out, 0) + (1 - beta(t)) * CE`, `beta(t) = beta0 * decay^t`.
    CeWarmup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub beta0: f64,
    pub beta_decay: f64,
    /// Gain-loss constant `G`.
    pub gain_loss: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::CePerStep,
            beta0: 1.0,
            beta_decay: 0.99,
            gain_loss: 0.0,
        }
    }
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta0) {
            return Err(Error::Config(format!("beta0 = {}", self.beta0)));
        }
        if !(self.beta_decay > 0.0 && self.beta_decay < 1.0) {
            return Err(Error::Config(format!("beta_decay = {}", self.beta_decay)));
        }
        if !(self.gain_loss >= 0.0) {
            return Err(Error::Config(format!("gain_loss = {}", self.gain_loss)));
        }
        Ok(())
    }

    pub fn warmup_weight(&self, t: usize) -> f64 {
        self.beta0 * self.beta_decay.powi(t as i32)
    }
}

/// Per-step supervision.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Class(usize),
    Trace(ArrayView1<'a, f64>),
}

/// Owned form of [`Target`].
#[derive(Debug, Clone, PartialEq)]
pub enum StepTarget {
    Class(usize),
    Trace(Array1<f64>),
}

impl StepTarget {
    pub fn as_target(&self) -> Target<'_> {
        match self {
            StepTarget::Class(c) => Target::Class(*c),
            StepTarget::Trace(t) => Target::Trace(t.view()),
        }
    }
}

fn cross_entropy(y: ArrayView1<f64>, label: usize) -> Result<(f64, Array1<f64>)> {
    if label >= y.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: y.len(),
        });
    }
    let max = y.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = y.mapv(|v| (v - max).exp());
    let total = exp.sum();
    let loss = total.ln() + max - y[label];
    let mut grad = exp / total;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

fn mean_squared(pred: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} outputs against a {}-wide target",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let diff = &pred - &target;
    let loss = diff.mapv(|d| d * d).sum() / n;
    Ok((loss, diff * (2.0 / n)))
}

/// Loss at step `t` and its derivative with respect to `y_out`.
///
/// Terms that read `yhat_out` are differentiated with `d yhat / d y = 1`.
pub fn loss_step(
    cfg: &LossConfig,
    y_out: ArrayView1<f64>,
    yhat_out: ArrayView1<f64>,
    target: Target<'_>,
    t: usize,
) -> Result<(f64, Array1<f64>)> {
    match (cfg.kind, target) {
        (LossKind::CePerStep, Target::Class(label)) => cross_entropy(y_out, label),
        (LossKind::MseOnYhat, Target::Trace(trace)) => mean_squared(yhat_out, trace),
        (LossKind::CeWarmup, Target::Class(label)) => {
            let beta = cfg.warmup_weight(t);
            let (ce, g_ce) = cross_entropy(y_out, label)?;
            let zeros = Array1::zeros(yhat_out.len());
            let (mse, g_mse) = mean_squared(yhat_out, zeros.view())?;
            Ok((beta * mse + (1.0 - beta) * ce, g_mse * beta + g_ce * (1.0 - beta)))
        }
        (kind, _) => Err(Error::InvalidArgument(format!("target type does not fit loss {kind:?}"))),
    }
}
