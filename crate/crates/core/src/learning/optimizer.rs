use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::backward::GradientBuffers;
use crate::network::Network;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    /// Adam-style first and second moment estimates.
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Schedule {
    #[default]
    None,
    /// Multiply the rate by `gamma` every `step_size` epochs.
    Step { step_size: usize, gamma: f64 },
}

impl Schedule {
    pub fn factor(&self, epoch: usize) -> f64 {
        match *self {
            Schedule::None => 1.0,
            Schedule::Step { step_size, gamma } => gamma.powi((epoch / step_size.max(1)) as i32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub base_lr: f64,
    /// Rate multiplier per layer moving from the output toward the input.
    /// `None` uses the network's bucket count.
    pub per_layer_factor: Option<f64>,
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            base_lr: 1e-3,
            per_layer_factor: None,
            schedule: Schedule::None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr = {}", self.base_lr)));
        }
        if let Some(f) = self.per_layer_factor {
            if !(f > 0.0) {
                return Err(Error::Config(format!("per_layer_factor = {f}")));
            }
        }
        if let Schedule::Step { step_size, gamma } = self.schedule {
            if step_size == 0 || !(gamma > 0.0) {
                return Err(Error::Config("step schedule needs step_size >= 1 and gamma > 0".into()));
            }
        }
        Ok(())
    }
}

/// First-order optimizer with per-layer learning rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    factor: f64,
    /// `(m, v)` per layer and parameter group, flattened.
    moments: Vec<[(Vec<f64>, Vec<f64>); 5]>,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, net: &Network) -> Result<Self> {
        cfg.validate()?;
        let factor = cfg.per_layer_factor.unwrap_or(net.alphas().len() as f64);
        let zeros = GradientBuffers::zeros_like(net);
        let moments = zeros
            .layers
            .iter()
            .map(|l| l.groups().map(|g| (vec![0.0; g.len()], vec![0.0; g.len()])))
            .collect();
        Ok(Self {
            cfg,
            factor,
            moments,
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Learning rate of layer `layer` (0 = first layer) in `epoch`.
    pub fn layer_lr(&self, layer: usize, layers: usize, epoch: usize) -> f64 {
        let depth_from_output = (layers - 1 - layer) as i32;
        self.cfg.base_lr * self.factor.powi(depth_from_output) * self.cfg.schedule.factor(epoch)
    }

    /// Apply averaged gradients to every trainable parameter group.
    pub fn step(&mut self, net: &mut Network, grads: &GradientBuffers, epoch: usize) {
        self.steps += 1;
        let n = net.layers.len();
        let t = self.steps as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        for l in 0..n {
            let lr = self.layer_lr(l, n, epoch);
            let layer = &mut net.layers[l];
            let train = layer.trainable;
            let enabled = [train.weights, train.bias, train.bucket_weights, train.norm, train.norm];
            let params: [&mut [f64]; 5] = [
                layer.weights.as_slice_mut().expect("standard layout"),
                layer.bias.as_slice_mut().expect("standard layout"),
                layer.bucket_weights.as_slice_mut(),
                layer.gamma.as_slice_mut().expect("standard layout"),
                layer.beta.as_slice_mut().expect("standard layout"),
            ];
            for (((p, g), (m, v)), on) in params
                .into_iter()
                .zip(grads.layers[l].groups())
                .zip(self.moments[l].iter_mut())
                .zip(enabled)
            {
                if !on {
                    continue;
                }
                match self.cfg.kind {
                    OptimizerKind::Sgd => p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g),
                    OptimizerKind::Adam => {
                        for i in 0..p.len() {
                            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                            let mh = m[i] / bias1;
                            let vh = v[i] / bias2;
                            p[i] -= lr * mh / (vh.sqrt() + self.cfg.eps);
                        }
                    }
                }
            }
        }
    }

    /// Flattened moment buffers, for checkpointing.
    pub fn state_tensors(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.moments {
            for (m, v) in layer {
                out.extend_from_slice(m);
                out.extend_from_slice(v);
            }
        }
        out
    }

    pub fn restore(&mut self, steps: u64, flat: &[f64]) -> Result<()> {
        let expected: usize = self.moments.iter().flatten().map(|(m, v)| m.len() + v.len()).sum();
        if flat.len() != expected {
            return Err(Error::Checkpoint(format!(
                "optimizer state has {} values, expected {expected}",
                flat.len()
            )));
        }
        let mut at = 0;
        for layer in &mut self.moments {
            for (m, v) in layer.iter_mut() {
                let (nm, nv) = (m.len(), v.len());
                m.copy_from_slice(&flat[at..at + nm]);
                at += nm;
                v.copy_from_slice(&flat[at..at + nv]);
                at += nv;
            }
        }
        self.steps = steps;
        Ok(())
    }
}
