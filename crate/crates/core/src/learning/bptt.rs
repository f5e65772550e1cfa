//! Reference trainer for the single-neuron delay chain that backpropagates
//! through time: through the spike function via a surrogate derivative and
//! through every bucket recursion.
//!
//! Only the bucket weights are trained. The forward pass is the ordinary
//! network forward written out for one input, one hidden and one output
//! neuron, with the state kept per step for the reverse sweep.

use std::io::Write;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{bucket_sum, step_buckets};
use crate::learning::backward::GradientBuffers;
use crate::learning::optimizer::{Optimizer, OptimizerConfig};
use crate::network::{BucketWeights, Network, NormKind};
use crate::tasks::LabeledSample;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    #[default]
    FastSigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub kind: SurrogateKind,
    pub slope: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            kind: SurrogateKind::FastSigmoid,
            slope: 10.0,
        }
    }
}

impl SurrogateConfig {
    /// `slope / (1 + slope |q|)^2`, where `q` is the mismatch minus the threshold.
    pub fn derivative(&self, q: f64) -> f64 {
        match self.kind {
            SurrogateKind::FastSigmoid => self.slope / (1.0 + self.slope * q.abs()).powi(2),
        }
    }
}

/// Spike nonlinearity used by the forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpikeFunction {
    /// The real threshold; the surrogate stands in for its derivative.
    Hard,
    /// `(1 + slope q / (1 + slope |q|)) / 2`, differentiated exactly. Lets the
    /// reverse sweep be checked against finite differences.
    Soft,
}

impl SpikeFunction {
    fn value(self, q: f64, sg: &SurrogateConfig) -> f64 {
        match self {
            SpikeFunction::Hard => f64::from(u8::from(q > 0.0)),
            SpikeFunction::Soft => 0.5 * (1.0 + sg.slope * q / (1.0 + sg.slope * q.abs())),
        }
    }

    fn derivative(self, q: f64, sg: &SurrogateConfig) -> f64 {
        match self {
            SpikeFunction::Hard => sg.derivative(q),
            SpikeFunction::Soft => 0.5 * sg.derivative(q),
        }
    }
}

/// Per-step record of one neuron in the chain.
#[derive(Debug, Clone, Default)]
struct NeuronStep {
    x: f64,
    q: f64,
    theta: f64,
    spike: f64,
    /// Bucket values after this step.
    buckets: Vec<f64>,
}

/// Check the 1 -> 1 -> 1 per-neuron delay topology.
pub fn check_delay_topology(net: &Network) -> Result<()> {
    let ok = net.input_channels() == 1
        && net.layers.len() == 2
        && net.layers.iter().all(|l| {
            l.outputs() == 1
                && l.inputs() == 1
                && matches!(l.bucket_weights, BucketWeights::PerNeuron(_))
                && l.norm_kind == NormKind::None
                && l.dropout == 0.0
        });
    if ok {
        Ok(())
    } else {
        Err(Error::Topology(
            "the through-time reference supports only the 1-1-1 per-neuron delay chain without norm or dropout".into(),
        ))
    }
}

fn bucket_row(bw: &BucketWeights) -> &[f64] {
    match bw {
        BucketWeights::PerNeuron(v) => v.as_slice().expect("standard layout"),
        BucketWeights::PerSynapse(v) => v.as_slice().expect("standard layout"),
    }
}

/// Loss (mean squared estimate error over time) and its full through-time
/// gradient with respect to both layers' bucket weights.
pub fn bptt_gradient(
    net: &Network,
    sample: &LabeledSample,
    sg: &SurrogateConfig,
    spike_fn: SpikeFunction,
) -> Result<(f64, GradientBuffers)> {
    check_delay_topology(net)?;
    let target = sample
        .target_trace
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("delay reference needs a target trace".into()))?;
    let alphas = net.alphas();
    let k = alphas.len();
    let steps = sample.len();

    // forward
    let mut input = vec![0.0; k];
    let mut inputs = Vec::with_capacity(steps);
    let mut hist: [Vec<NeuronStep>; 2] = [Vec::with_capacity(steps), Vec::with_capacity(steps)];
    let mut state = [vec![0.0; k], vec![0.0; k]];
    let mut loss = 0.0;
    for (t, frame) in sample.frames.frames.axis_iter(Axis(0)).enumerate() {
        step_buckets(&mut input, alphas, net.input_scale * frame[0]);
        inputs.push(input.clone());
        for (l, layer) in net.layers.iter().enumerate() {
            let upstream: &[f64] = if l == 0 { &input } else { &hist[0][t].buckets };
            let v = bucket_row(&layer.bucket_weights);
            let x = layer.bias[0] + layer.weights[[0, 0]] * v.iter().zip(upstream).map(|(a, b)| a * b).sum::<f64>();
            let y = x.max(0.0);
            let prev = bucket_sum(&state[l]);
            let theta = layer.threshold.theta0 + layer.threshold.mf * prev;
            let q = y - prev - theta;
            let spike = spike_fn.value(q, sg);
            step_buckets(&mut state[l], alphas, 2.0 * theta * spike);
            hist[l].push(NeuronStep {
                x,
                q,
                theta,
                spike,
                buckets: state[l].clone(),
            });
        }
        let err = bucket_sum(&state[1]) - target[[t, 0]];
        loss += err * err / steps as f64;
    }

    // reverse sweep; lambda[l] is dL/d(buckets of layer l after step t)
    let mut grads = GradientBuffers::zeros_like(net);
    let mut lambda = [vec![0.0; k], vec![0.0; k]];
    for t in (0..steps).rev() {
        let err = bucket_sum(&hist[1][t].buckets) - target[[t, 0]];
        lambda[1].iter_mut().for_each(|a| *a += 2.0 * err / steps as f64);
        for l in (0..2).rev() {
            let layer = &net.layers[l];
            let step = &hist[l][t];
            let mf = layer.threshold.mf;
            let g_inj = lambda[l][0];
            let g_q = 2.0 * step.theta * g_inj * spike_fn.derivative(step.q, sg);
            let g_prev = -(1.0 + mf) * g_q + 2.0 * step.spike * mf * g_inj;
            // through the bucket recursion to the previous step
            let mut prev = vec![0.0; k];
            for j in 0..k {
                prev[j] = alphas[j] * lambda[l][j] + g_prev;
                if j + 1 < k {
                    prev[j] += (1.0 - alphas[j + 1]) * lambda[l][j + 1];
                }
            }
            lambda[l] = prev;
            let g_x = if step.x > 0.0 { g_q } else { 0.0 };
            let w = layer.weights[[0, 0]];
            let upstream: &[f64] = if l == 0 { &inputs[t] } else { &hist[0][t].buckets };
            let gv = grads.layers[l].bucket_weights.as_slice_mut();
            for j in 0..k {
                gv[j] += g_x * w * upstream[j];
            }
            if l == 1 {
                let v = bucket_row(&layer.bucket_weights);
                for j in 0..k {
                    lambda[0][j] += g_x * w * v[j];
                }
            }
        }
    }
    Ok((loss, grads))
}

/// Bucket weights of both layers after one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSnapshot {
    pub epoch: usize,
    pub loss: f64,
    pub weights: [Vec<f64>; 2],
}

#[derive(Debug, Clone)]
pub struct BpttRun {
    pub net: Network,
    pub history: Vec<WeightSnapshot>,
}

impl BpttRun {
    /// Long-format weight evolution: `epoch,layer,bucket,weight`.
    pub fn write_evolution_csv<W: Write>(&self, out: W) -> Result<()> {
        write_weight_evolution(&self.history, out)
    }
}

pub fn write_weight_evolution<W: Write>(history: &[WeightSnapshot], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "layer", "bucket", "weight"])?;
    for snap in history {
        for (l, row) in snap.weights.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                w.serialize((snap.epoch, l, k, v))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn snapshot(net: &Network, epoch: usize, loss: f64) -> WeightSnapshot {
    WeightSnapshot {
        epoch,
        loss,
        weights: [
            net.layers[0].bucket_weights.as_slice().to_vec(),
            net.layers[1].bucket_weights.as_slice().to_vec(),
        ],
    }
}

/// Train the delay chain's bucket weights with the through-time gradient.
pub fn bptt_sg_delay_reference(
    mut net: Network,
    sample: &LabeledSample,
    sg: &SurrogateConfig,
    optimizer: OptimizerConfig,
    epochs: usize,
) -> Result<BpttRun> {
    check_delay_topology(&net)?;
    if !(sg.slope >= 0.0) {
        return Err(Error::Config(format!("surrogate slope = {}", sg.slope)));
    }
    for layer in &mut net.layers {
        layer.trainable = crate::network::Trainable::bucket_weights_only();
    }
    let mut opt = Optimizer::new(optimizer, &net)?;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (loss, grads) = bptt_gradient(&net, sample, sg, SpikeFunction::Hard)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss,
                epoch,
                sample: 0,
                step: 0,
            });
        }
        opt.step(&mut net, &grads, epoch);
        history.push(snapshot(&net, epoch, loss));
    }
    Ok(BpttRun { net, history })
}
