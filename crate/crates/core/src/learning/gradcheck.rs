//! Frozen-trace finite-difference oracle for the per-timestep gradient.
//!
//! One forward pass is recorded. The oracle then rebuilds every step's
//! computation from the recorded upstream bucket matrices, with spike
//! decisions and dropout masks held fixed, and treats each bucket estimate as
//! `recorded + (y - y_recorded)` so that `d yhat / d y = 1` holds exactly.
//! Central differences of that surrogate loss are compared with the analytic
//! gradient. The surrogate forward is written out with plain loops and does
//! not share code with the layer implementation.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::learning::backward::{backward_step, GradientBuffers};
use crate::learning::init::init_parameters;
use crate::learning::loss::{loss_step, LossConfig, LossKind, StepTarget};
use crate::network::{BucketLayout, BucketWeights, DenseGammaLayer, LayerOptions, Network, NormKind};

/// Denominator floor of the relative error, so that gradients near zero are
/// compared on an absolute scale of `tolerance * RELATIVE_FLOOR`.
pub const RELATIVE_FLOOR: f64 = 1e-3;

const GROUPS: [&str; 5] = ["weights", "bias", "bucket_weights", "gamma", "beta"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Entries sampled from each parameter tensor.
    pub max_per_tensor: usize,
    /// Use training mode (dropout masks) for the recorded pass.
    pub train_mode: bool,
    /// Negative-control hook: perturb the analytic gradient before comparing.
    pub corrupt: bool,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tolerance: 1e-6,
            max_per_tensor: 24,
            train_mode: true,
            corrupt: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub layer: usize,
    pub group: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub kink: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub kink_excluded: usize,
    pub worst: Option<ParamCheck>,
    pub tolerance: f64,
    pub passed: bool,
    pub entries: Vec<ParamCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

struct FrozenStep {
    input: Array2<f64>,
    upstream: Vec<Array2<f64>>,
    ys: Vec<Array1<f64>>,
    masks: Vec<Option<Array1<f64>>>,
    yhat_out: Array1<f64>,
}

struct Surrogate {
    loss: f64,
    /// Rectifier activity per step, layer and neuron.
    active: Vec<Vec<Vec<bool>>>,
}

fn bucket_weight(layer: &DenseGammaLayer, j: usize, i: usize, k: usize) -> f64 {
    match &layer.bucket_weights {
        BucketWeights::PerNeuron(v) => v[[j, k]],
        BucketWeights::PerSynapse(v) => v[[j, i, k]],
    }
}

fn oracle_signal(layer: &DenseGammaLayer, u: &Array2<f64>, mask: Option<&Array1<f64>>) -> (Vec<f64>, Vec<bool>) {
    let (out, inp, kk) = (layer.outputs(), layer.inputs(), layer.buckets());
    let mut x = vec![0.0; out];
    for j in 0..out {
        let mut acc = layer.bias[j];
        for i in 0..inp {
            for k in 0..kk {
                acc += u[[i, k]] * layer.weights[[j, i]] * bucket_weight(layer, j, i, k);
            }
        }
        x[j] = acc;
    }
    let n = out as f64;
    let xn: Vec<f64> = match layer.norm_kind {
        NormKind::None => x,
        NormKind::Layer => {
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = (var + layer.eps).sqrt();
            (0..out).map(|j| (x[j] - mean) / sd * layer.gamma[j] + layer.beta[j]).collect()
        }
        NormKind::Rms => {
            let rms = (x.iter().map(|v| v * v).sum::<f64>() / n + layer.eps).sqrt();
            (0..out).map(|j| x[j] / rms * layer.gamma[j] + layer.beta[j]).collect()
        }
    };
    let active: Vec<bool> = xn.iter().map(|&v| v > 0.0).collect();
    let y = (0..out)
        .map(|j| xn[j].max(0.0) * mask.map_or(1.0, |m| m[j]))
        .collect();
    (y, active)
}

fn surrogate(net: &Network, frozen: &[FrozenStep], targets: &[StepTarget], loss: &LossConfig) -> Result<Surrogate> {
    let n_layers = net.layers.len();
    let t_len = frozen.len() as f64;
    let mut total = 0.0;
    let mut active = Vec::with_capacity(frozen.len());
    for (t, step) in frozen.iter().enumerate() {
        let mut u = step.input.clone();
        let mut step_active = Vec::with_capacity(n_layers);
        let mut y = Vec::new();
        for (l, layer) in net.layers.iter().enumerate() {
            let (yl, act) = oracle_signal(layer, &u, step.masks[l].as_ref());
            step_active.push(act);
            if l + 1 < n_layers {
                let mut next = step.upstream[l].clone();
                for (i, mut row) in next.rows_mut().into_iter().enumerate() {
                    let shift = yl[i] - step.ys[l][i];
                    row.iter_mut().for_each(|v| *v += shift);
                }
                u = next;
            }
            y = yl;
        }
        let y_out = Array1::from(y);
        let yhat_eff = &step.yhat_out + &(&y_out - &step.ys[n_layers - 1]);
        let (l, _) = loss_step(loss, y_out.view(), yhat_eff.view(), targets[t].as_target(), t)?;
        total += l / t_len;
        active.push(step_active);
    }
    for layer in &net.layers {
        if layer.norm_kind != NormKind::None {
            total += loss.gain_loss * layer.gamma.sum();
        }
    }
    Ok(Surrogate { loss: total, active })
}

fn param_mut(net: &mut Network, layer: usize, group: usize) -> &mut [f64] {
    let l = &mut net.layers[layer];
    match group {
        0 => l.weights.as_slice_mut().expect("standard layout"),
        1 => l.bias.as_slice_mut().expect("standard layout"),
        2 => l.bucket_weights.as_slice_mut(),
        3 => l.gamma.as_slice_mut().expect("standard layout"),
        _ => l.beta.as_slice_mut().expect("standard layout"),
    }
}

/// Analytic gradient (time-averaged) from one recorded pass, plus the trace.
fn record(
    net: &Network,
    frames: &[Array1<f64>],
    targets: &[StepTarget],
    loss: &LossConfig,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(GradientBuffers, Vec<FrozenStep>)> {
    let mut state = net.new_state();
    let mut grads = GradientBuffers::zeros_like(net);
    let mut frozen = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        let out = net.forward_step(&mut state, frame.view(), train_mode, rng)?;
        let caches: Vec<_> = state.layers.iter().map(|l| l.cache.as_ref().expect("cache")).collect();
        frozen.push(FrozenStep {
            input: caches[0].input.clone(),
            upstream: caches[1..].iter().map(|c| c.input.clone()).collect(),
            ys: caches.iter().map(|c| c.y.clone()).collect(),
            masks: caches.iter().map(|c| c.mask.clone()).collect(),
            yhat_out: out.yhat_out.clone(),
        });
        let (_, dl) = loss_step(loss, out.y_out.view(), out.yhat_out.view(), targets[t].as_target(), t)?;
        backward_step(net, &mut state, dl.view(), loss.gain_loss, &mut grads)?;
    }
    grads.scale(1.0 / frames.len() as f64);
    Ok((grads, frozen))
}

/// Compare analytic per-timestep gradients against frozen-trace central differences.
pub fn frozen_trace_fd_check(
    net: &Network,
    frames: &[Array1<f64>],
    targets: &[StepTarget],
    loss: &LossConfig,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if frames.is_empty() || frames.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} frames with {} targets",
            frames.len(),
            targets.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut grads, frozen) = record(net, frames, targets, loss, cfg.train_mode, &mut rng)?;
    if cfg.corrupt {
        for l in &mut grads.layers {
            for g in l.groups_mut() {
                g.iter_mut().for_each(|v| *v = *v * 1.01 + 1e-3);
            }
        }
    }
    let base = surrogate(net, &frozen, targets, loss)?;
    let mut work = net.clone();
    let mut entries = Vec::new();
    for layer in 0..net.layers.len() {
        for group in 0..GROUPS.len() {
            let len = param_mut(&mut work, layer, group).len();
            if len == 0 {
                continue;
            }
            let stride = len.div_ceil(cfg.max_per_tensor.max(1));
            for index in (0..len).step_by(stride) {
                let orig = param_mut(&mut work, layer, group)[index];
                param_mut(&mut work, layer, group)[index] = orig + cfg.eps;
                let plus = surrogate(&work, &frozen, targets, loss)?;
                param_mut(&mut work, layer, group)[index] = orig - cfg.eps;
                let minus = surrogate(&work, &frozen, targets, loss)?;
                param_mut(&mut work, layer, group)[index] = orig;

                let numeric = (plus.loss - minus.loss) / (2.0 * cfg.eps);
                let analytic = grads.layers[layer].groups()[group][index];
                let kink = plus.active != base.active || minus.active != base.active;
                entries.push(ParamCheck {
                    layer,
                    group: GROUPS[group],
                    index,
                    analytic,
                    numeric,
                    rel_error: relative_error(analytic, numeric),
                    kink,
                });
            }
        }
    }
    let checked: Vec<&ParamCheck> = entries.iter().filter(|e| !e.kink).collect();
    let worst = checked
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .map(|e| (*e).clone());
    let max_rel_error = worst.as_ref().map_or(0.0, |w| w.rel_error);
    Ok(GradCheckReport {
        max_rel_error,
        checked: checked.len(),
        kink_excluded: entries.len() - checked.len(),
        worst,
        tolerance: cfg.tolerance,
        passed: max_rel_error <= cfg.tolerance && !checked.is_empty(),
        entries,
    })
}

/// Shape of a randomly generated gradient-check problem.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckCase {
    pub net: Network,
    pub frames: Vec<Array1<f64>>,
    pub targets: Vec<StepTarget>,
    pub loss: LossConfig,
}

/// Random dense net with 2 or 3 layers of at most 32 neurons and K <= 10.
pub fn random_case(seed: u64, layout: BucketLayout, norm: NormKind) -> Result<GradCheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = rng.random_range(2..=12);
    let depth = rng.random_range(2..=3);
    let hidden: Vec<usize> = (0..depth - 1).map(|_| rng.random_range(2..=32)).collect();
    let outputs = rng.random_range(2..=6);
    let kernel = KernelConfig::new(rng.random_range(1..=10), rng.random_range(0.05..0.6));
    let opts = LayerOptions {
        norm,
        dropout: if rng.random_bool(0.5) { 0.2 } else { 0.0 },
        layout,
        output_norm: norm != NormKind::None && rng.random_bool(0.5),
        ..LayerOptions::default()
    };
    let mut net = Network::dense(kernel, inputs, &hidden, outputs, &opts)?;
    init_parameters(&mut net, &mut rng);
    // non-trivial gains and bucket weights so the norm Jacobian is exercised
    for layer in &mut net.layers {
        layer.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        layer.beta.mapv_inplace(|_| rng.random_range(-0.2..0.2));
        layer.bucket_weights.as_slice_mut().iter_mut().for_each(|v| *v *= 5.0);
    }
    let steps = rng.random_range(4..=8);
    let frames: Vec<Array1<f64>> = (0..steps)
        .map(|_| Array1::from_shape_fn(inputs, |_| f64::from(rng.random_range(0u32..4))))
        .collect();
    let kind = match rng.random_range(0..3) {
        0 => LossKind::CePerStep,
        1 => LossKind::MseOnYhat,
        _ => LossKind::CeWarmup,
    };
    let loss = LossConfig {
        kind,
        beta0: 0.7,
        gain_loss: if norm == NormKind::None { 0.0 } else { 0.05 },
        ..LossConfig::default()
    };
    let label = rng.random_range(0..outputs);
    let targets = (0..steps)
        .map(|_| match kind {
            LossKind::MseOnYhat => StepTarget::Trace(Array1::from_shape_fn(outputs, |_| rng.random_range(0.0..1.0))),
            _ => StepTarget::Class(label),
        })
        .collect();
    Ok(GradCheckCase {
        net,
        frames,
        targets,
        loss,
    })
}
