//! Sample evaluation, batching and the epoch loop.
//!
//! Each sample draws its dropout masks from its own ChaCha stream keyed by
//! `(epoch, sample index)`, and batch gradients are summed in sample order,
//! so results do not depend on the number of workers.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::backward::{backward_step, GradientBuffers};
use crate::learning::loss::{loss_step, LossConfig};
use crate::learning::optimizer::Optimizer;
use crate::network::Network;
use crate::tasks::{classify_by_sum, first_spike_times, spike_density, ttfs_decode, LabeledSample};

/// How a sample's output is turned into a class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Time-to-first-spike.
    Ttfs,
    /// Argmax of the time-summed output signal.
    #[default]
    SumOutput,
}

/// Everything recorded while running one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    /// Loss averaged over timesteps.
    pub loss: f64,
    /// Gradient averaged over timesteps, when requested.
    pub grads: Option<GradientBuffers>,
    pub y_out: Array2<f64>,
    pub yhat_out: Array2<f64>,
    pub spikes_out: Array2<bool>,
    /// Spikes emitted by all non-output layers.
    pub hidden_spikes: u64,
}

impl SampleRun {
    pub fn first_spikes(&self) -> Vec<Option<usize>> {
        first_spike_times(self.spikes_out.view())
    }

    pub fn predict(&self, readout: Readout) -> Result<usize> {
        match readout {
            Readout::Ttfs => ttfs_decode(&self.first_spikes(), self.yhat_out.view()),
            Readout::SumOutput => Ok(classify_by_sum(self.y_out.view())),
        }
    }
}

/// RNG for sample `index` in `epoch`; independent of batch layout.
pub fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

fn shuffle_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - epoch as u64);
    rng
}

/// Run one sample from a fresh state. Gradients are accumulated only when
/// `want_grads`; `train_mode` enables dropout.
pub fn run_sample(
    net: &Network,
    sample: &LabeledSample,
    loss: &LossConfig,
    train_mode: bool,
    want_grads: bool,
    rng: &mut ChaCha8Rng,
) -> Result<SampleRun> {
    let steps = sample.len();
    if steps == 0 {
        return Err(Error::InvalidArgument("sample has no frames".into()));
    }
    if sample.frames.channels() != net.input_channels() {
        return Err(Error::Shape(format!(
            "sample has {} channels, network expects {}",
            sample.frames.channels(),
            net.input_channels()
        )));
    }
    let targets = sample.step_targets(loss.kind)?;
    let classes = net.outputs();
    let mut state = net.new_state();
    let mut grads = want_grads.then(|| GradientBuffers::zeros_like(net));
    let mut y_out = Array2::zeros((steps, classes));
    let mut yhat_out = Array2::zeros((steps, classes));
    let mut spikes_out = Array2::from_elem((steps, classes), false);
    let mut total = 0.0;
    for (t, frame) in sample.frames.frames.axis_iter(Axis(0)).enumerate() {
        let out = net.forward_step(&mut state, frame, train_mode, rng)?;
        let (l, dl) = loss_step(loss, out.y_out.view(), out.yhat_out.view(), targets[t].as_target(), t)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss: l,
                epoch: 0,
                sample: 0,
                step: t,
            });
        }
        total += l;
        if let Some(g) = grads.as_mut() {
            backward_step(net, &mut state, dl.view(), loss.gain_loss, g)?;
        }
        y_out.row_mut(t).assign(&out.y_out);
        yhat_out.row_mut(t).assign(&out.yhat_out);
        for (c, &s) in out.spikes_out.iter().enumerate() {
            spikes_out[[t, c]] = s;
        }
    }
    let mut mean_loss = total / steps as f64;
    if let Some(g) = grads.as_mut() {
        g.scale(1.0 / steps as f64);
    }
    // the gain penalty does not depend on time
    for layer in &net.layers {
        if layer.norm_kind != crate::network::NormKind::None {
            mean_loss += loss.gain_loss * layer.gamma.sum();
        }
    }
    Ok(SampleRun {
        loss: mean_loss,
        grads,
        y_out,
        yhat_out,
        spikes_out,
        hidden_spikes: state.hidden_spike_count(),
    })
}

/// Step of the correct neuron's target spike: first nonzero row of its
/// target column.
pub fn target_spike_time(sample: &LabeledSample) -> Option<usize> {
    let trace = sample.target_trace.as_ref()?;
    trace.column(sample.label).iter().position(|&v| v != 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub loss: f64,
    pub accuracy: f64,
    /// Hidden spikes per hidden neuron per sample; `None` without hidden layers.
    pub spike_density: Option<f64>,
    /// Mean `|first spike - target spike|` of the correct neuron, over
    /// samples where both exist.
    pub timing_error: Option<f64>,
    /// Largest such timing error.
    pub max_timing_error: Option<usize>,
    /// Samples whose correct neuron never spiked.
    pub missed: usize,
    pub predictions: Vec<usize>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Evaluate in inference mode (no dropout).
pub fn evaluate(
    net: &Network,
    samples: &[LabeledSample],
    loss: &LossConfig,
    readout: Readout,
    workers: usize,
) -> Result<EvalStats> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let runs: Vec<Result<SampleRun>> = pool(workers)?.install(|| {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| run_sample(net, s, loss, false, false, &mut sample_rng(0, 0, i)))
            .collect()
    });
    let mut loss_sum = 0.0;
    let mut correct = 0;
    let mut counts = Vec::with_capacity(samples.len());
    let mut timing = Vec::new();
    let mut missed = 0;
    let mut predictions = Vec::with_capacity(samples.len());
    for (run, sample) in runs.into_iter().zip(samples) {
        let run = run?;
        loss_sum += run.loss;
        let pred = run.predict(readout)?;
        correct += usize::from(pred == sample.label);
        predictions.push(pred);
        counts.push(run.hidden_spikes);
        if let Some(target) = target_spike_time(sample) {
            match run.first_spikes()[sample.label] {
                Some(t) => timing.push(t.abs_diff(target)),
                None => missed += 1,
            }
        }
    }
    let n = samples.len() as f64;
    let hidden = net.hidden_neurons();
    Ok(EvalStats {
        loss: loss_sum / n,
        accuracy: correct as f64 / n,
        spike_density: if hidden > 0 { Some(spike_density(&counts, hidden)?) } else { None },
        timing_error: (!timing.is_empty()).then(|| timing.iter().sum::<usize>() as f64 / timing.len() as f64),
        max_timing_error: timing.iter().copied().max(),
        missed,
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

/// Network, optimizer and loss bundled with the bookkeeping needed to
/// resume training deterministically.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: Network,
    pub optimizer: Optimizer,
    pub loss: LossConfig,
    pub readout: Readout,
    pub batch_size: usize,
    pub seed: u64,
    pub workers: usize,
    pub shuffle: bool,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(net: Network, optimizer: Optimizer, loss: LossConfig, seed: u64) -> Self {
        Self {
            net,
            optimizer,
            loss,
            readout: Readout::default(),
            batch_size: 1,
            seed,
            workers: 1,
            shuffle: true,
            epoch: 0,
        }
    }

    /// Learning rate of the output layer in the current epoch.
    pub fn output_lr(&self) -> f64 {
        let n = self.net.layers.len();
        self.optimizer.layer_lr(n - 1, n, self.epoch)
    }

    /// Run one batch and apply the averaged gradient. Returns the runs in
    /// batch order.
    pub fn train_batch(&mut self, samples: &[LabeledSample], indices: &[usize]) -> Result<Vec<SampleRun>> {
        let (net, loss, seed, epoch) = (&self.net, &self.loss, self.seed, self.epoch);
        let runs: Vec<Result<SampleRun>> = pool(self.workers)?.install(|| {
            indices
                .par_iter()
                .map(|&i| {
                    run_sample(net, &samples[i], loss, true, true, &mut sample_rng(seed, epoch, i)).map_err(|e| match e {
                        Error::NonFiniteLoss { loss, step, .. } => Error::NonFiniteLoss {
                            loss,
                            epoch,
                            sample: i,
                            step,
                        },
                        other => other,
                    })
                })
                .collect()
        });
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let mut total = GradientBuffers::zeros_like(&self.net);
        for run in &runs {
            total.add_assign(run.grads.as_ref().expect("training runs keep gradients"));
        }
        total.scale(1.0 / runs.len() as f64);
        self.optimizer.step(&mut self.net, &total, self.epoch);
        Ok(runs)
    }

    /// One pass over `samples` in (optionally shuffled) mini-batches.
    pub fn train_epoch(&mut self, samples: &[LabeledSample]) -> Result<EpochStats> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        if self.shuffle {
            order.shuffle(&mut shuffle_rng(self.seed, self.epoch));
        }
        let lr = self.output_lr();
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(self.batch_size.max(1)) {
            let runs = self.train_batch(samples, batch)?;
            for (run, &i) in runs.iter().zip(batch) {
                loss_sum += run.loss;
                correct += usize::from(run.predict(self.readout)? == samples[i].label);
            }
        }
        let stats = EpochStats {
            epoch: self.epoch,
            loss: loss_sum / samples.len() as f64,
            accuracy: correct as f64 / samples.len() as f64,
            lr,
        };
        self.epoch += 1;
        Ok(stats)
    }
}

/// Class decision for a CE-trained network: argmax of the time-summed output.
pub fn sequence_classify(net: &Network, sample: &LabeledSample) -> Result<usize> {
    let loss = LossConfig::default();
    let run = run_sample(net, sample, &loss, false, false, &mut sample_rng(0, 0, 0))?;
    Ok(classify_by_sum(run.y_out.view()))
}
