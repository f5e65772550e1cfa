//! Feedforward networks of dense gamma-kernel layers.
//!
//! During training every layer reads its upstream layer's bucket matrix
//! directly. In spiking inference the upstream layer only sends spikes and
//! each receiver rebuilds the bucket matrix with its own cascade; both paths
//! produce the same numbers.

mod layer;

pub use layer::{
    layer_norm, rms_norm, BucketLayout, BucketWeights, DenseGammaLayer, LayerCache, LayerState,
    NormKind, Trainable,
};


use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{bucket_sum, rescale_for_timestep, step_buckets, KernelConfig};
use crate::sigma_delta::{adaptive_threshold, SpikeMode, ThresholdConfig};

/// Bucket banks that turn raw per-channel event counts into a bucket matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct InputAdapter {
    banks: Array2<f64>,
    scale: f64,
}

impl InputAdapter {
    pub fn new(channels: usize, buckets: usize, scale: f64) -> Self {
        Self {
            banks: Array2::zeros((channels, buckets)),
            scale,
        }
    }

    pub fn channels(&self) -> usize {
        self.banks.nrows()
    }

    pub fn buckets(&self) -> &Array2<f64> {
        &self.banks
    }

    pub fn reset(&mut self) {
        self.banks.fill(0.0);
    }

    /// Inject `scale * count` into bucket 0 of each channel and advance.
    pub fn inject_step(&mut self, frame: ArrayView1<f64>, alphas: &[f64]) -> Result<ArrayView2<'_, f64>> {
        if frame.len() != self.channels() {
            return Err(Error::Shape(format!(
                "frame has {} channels, adapter has {}",
                frame.len(),
                self.channels()
            )));
        }
        for (mut row, &count) in self.banks.axis_iter_mut(Axis(0)).zip(frame) {
            step_buckets(row.as_slice_mut().expect("row-major"), alphas, self.scale * count);
        }
        Ok(self.banks.view())
    }
}

/// Settings shared by hidden layers when building a network from sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerOptions {
    pub norm: NormKind,
    pub dropout: f64,
    pub threshold: ThresholdConfig,
    pub layout: BucketLayout,
    pub output_norm: bool,
    pub trainable: Trainable,
}

impl Default for LayerOptions {
    fn default() -> Self {
        Self {
            norm: NormKind::Layer,
            dropout: 0.0,
            threshold: ThresholdConfig::default(),
            layout: BucketLayout::PerNeuron,
            output_norm: false,
            trainable: Trainable::all(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    kernel: KernelConfig,
    alphas: Vec<f64>,
    input_channels: usize,
    pub input_scale: f64,
    pub layers: Vec<DenseGammaLayer>,
}

/// Per-sample state of a network in training (pass-through) mode.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub input: InputAdapter,
    pub layers: Vec<LayerState>,
    pub step: usize,
}

impl NetworkState {
    pub fn reset(&mut self) {
        self.input.reset();
        self.layers.iter_mut().for_each(LayerState::reset);
        self.step = 0;
    }

    pub fn output(&self) -> &LayerState {
        self.layers.last().expect("network has layers")
    }

    /// Spikes emitted by hidden layers since the last reset.
    pub fn hidden_spike_count(&self) -> u64 {
        let n = self.layers.len();
        self.layers[..n.saturating_sub(1)].iter().map(|l| l.spike_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Output layer neuron signal `y`.
    pub y_out: Array1<f64>,
    /// Output layer estimate, the per-neuron bucket sum.
    pub yhat_out: Array1<f64>,
    pub spikes_out: Vec<bool>,
}

impl Network {
    pub fn new(kernel: KernelConfig, input_channels: usize, layers: Vec<DenseGammaLayer>) -> Result<Self> {
        let alphas = kernel.alphas()?;
        let net = Self {
            kernel,
            alphas,
            input_channels,
            input_scale: 1.0,
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    /// Rebuild a network with explicitly given transfer rates, e.g. from a
    /// checkpoint taken after [`Network::rescale_timestep`].
    pub fn from_parts(
        kernel: KernelConfig,
        alphas: Vec<f64>,
        input_channels: usize,
        input_scale: f64,
        layers: Vec<DenseGammaLayer>,
    ) -> Result<Self> {
        kernel.validate()?;
        if alphas.len() != kernel.buckets || !alphas.iter().all(|a| *a > 0.0 && *a < 1.0) {
            return Err(Error::InvalidKernel(format!("{} rates for {} buckets", alphas.len(), kernel.buckets)));
        }
        let net = Self {
            kernel,
            alphas,
            input_channels,
            input_scale,
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    /// Zero-initialized dense stack `input -> hidden... -> outputs`.
    pub fn dense(
        kernel: KernelConfig,
        input_channels: usize,
        hidden: &[usize],
        outputs: usize,
        opts: &LayerOptions,
    ) -> Result<Self> {
        let k = kernel.buckets;
        let mut sizes = vec![input_channels];
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let mut layer = DenseGammaLayer::new(sizes[l], sizes[l + 1], k, opts.layout);
                let is_output = l + 1 == n;
                layer.norm_kind = if is_output && !opts.output_norm { NormKind::None } else { opts.norm };
                layer.dropout = if is_output { 0.0 } else { opts.dropout };
                layer.threshold = opts.threshold;
                layer.trainable = opts.trainable;
                layer
            })
            .collect();
        Self::new(kernel, input_channels, layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        let mut fan_in = self.input_channels;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.inputs() != fan_in {
                return Err(Error::Shape(format!(
                    "layer {l} has {} inputs, upstream provides {fan_in}",
                    layer.inputs()
                )));
            }
            if layer.buckets() != self.alphas.len() {
                return Err(Error::Shape(format!(
                    "layer {l} has {} buckets, kernel has {}",
                    layer.buckets(),
                    self.alphas.len()
                )));
            }
            fan_in = layer.outputs();
        }
        Ok(())
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, DenseGammaLayer::outputs)
    }

    pub fn hidden_neurons(&self) -> usize {
        let n = self.layers.len();
        self.layers[..n - 1].iter().map(DenseGammaLayer::outputs).sum()
    }

    /// Switch to a timestep `ratio` times the current one.
    pub fn rescale_timestep(&mut self, ratio: f64) -> Result<()> {
        let kernel = self.kernel.rescaled(ratio)?;
        self.alphas = rescale_for_timestep(&self.alphas, ratio)?;
        self.kernel = kernel;
        Ok(())
    }

    pub fn new_state(&self) -> NetworkState {
        let k = self.alphas.len();
        NetworkState {
            input: InputAdapter::new(self.input_channels, k, self.input_scale),
            layers: self.layers.iter().map(|l| LayerState::new(l.outputs(), k)).collect(),
            step: 0,
        }
    }

    /// One training-mode step: upstream bucket matrices pass straight through.
    pub fn forward_step<R: Rng + ?Sized>(
        &self,
        state: &mut NetworkState,
        frame: ArrayView1<f64>,
        train_mode: bool,
        rng: &mut R,
    ) -> Result<StepOutput> {
        if state.layers.len() != self.layers.len() {
            return Err(Error::Shape("state does not match network depth".into()));
        }
        state.input.inject_step(frame, &self.alphas)?;
        for l in 0..self.layers.len() {
            let (before, rest) = state.layers.split_at_mut(l);
            let upstream = if l == 0 { state.input.buckets().view() } else { before[l - 1].buckets.view() };
            self.layers[l].forward_step(upstream, &self.alphas, &mut rest[0], train_mode, rng)?;
        }
        state.step += 1;
        Ok(self.step_output(state.output()))
    }

    fn step_output(&self, out: &LayerState) -> StepOutput {
        let cache = out.cache.as_ref().expect("forward populates the cache");
        StepOutput {
            y_out: cache.y.clone(),
            yhat_out: out.buckets.map_axis(Axis(1), |row| bucket_sum(row.as_slice().expect("row-major"))),
            spikes_out: out.spikes.clone(),
        }
    }

    pub fn new_spiking_state(&self, mode: SpikeMode) -> SpikingState {
        let k = self.alphas.len();
        SpikingState {
            input: InputAdapter::new(self.input_channels, k, self.input_scale),
            receivers: self.layers[..self.layers.len() - 1]
                .iter()
                .map(|l| ReceiverBank::new(l.outputs(), k, mode, l.threshold))
                .collect(),
            layers: self.layers.iter().map(|l| LayerState::new(l.outputs(), k)).collect(),
        }
    }

    /// One inference step where layers exchange only spikes.
    pub fn forward_step_spiking<R: Rng + ?Sized>(
        &self,
        state: &mut SpikingState,
        frame: ArrayView1<f64>,
        rng: &mut R,
    ) -> Result<StepOutput> {
        state.input.inject_step(frame, &self.alphas)?;
        for l in 0..self.layers.len() {
            let upstream = if l == 0 {
                state.input.buckets().view()
            } else {
                let sender = &state.layers[l - 1];
                let recv = &mut state.receivers[l - 1];
                recv.receive(&sender.spikes, sender.magnitudes.view(), &self.alphas);
                recv.buckets.view()
            };
            self.layers[l].forward_step(upstream, &self.alphas, &mut state.layers[l], false, rng)?;
        }
        Ok(self.step_output(state.layers.last().expect("network has layers")))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseGammaLayer::parameter_count).sum()
    }
}

/// Receiver-side reconstruction of a whole upstream layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverBank {
    buckets: Array2<f64>,
    yhat_prev: Array1<f64>,
    mode: SpikeMode,
    threshold: ThresholdConfig,
}

impl ReceiverBank {
    pub fn new(senders: usize, buckets: usize, mode: SpikeMode, threshold: ThresholdConfig) -> Self {
        Self {
            buckets: Array2::zeros((senders, buckets)),
            yhat_prev: Array1::zeros(senders),
            mode,
            threshold,
        }
    }

    pub fn buckets(&self) -> &Array2<f64> {
        &self.buckets
    }

    fn receive(&mut self, spikes: &[bool], magnitudes: ArrayView1<f64>, alphas: &[f64]) {
        for (i, mut row) in self.buckets.axis_iter_mut(Axis(0)).enumerate() {
            let injected = match (spikes[i], self.mode) {
                (false, _) => 0.0,
                (true, SpikeMode::Graded) => magnitudes[i],
                (true, SpikeMode::Binary) => 2.0 * adaptive_threshold(self.yhat_prev[i], &self.threshold),
            };
            let values = row.as_slice_mut().expect("row-major");
            step_buckets(values, alphas, injected);
            self.yhat_prev[i] = bucket_sum(values);
        }
    }
}

/// Per-sample state for spiking inference.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikingState {
    pub input: InputAdapter,
    pub receivers: Vec<ReceiverBank>,
    pub layers: Vec<LayerState>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adapter_examples() {
        let alphas = KernelConfig::new(3, 0.15).alphas().unwrap();
        let mut a = InputAdapter::new(2, 3, 1.0);
        let m = a.inject_step(array![0.0, 0.0].view(), &alphas).unwrap();
        assert!(m.iter().all(|&v| v == 0.0));
        let m = a.inject_step(array![3.0, 0.0].view(), &alphas).unwrap();
        assert_eq!(m[[0, 0]], 3.0);
        assert!(a.inject_step(array![1.0].view(), &alphas).is_err());
    }

    #[test]
    fn adapter_impulse_matches_kernel_table() {
        let alphas = KernelConfig::new(4, 0.3).alphas().unwrap();
        let table = crate::kernel::impulse_response(&alphas, 30).unwrap();
        let mut a = InputAdapter::new(1, 4, 2.5);
        for tau in 0..30 {
            let frame = if tau == 0 { array![1.0] } else { array![0.0] };
            let m = a.inject_step(frame.view(), &alphas).unwrap();
            for k in 0..4 {
                assert!((m[[0, k]] - 2.5 * table.get(k, tau)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_frames_zero_bias_stay_silent() {
        let opts = LayerOptions {
            norm: NormKind::None,
            ..LayerOptions::default()
        };
        let mut net = Network::dense(KernelConfig::new(5, 0.15), 3, &[4], 2, &opts).unwrap();
        for layer in &mut net.layers {
            layer.weights.fill(0.7);
        }
        let mut s = net.new_state();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let o = net.forward_step(&mut s, array![0.0, 0.0, 0.0].view(), false, &mut rng).unwrap();
            assert!(o.y_out.iter().all(|&v| v == 0.0));
        }
        assert_eq!(s.layers.iter().map(|l| l.spike_count).sum::<u64>(), 0);
    }

    #[test]
    fn rejects_mismatched_chain() {
        let k = KernelConfig::new(3, 0.15);
        let a = DenseGammaLayer::new(4, 5, 3, BucketLayout::PerNeuron);
        let b = DenseGammaLayer::new(6, 2, 3, BucketLayout::PerNeuron);
        assert!(Network::new(k, 4, vec![a.clone(), b]).is_err());
        assert!(Network::new(k, 3, vec![a]).is_err());
    }
}
