use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigma_delta::{encode_into, Emission, ThresholdConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Layer,
    Rms,
    #[default]
    None,
}

/// Where the bucket weights live.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketLayout {
    #[default]
    PerNeuron,
    PerSynapse,
}

/// Bucket weights `v`, `[out, K]` per neuron or `[out, in, K]` per synapse.
#[derive(Debug, Clone, PartialEq)]
pub enum BucketWeights {
    PerNeuron(Array2<f64>),
    PerSynapse(Array3<f64>),
}

impl BucketWeights {
    pub fn zeros(layout: BucketLayout, outputs: usize, inputs: usize, buckets: usize) -> Self {
        match layout {
            BucketLayout::PerNeuron => Self::PerNeuron(Array2::zeros((outputs, buckets))),
            BucketLayout::PerSynapse => Self::PerSynapse(Array3::zeros((outputs, inputs, buckets))),
        }
    }

    pub fn layout(&self) -> BucketLayout {
        match self {
            Self::PerNeuron(_) => BucketLayout::PerNeuron,
            Self::PerSynapse(_) => BucketLayout::PerSynapse,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            Self::PerNeuron(v) => v.as_slice().expect("standard layout"),
            Self::PerSynapse(v) => v.as_slice().expect("standard layout"),
        }
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        match self {
            Self::PerNeuron(v) => v.as_slice_mut().expect("standard layout"),
            Self::PerSynapse(v) => v.as_slice_mut().expect("standard layout"),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            Self::PerNeuron(v) => v.shape().to_vec(),
            Self::PerSynapse(v) => v.shape().to_vec(),
        }
    }
}

/// Which parameter groups receive optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trainable {
    pub weights: bool,
    pub bias: bool,
    pub bucket_weights: bool,
    pub norm: bool,
}

impl Default for Trainable {
    fn default() -> Self {
        Self::all()
    }
}

impl Trainable {
    pub fn all() -> Self {
        Self {
            weights: true,
            bias: true,
            bucket_weights: true,
            norm: true,
        }
    }

    pub fn bucket_weights_only() -> Self {
        Self {
            weights: false,
            bias: false,
            bucket_weights: true,
            norm: false,
        }
    }
}

/// Dense layer of gamma-kernel sigma-delta neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGammaLayer {
    /// Synaptic weights `[out, in]`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub bucket_weights: BucketWeights,
    pub norm_kind: NormKind,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub eps: f64,
    pub dropout: f64,
    pub threshold: ThresholdConfig,
    pub trainable: Trainable,
}

/// Forward intermediates of one step, consumed by the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    /// Upstream bucket matrix `[in, K]`.
    pub input: Array2<f64>,
    /// `sum_i w_ji yhat_ik`, per-neuron layout only.
    pub weighted: Option<Array2<f64>>,
    pub x: Array1<f64>,
    /// Normalized `x` before gain and bias; equals `x` without normalization.
    pub xhat: Array1<f64>,
    /// `1 / sqrt(var + eps)` (layer) or `1 / sqrt(E[x^2] + eps)` (rms).
    pub inv_scale: f64,
    pub x_norm: Array1<f64>,
    /// Per-neuron dropout factor, 0 or `1 / (1 - p)`.
    pub mask: Option<Array1<f64>>,
    pub y: Array1<f64>,
}

/// Per-sample runtime state of a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    /// Own bucket values `[out, K]`.
    pub buckets: Array2<f64>,
    pub yhat_prev: Array1<f64>,
    pub spikes: Vec<bool>,
    pub magnitudes: Array1<f64>,
    pub thetas: Array1<f64>,
    pub z: Array1<f64>,
    pub spike_count: u64,
    pub cache: Option<LayerCache>,
}

impl LayerState {
    pub fn new(outputs: usize, buckets: usize) -> Self {
        Self {
            buckets: Array2::zeros((outputs, buckets)),
            yhat_prev: Array1::zeros(outputs),
            spikes: vec![false; outputs],
            magnitudes: Array1::zeros(outputs),
            thetas: Array1::zeros(outputs),
            z: Array1::zeros(outputs),
            spike_count: 0,
            cache: None,
        }
    }

    pub fn outputs(&self) -> usize {
        self.yhat_prev.len()
    }

    pub fn reset(&mut self) {
        self.buckets.fill(0.0);
        self.yhat_prev.fill(0.0);
        self.spikes.iter_mut().for_each(|s| *s = false);
        self.magnitudes.fill(0.0);
        self.thetas.fill(0.0);
        self.z.fill(0.0);
        self.spike_count = 0;
        self.cache = None;
    }
}

/// `(x - E[x]) / sqrt(Var[x] + eps) * gamma + beta` with the biased variance.
pub fn layer_norm(
    x: ArrayView1<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    eps: f64,
) -> Array1<f64> {
    let (xhat, _) = standardize(NormKind::Layer, x, eps);
    &xhat * &gamma + &beta
}

/// `x / sqrt(E[x^2] + eps) * gamma + beta`.
pub fn rms_norm(
    x: ArrayView1<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    eps: f64,
) -> Array1<f64> {
    let (xhat, _) = standardize(NormKind::Rms, x, eps);
    &xhat * &gamma + &beta
}

pub(crate) fn standardize(kind: NormKind, x: ArrayView1<f64>, eps: f64) -> (Array1<f64>, f64) {
    let n = x.len() as f64;
    match kind {
        NormKind::None => (x.to_owned(), 1.0),
        NormKind::Layer => {
            let mean = x.sum() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            (x.mapv(|v| (v - mean) * inv), inv)
        }
        NormKind::Rms => {
            let ms = x.iter().map(|v| v * v).sum::<f64>() / n;
            let inv = 1.0 / (ms + eps).sqrt();
            (x.mapv(|v| v * inv), inv)
        }
    }
}

impl DenseGammaLayer {
    /// Zero-initialized layer; see `learning::init_parameters` for random init.
    pub fn new(inputs: usize, outputs: usize, buckets: usize, layout: BucketLayout) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
            bucket_weights: BucketWeights::zeros(layout, outputs, inputs, buckets),
            norm_kind: NormKind::None,
            gamma: Array1::ones(outputs),
            beta: Array1::zeros(outputs),
            eps: 1e-5,
            dropout: 0.0,
            threshold: ThresholdConfig::default(),
            trainable: Trainable::all(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn buckets(&self) -> usize {
        match &self.bucket_weights {
            BucketWeights::PerNeuron(v) => v.ncols(),
            BucketWeights::PerSynapse(v) => v.shape()[2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (out, inp, k) = (self.outputs(), self.inputs(), self.buckets());
        let ok = self.bias.len() == out
            && self.gamma.len() == out
            && self.beta.len() == out
            && match &self.bucket_weights {
                BucketWeights::PerNeuron(v) => v.dim() == (out, k),
                BucketWeights::PerSynapse(v) => v.dim() == (out, inp, k),
            };
        if !ok {
            return Err(Error::Shape(format!("inconsistent parameter shapes in {out}x{inp} layer")));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps = {}", self.eps)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout = {}", self.dropout)));
        }
        self.threshold.validate()
    }

    /// `x_j = sum_i sum_k yhat_ik w_ji v^k + b_j`.
    pub fn pre_activation(&self, input: ArrayView2<f64>) -> Result<(Array1<f64>, Option<Array2<f64>>)> {
        if input.dim() != (self.inputs(), self.buckets()) {
            return Err(Error::Shape(format!(
                "upstream buckets {:?}, layer expects ({}, {})",
                input.dim(),
                self.inputs(),
                self.buckets()
            )));
        }
        match &self.bucket_weights {
            BucketWeights::PerNeuron(v) => {
                let mut weighted = Array2::zeros((self.outputs(), self.buckets()));
                general_mat_mul(1.0, &self.weights, &input, 0.0, &mut weighted);
                let x = (&weighted * v).sum_axis(Axis(1)) + &self.bias;
                Ok((x, Some(weighted)))
            }
            BucketWeights::PerSynapse(v) => {
                let mut x = self.bias.clone();
                for (j, xj) in x.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (i, w) in self.weights.row(j).iter().enumerate() {
                        let filt: f64 = v
                            .slice(ndarray::s![j, i, ..])
                            .iter()
                            .zip(input.row(i))
                            .map(|(a, b)| a * b)
                            .sum();
                        acc += w * filt;
                    }
                    *xj += acc;
                }
                Ok((x, None))
            }
        }
    }

    /// Rectified, optionally dropped-out neuron signal with all intermediates.
    pub fn signal<R: Rng + ?Sized>(
        &self,
        input: ArrayView2<f64>,
        train_mode: bool,
        rng: &mut R,
    ) -> Result<LayerCache> {
        let (x, weighted) = self.pre_activation(input)?;
        let (xhat, inv_scale) = standardize(self.norm_kind, x.view(), self.eps);
        let x_norm = match self.norm_kind {
            NormKind::None => xhat.clone(),
            _ => &xhat * &self.gamma + &self.beta,
        };
        let mut y = x_norm.mapv(|v| v.max(0.0));
        let mask = if train_mode && self.dropout > 0.0 {
            let keep = 1.0 / (1.0 - self.dropout);
            let m: Array1<f64> = (0..y.len())
                .map(|_| if rng.random::<f64>() < self.dropout { 0.0 } else { keep })
                .collect();
            y *= &m;
            Some(m)
        } else {
            None
        };
        Ok(LayerCache {
            input: input.to_owned(),
            weighted,
            x,
            xhat,
            inv_scale,
            x_norm,
            mask,
            y,
        })
    }

    /// Run every neuron's encoder on `y` and record spikes in `state`.
    pub fn encode(&self, y: ArrayView1<f64>, alphas: &[f64], state: &mut LayerState) {
        for (j, mut row) in state.buckets.axis_iter_mut(Axis(0)).enumerate() {
            let buckets = row.as_slice_mut().expect("row-major buckets");
            let Emission { spike, z, theta, magnitude, .. } =
                encode_into(y[j], buckets, &mut state.yhat_prev[j], alphas, &self.threshold);
            state.spikes[j] = spike;
            state.magnitudes[j] = magnitude;
            state.thetas[j] = theta;
            state.z[j] = z;
            state.spike_count += u64::from(spike);
        }
    }

    /// Full forward step: signal, encoding, and cache retention.
    pub fn forward_step<R: Rng + ?Sized>(
        &self,
        input: ArrayView2<f64>,
        alphas: &[f64],
        state: &mut LayerState,
        train_mode: bool,
        rng: &mut R,
    ) -> Result<Array1<f64>> {
        let cache = self.signal(input, train_mode, rng)?;
        self.encode(cache.y.view(), alphas, state);
        let y = cache.y.clone();
        state.cache = Some(cache);
        Ok(y)
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len() + self.bucket_weights.as_slice().len() + 2 * self.gamma.len()
    }
}
