//! Per-timestep analytic gradients.
//!
//! The error at the output estimate is passed to the neuron signal unchanged
//! (`d yhat / d y = 1`), so no derivative of the spike function is needed and
//! nothing from earlier timesteps is read: the bucket matrices cached during
//! this step's forward pass already summarize the whole input history.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::network::{BucketWeights, DenseGammaLayer, LayerCache, Network, NetworkState, NormKind};

/// Gradients for one layer, shaped like its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub bucket_weights: BucketWeights,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerGrads {
    fn zeros_like(layer: &DenseGammaLayer) -> Self {
        Self {
            weights: Array2::zeros(layer.weights.raw_dim()),
            bias: Array1::zeros(layer.outputs()),
            bucket_weights: BucketWeights::zeros(
                layer.bucket_weights.layout(),
                layer.outputs(),
                layer.inputs(),
                layer.buckets(),
            ),
            gamma: Array1::zeros(layer.outputs()),
            beta: Array1::zeros(layer.outputs()),
        }
    }

    /// Slices in the fixed order weights, bias, bucket weights, gamma, beta.
    pub fn groups(&self) -> [&[f64]; 5] {
        [
            self.weights.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
            self.bucket_weights.as_slice(),
            self.gamma.as_slice().expect("standard layout"),
            self.beta.as_slice().expect("standard layout"),
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.weights.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
            self.bucket_weights.as_slice_mut(),
            self.gamma.as_slice_mut().expect("standard layout"),
            self.beta.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Accumulated gradients of a whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffers {
    pub layers: Vec<LayerGrads>,
}

impl GradientBuffers {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net.layers.iter().map(LayerGrads::zeros_like).collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            for g in l.groups_mut() {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    pub fn add_assign(&mut self, other: &GradientBuffers) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (ga, gb) in a.groups_mut().into_iter().zip(b.groups()) {
                ga.iter_mut().zip(gb).for_each(|(x, y)| *x += y);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for g in l.groups_mut() {
                g.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.groups().into_iter().flat_map(|g| g.iter().copied()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Gradient of `x` given the gradient of the normalized signal.
fn normalization_backward(
    kind: NormKind,
    cache: &LayerCache,
    gamma: ArrayView1<f64>,
    d_xnorm: &Array1<f64>,
    grads: &mut LayerGrads,
) -> Array1<f64> {
    if kind == NormKind::None {
        return d_xnorm.clone();
    }
    grads.gamma.scaled_add(1.0, &(d_xnorm * &cache.xhat));
    grads.beta.scaled_add(1.0, d_xnorm);
    let d_xhat = d_xnorm * &gamma;
    let n = d_xhat.len() as f64;
    let proj = (&d_xhat * &cache.xhat).sum() / n;
    match kind {
        NormKind::Layer => {
            let mean = d_xhat.sum() / n;
            (&d_xhat - mean - &cache.xhat * proj) * cache.inv_scale
        }
        NormKind::Rms => (&d_xhat - &cache.xhat * proj) * cache.inv_scale,
        NormKind::None => unreachable!(),
    }
}

/// Backward through one layer for one step.
///
/// `dy` is the gradient with respect to the layer's (post-dropout) signal.
/// Returns the gradient with respect to the upstream neurons' signals when
/// `want_upstream` is set.
pub(crate) fn layer_backward(
    layer: &DenseGammaLayer,
    cache: &LayerCache,
    dy: ArrayView1<f64>,
    gain_loss: f64,
    grads: &mut LayerGrads,
    want_upstream: bool,
) -> Option<Array1<f64>> {
    let mut d_relu = dy.to_owned();
    if let Some(mask) = &cache.mask {
        d_relu *= mask;
    }
    let d_xnorm: Array1<f64> = d_relu
        .iter()
        .zip(&cache.x_norm)
        .map(|(g, &xn)| if xn > 0.0 { *g } else { 0.0 })
        .collect();
    let dx = normalization_backward(layer.norm_kind, cache, layer.gamma.view(), &d_xnorm, grads);
    if layer.norm_kind != NormKind::None && gain_loss != 0.0 {
        grads.gamma.mapv_inplace(|g| g + gain_loss);
    }
    let train = layer.trainable;
    if train.bias {
        grads.bias.scaled_add(1.0, &dx);
    }
    let u = &cache.input;
    match (&layer.bucket_weights, &mut grads.bucket_weights) {
        (BucketWeights::PerNeuron(v), BucketWeights::PerNeuron(dv)) => {
            let weighted = cache.weighted.as_ref().expect("per-neuron cache keeps W.U");
            let dx_col = dx.view().insert_axis(Axis(1));
            if train.bucket_weights {
                dv.scaled_add(1.0, &(weighted * &dx_col));
            }
            if train.weights {
                let d = v * &dx_col;
                general_mat_mul(1.0, &d, &u.t(), 1.0, &mut grads.weights);
            }
            want_upstream.then(|| {
                let vsum = v.sum_axis(Axis(1));
                layer.weights.t().dot(&(&dx * &vsum))
            })
        }
        (BucketWeights::PerSynapse(v), BucketWeights::PerSynapse(dv)) => {
            let (out, inp, k) = v.dim();
            let mut up = want_upstream.then(|| Array1::zeros(inp));
            for j in 0..out {
                let g = dx[j];
                if g == 0.0 {
                    continue;
                }
                for i in 0..inp {
                    let w = layer.weights[[j, i]];
                    let mut filt = 0.0;
                    let mut vsum = 0.0;
                    for kk in 0..k {
                        let vv = v[[j, i, kk]];
                        filt += vv * u[[i, kk]];
                        vsum += vv;
                        if train.bucket_weights {
                            dv[[j, i, kk]] += g * w * u[[i, kk]];
                        }
                    }
                    if train.weights {
                        grads.weights[[j, i]] += g * filt;
                    }
                    if let Some(up) = up.as_mut() {
                        up[i] += g * w * vsum;
                    }
                }
            }
            up
        }
        _ => panic!("gradient buffer layout does not match layer"),
    }
}

/// Accumulate this step's gradient contribution into `grads`.
///
/// Consumes the forward caches stored in `state`; calling twice without an
/// intervening forward step is an error.
pub fn backward_step(
    net: &Network,
    state: &mut NetworkState,
    dl_dyout: ArrayView1<f64>,
    gain_loss: f64,
    grads: &mut GradientBuffers,
) -> Result<()> {
    if dl_dyout.len() != net.outputs() {
        return Err(Error::Shape(format!(
            "output gradient has {} entries for {} outputs",
            dl_dyout.len(),
            net.outputs()
        )));
    }
    let caches: Vec<LayerCache> = state
        .layers
        .iter_mut()
        .enumerate()
        .map(|(l, s)| s.cache.take().ok_or(Error::MissingCache(l)))
        .collect::<Result<_>>()?;
    let mut dy = dl_dyout.to_owned();
    for l in (0..net.layers.len()).rev() {
        let up = layer_backward(&net.layers[l], &caches[l], dy.view(), gain_loss, &mut grads.layers[l], l > 0);
        if let Some(up) = up {
            dy = up;
        }
    }
    Ok(())
}
