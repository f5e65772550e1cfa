use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::network::Network;

/// Standard deviation of the initial bucket weights.
pub const BUCKET_WEIGHT_STD: f64 = 0.1;

/// Weights and biases from `U(-sqrt(1/fan_in), sqrt(1/fan_in))`, bucket
/// weights from `N(0, 0.1)`, gains 1 and norm biases 0.
pub fn init_parameters<R: Rng + ?Sized>(net: &mut Network, rng: &mut R) {
    let normal = Normal::new(0.0, BUCKET_WEIGHT_STD).expect("valid std");
    for layer in &mut net.layers {
        let bound = (1.0 / layer.inputs() as f64).sqrt();
        let uniform = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
        layer.weights.mapv_inplace(|_| uniform.sample(rng));
        layer.bias.mapv_inplace(|_| uniform.sample(rng));
        layer
            .bucket_weights
            .as_slice_mut()
            .iter_mut()
            .for_each(|v| *v = normal.sample(rng));
        layer.gamma.fill(1.0);
        layer.beta.fill(0.0);
    }
}
