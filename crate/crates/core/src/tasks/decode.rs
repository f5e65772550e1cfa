//! Readout rules and activity metrics.

use ndarray::{ArrayView2, Axis};

use crate::error::{Error, Result};

fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Time-to-first-spike readout.
///
/// The earliest first spike wins; ties go to the larger estimate at that
/// step; with no output spikes at all, the class with the largest
/// time-summed estimate wins.
pub fn ttfs_decode(first_spikes: &[Option<usize>], yhat_out: ArrayView2<f64>) -> Result<usize> {
    if first_spikes.is_empty() {
        return Err(Error::InvalidArgument("no output neurons".into()));
    }
    if yhat_out.ncols() != first_spikes.len() {
        return Err(Error::Shape(format!(
            "{} first-spike entries for {} output columns",
            first_spikes.len(),
            yhat_out.ncols()
        )));
    }
    match first_spikes.iter().flatten().min() {
        Some(&t) => Ok(argmax(
            first_spikes
                .iter()
                .zip(yhat_out.row(t))
                .map(|(s, &v)| if *s == Some(t) { v } else { f64::NEG_INFINITY }),
        )),
        None => Ok(argmax(yhat_out.sum_axis(Axis(0)))),
    }
}

/// First spike step per output neuron from a `[T, classes]` spike raster.
pub fn first_spike_times(spikes: ArrayView2<bool>) -> Vec<Option<usize>> {
    spikes.columns().into_iter().map(|c| c.iter().position(|&s| s)).collect()
}

/// Argmax over classes of the time-summed output signal.
pub fn classify_by_sum(y_out: ArrayView2<f64>) -> usize {
    argmax(y_out.sum_axis(Axis(0)))
}

/// Mean spike count per hidden neuron per sample.
pub fn spike_density(spike_counts: &[u64], n_neurons: usize) -> Result<f64> {
    if spike_counts.is_empty() || n_neurons == 0 {
        return Err(Error::InvalidArgument("spike density needs samples and neurons".into()));
    }
    let total: u64 = spike_counts.iter().sum();
    Ok(total as f64 / (spike_counts.len() * n_neurons) as f64)
}
