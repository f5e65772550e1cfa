//! Sigma-delta spike coding with adaptive thresholds.
//!
//! A neuron compares its rectified signal `y(t)` with its own running
//! estimate `yhat(t-1)`, the sum of its buckets. When the mismatch exceeds
//! `theta(t) = theta0 + yhat(t-1) * mf` it emits a spike and injects
//! `2 * theta(t)` into bucket 0. Receivers running the same cascade rebuild
//! the estimate bit for bit from the spike train.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{bucket_sum, step_buckets, BucketBank};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    /// Minimum threshold.
    pub theta0: f64,
    /// Threshold growth per unit of `yhat(t-1)`.
    pub mf: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self::adaptive(0.2)
    }
}

impl ThresholdConfig {
    /// `mf = theta0`.
    pub fn adaptive(theta0: f64) -> Self {
        Self { theta0, mf: theta0 }
    }

    pub fn fixed(theta0: f64) -> Self {
        Self { theta0, mf: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta0.is_finite() && self.theta0 > 0.0) {
            return Err(Error::InvalidThreshold(format!("theta0 = {}", self.theta0)));
        }
        if !(self.mf.is_finite() && self.mf >= 0.0) {
            return Err(Error::InvalidThreshold(format!("mf = {}", self.mf)));
        }
        Ok(())
    }
}

#[inline]
pub fn adaptive_threshold(yhat_prev: f64, cfg: &ThresholdConfig) -> f64 {
    cfg.theta0 + yhat_prev * cfg.mf
}

/// What happened during one encoder step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub spike: bool,
    /// `y - yhat(t-1)`.
    pub z: f64,
    pub theta: f64,
    /// Injected magnitude, `2 * theta` on a spike and 0 otherwise.
    pub magnitude: f64,
    /// Estimate after the bucket update.
    pub yhat: f64,
}

/// One encoder step on raw bucket storage; `yhat_prev` is updated in place.
#[inline]
pub fn encode_into(
    y: f64,
    buckets: &mut [f64],
    yhat_prev: &mut f64,
    alphas: &[f64],
    cfg: &ThresholdConfig,
) -> Emission {
    let theta = adaptive_threshold(*yhat_prev, cfg);
    let z = y - *yhat_prev;
    let spike = z > theta;
    let magnitude = if spike { 2.0 * theta } else { 0.0 };
    step_buckets(buckets, alphas, magnitude);
    let yhat = bucket_sum(buckets);
    *yhat_prev = yhat;
    Emission {
        spike,
        z,
        theta,
        magnitude,
        yhat,
    }
}

/// Encoder state of a single neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaDeltaState {
    buckets: BucketBank,
    yhat_prev: f64,
    last_spike: bool,
    last_magnitude: f64,
}

impl SigmaDeltaState {
    pub fn new(alphas: Vec<f64>) -> Self {
        Self {
            buckets: BucketBank::new(alphas),
            yhat_prev: 0.0,
            last_spike: false,
            last_magnitude: 0.0,
        }
    }

    pub fn buckets(&self) -> &BucketBank {
        &self.buckets
    }

    pub fn yhat_prev(&self) -> f64 {
        self.yhat_prev
    }

    pub fn last_spike(&self) -> bool {
        self.last_spike
    }

    pub fn last_magnitude(&self) -> f64 {
        self.last_magnitude
    }
}

/// Advance the encoder by one step with rectified input `y`.
pub fn encode_step(y: f64, state: &mut SigmaDeltaState, cfg: &ThresholdConfig) -> Emission {
    let (values, alphas) = state.buckets.split_mut();
    let e = encode_into(y, values, &mut state.yhat_prev, alphas, cfg);
    state.last_spike = e.spike;
    state.last_magnitude = e.magnitude;
    e
}

/// How spikes travel between neurons.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeMode {
    /// Each spike carries its `2 * theta` magnitude.
    #[default]
    Graded,
    /// Spikes are unit events; the receiver recomputes `theta` from its own
    /// reconstruction.
    Binary,
}

/// Receiver-side reconstruction of one upstream neuron's buckets.
#[derive(Debug, Clone)]
pub struct SpikeReceiver {
    buckets: Vec<f64>,
    yhat_prev: f64,
    mode: SpikeMode,
    threshold: ThresholdConfig,
}

impl SpikeReceiver {
    pub fn new(buckets: usize, mode: SpikeMode, threshold: ThresholdConfig) -> Self {
        Self {
            buckets: vec![0.0; buckets],
            yhat_prev: 0.0,
            mode,
            threshold,
        }
    }

    /// Advance one step. `event` is `Some(magnitude)` for an incoming spike;
    /// the magnitude is ignored in binary mode.
    pub fn receive(&mut self, event: Option<f64>, alphas: &[f64]) {
        let injected = match (event, self.mode) {
            (None, _) => 0.0,
            (Some(m), SpikeMode::Graded) => m,
            (Some(_), SpikeMode::Binary) => 2.0 * adaptive_threshold(self.yhat_prev, &self.threshold),
        };
        step_buckets(&mut self.buckets, alphas, injected);
        self.yhat_prev = bucket_sum(&self.buckets);
    }

    pub fn buckets(&self) -> &[f64] {
        &self.buckets
    }

    pub fn yhat(&self) -> f64 {
        self.yhat_prev
    }
}

/// Rebuild per-bucket values at time `t` from `(time, magnitude)` spikes.
pub fn reconstruct_at_receiver(spikes: &[(usize, f64)], alphas: &[f64], t: usize) -> Result<Vec<f64>> {
    if let Some(&(late, _)) = spikes.iter().find(|(s, _)| *s > t) {
        return Err(Error::SpikeAfterQuery { spike: late, query: t });
    }
    let mut buckets = vec![0.0; alphas.len()];
    let mut next = 0;
    for step in 0..=t {
        let mut injected = 0.0;
        while next < spikes.len() && spikes[next].0 == step {
            injected += spikes[next].1;
            next += 1;
        }
        step_buckets(&mut buckets, alphas, injected);
    }
    Ok(buckets)
}

/// One row of a neuron trace dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub y: f64,
    pub yhat: f64,
    pub z: f64,
    pub theta: f64,
    pub spike: bool,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "t,y,yhat,z,theta,spike")?;
    for r in rows {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{}",
            r.t,
            r.y,
            r.yhat,
            r.z,
            r.theta,
            u8::from(r.spike)
        )?;
    }
    Ok(())
}

/// Drive a fresh encoder with a signal and record every step.
pub fn trace_signal(signal: &[f64], alphas: &[f64], cfg: &ThresholdConfig) -> Vec<TraceRow> {
    let mut state = SigmaDeltaState::new(alphas.to_vec());
    signal
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            let e = encode_step(y, &mut state, cfg);
            TraceRow {
                t,
                y,
                yhat: e.yhat,
                z: e.z,
                theta: e.theta,
                spike: e.spike,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{init_transfer_rates, KernelConfig};

    fn alphas() -> Vec<f64> {
        init_transfer_rates(&KernelConfig::new(10, 0.15)).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let cfg = ThresholdConfig::adaptive(0.2);
        assert_eq!(adaptive_threshold(0.0, &cfg), 0.2);
        assert!((adaptive_threshold(1.0, &cfg) - 0.4).abs() < 1e-15);
        let fixed = ThresholdConfig::fixed(0.2);
        assert_eq!(adaptive_threshold(123.0, &fixed), 0.2);
        assert!(ThresholdConfig::fixed(0.0).validate().is_err());
    }

    #[test]
    fn silent_input_never_spikes() {
        let rows = trace_signal(&[0.0; 200], &alphas(), &ThresholdConfig::default());
        assert!(rows.iter().all(|r| !r.spike && r.yhat == 0.0));
    }

    #[test]
    fn first_step_examples() {
        let cfg = ThresholdConfig::adaptive(0.2);
        let mut s = SigmaDeltaState::new(alphas());
        let e = encode_step(0.3, &mut s, &cfg);
        assert!(e.spike);
        assert!((s.buckets().values()[0] - 0.4).abs() < 1e-15);
        assert!((s.yhat_prev() - 0.4).abs() < 1e-15);

        let mut s = SigmaDeltaState::new(alphas());
        assert!(!encode_step(0.15, &mut s, &cfg).spike);
        // tie does not spike
        let mut s = SigmaDeltaState::new(alphas());
        assert!(!encode_step(0.2, &mut s, &cfg).spike);
    }

    #[test]
    fn cached_estimate_matches_bucket_sum() {
        let cfg = ThresholdConfig::default();
        let mut s = SigmaDeltaState::new(alphas());
        for t in 0..300 {
            let y = 1.5 + (t as f64 * 0.05).sin();
            encode_step(y, &mut s, &cfg);
            assert_eq!(s.yhat_prev(), s.buckets().total());
            assert!(s.yhat_prev() >= 0.0);
        }
    }

    #[test]
    fn estimate_leaks_between_spikes() {
        let rows = trace_signal(
            &(0..400).map(|t| if t < 100 { 2.0 } else { 0.3 }).collect::<Vec<_>>(),
            &alphas(),
            &ThresholdConfig::default(),
        );
        for w in rows.windows(2) {
            if !w[1].spike {
                assert!(w[1].yhat <= w[0].yhat);
            }
        }
    }

    #[test]
    fn receiver_examples() {
        let a = alphas();
        assert_eq!(reconstruct_at_receiver(&[], &a, 5).unwrap(), vec![0.0; 10]);
        let v = reconstruct_at_receiver(&[(0, 0.4)], &a, 1).unwrap();
        assert_eq!(v[0], 0.4 * a[0]);
        assert!(reconstruct_at_receiver(&[(3, 0.4)], &a, 1).is_err());
    }

    #[test]
    fn receiver_replays_sender() {
        let a = alphas();
        let cfg = ThresholdConfig::default();
        let signal: Vec<f64> = (0..500).map(|t| 3.0 * ((t as f64) * 0.02).sin().abs()).collect();
        let mut sender = SigmaDeltaState::new(a.clone());
        let mut graded = SpikeReceiver::new(a.len(), SpikeMode::Graded, cfg);
        let mut binary = SpikeReceiver::new(a.len(), SpikeMode::Binary, cfg);
        let mut spikes = Vec::new();
        for (t, &y) in signal.iter().enumerate() {
            let e = encode_step(y, &mut sender, &cfg);
            let ev = e.spike.then_some(e.magnitude);
            if e.spike {
                spikes.push((t, e.magnitude));
            }
            graded.receive(ev, &a);
            binary.receive(ev.map(|_| 1.0), &a);
            assert_eq!(graded.buckets(), sender.buckets().values());
            assert_eq!(binary.buckets(), sender.buckets().values());
        }
        assert!(!spikes.is_empty());
        let last = signal.len() - 1;
        let replay = reconstruct_at_receiver(&spikes, &a, last).unwrap();
        assert_eq!(replay.as_slice(), sender.buckets().values());
    }

    #[test]
    fn trace_csv_header() {
        let rows = trace_signal(&[0.5, 0.0], &alphas(), &ThresholdConfig::default());
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,y,yhat,z,theta,spike\n0,"));
        assert!(text.lines().nth(1).unwrap().ends_with(",1"));
    }
}
