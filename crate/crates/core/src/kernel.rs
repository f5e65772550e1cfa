//! Leaky-bucket cascade ("gamma kernel") temporal memory.
//!
//! Each unit owns `K` buckets. Bucket 0 leaks at rate `alpha[0]` and receives
//! injected magnitudes directly; bucket `k > 0` keeps `alpha[k]` of its own
//! content and receives `1 - alpha[k]` of bucket `k - 1` from the previous
//! step. The cascade is linear and time invariant, so the same trajectory can
//! be obtained either by stepping the recursion or by superposing the impulse
//! responses tabulated in a [`KernelTable`].

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a bucket cascade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Number of buckets `K`.
    pub buckets: usize,
    /// Transfer-rate factor `F`; `alpha_k = l_k^F`.
    pub rate_factor: f64,
    pub l_start: f64,
    pub l_end: f64,
    /// Milliseconds per simulation step.
    pub dt_ms: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            buckets: 10,
            rate_factor: 0.15,
            l_start: 0.1,
            l_end: 0.9,
            dt_ms: 3.6,
        }
    }
}

impl KernelConfig {
    pub fn new(buckets: usize, rate_factor: f64) -> Self {
        Self {
            buckets,
            rate_factor,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.buckets == 0 {
            return Err(Error::InvalidKernel("bucket count must be at least 1".into()));
        }
        let in_open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_open_unit(self.l_start) || !in_open_unit(self.l_end) {
            return Err(Error::InvalidKernel(format!(
                "linspace endpoints ({}, {}) must lie in (0, 1)",
                self.l_start, self.l_end
            )));
        }
        if self.l_start > self.l_end {
            return Err(Error::InvalidKernel(format!(
                "l_start {} exceeds l_end {}",
                self.l_start, self.l_end
            )));
        }
        if !(0.0..=1.0).contains(&self.rate_factor) {
            return Err(Error::InvalidKernel(format!(
                "rate factor {} outside [0, 1]",
                self.rate_factor
            )));
        }
        if !(self.dt_ms.is_finite() && self.dt_ms > 0.0) {
            return Err(Error::InvalidKernel(format!("timestep {} ms", self.dt_ms)));
        }
        Ok(())
    }

    pub fn alphas(&self) -> Result<Vec<f64>> {
        init_transfer_rates(self)
    }

    /// Same cascade expressed for a timestep `ratio` times as long.
    ///
    /// Scaling `F` by `ratio` gives `l^(F * ratio) = alpha^ratio`, identical to
    /// [`rescale_for_timestep`] applied to the derived rates.
    pub fn rescaled(&self, ratio: f64) -> Result<Self> {
        if !(ratio.is_finite() && ratio > 0.0) {
            return Err(Error::InvalidArgument(format!("timestep ratio {ratio}")));
        }
        let cfg = Self {
            rate_factor: self.rate_factor * ratio,
            dt_ms: self.dt_ms * ratio,
            ..*self
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `alpha_k = l_k^F` with `l` linearly spaced over `[l_start, l_end]`,
/// both endpoints included. A single bucket uses `l_start`.
pub fn init_transfer_rates(config: &KernelConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let k = config.buckets;
    let span = config.l_end - config.l_start;
    Ok((0..k)
        .map(|i| {
            let l = if k == 1 {
                config.l_start
            } else {
                config.l_start + span * i as f64 / (k - 1) as f64
            };
            l.powf(config.rate_factor)
        })
        .collect())
}

/// Advance bucket values by one step in place.
///
/// Every bucket reads the previous-step values, so the loop runs from the
/// last bucket down to bucket 0.
#[inline]
pub fn step_buckets(values: &mut [f64], alphas: &[f64], injected: f64) {
    debug_assert_eq!(values.len(), alphas.len());
    for k in (1..values.len()).rev() {
        values[k] = values[k] * alphas[k] + values[k - 1] * (1.0 - alphas[k]);
    }
    if let Some(first) = values.first_mut() {
        *first = *first * alphas[0] + injected;
    }
}

/// Sum of bucket values, accumulated in bucket order.
#[inline]
pub fn bucket_sum(values: &[f64]) -> f64 {
    values.iter().sum()
}

/// Bucket cascade state of a single unit.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketBank {
    values: Vec<f64>,
    alphas: Vec<f64>,
}

impl BucketBank {
    pub fn new(alphas: Vec<f64>) -> Self {
        Self {
            values: vec![0.0; alphas.len()],
            alphas,
        }
    }

    pub fn from_config(config: &KernelConfig) -> Result<Self> {
        Ok(Self::new(init_transfer_rates(config)?))
    }

    pub fn with_values(values: Vec<f64>, alphas: Vec<f64>) -> Result<Self> {
        if values.len() != alphas.len() {
            return Err(Error::Shape(format!(
                "{} bucket values for {} transfer rates",
                values.len(),
                alphas.len()
            )));
        }
        Ok(Self { values, alphas })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        bucket_sum(&self.values)
    }

    pub(crate) fn split_mut(&mut self) -> (&mut [f64], &[f64]) {
        (&mut self.values, &self.alphas)
    }

    pub fn reset(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn step(&mut self, injected: f64) {
        step_buckets(&mut self.values, &self.alphas, injected);
    }

    /// Value-returning form of [`BucketBank::step`].
    pub fn stepped(mut self, injected: f64) -> Self {
        self.step(injected);
        self
    }
}

/// Impulse responses `kappa[k][tau]` of every bucket for lags `0..horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    kappa: Array2<f64>,
}

impl KernelTable {
    pub fn horizon(&self) -> usize {
        self.kappa.ncols()
    }

    pub fn buckets(&self) -> usize {
        self.kappa.nrows()
    }

    pub fn kappa(&self) -> &Array2<f64> {
        &self.kappa
    }

    pub fn get(&self, k: usize, tau: usize) -> f64 {
        self.kappa[[k, tau]]
    }

    /// `sum_k kappa[k][tau]`, the unit's total response at lag `tau`.
    pub fn total_response(&self) -> Vec<f64> {
        (0..self.horizon())
            .map(|tau| self.kappa.column(tau).iter().sum())
            .collect()
    }

    /// CSV with columns `k,tau,kappa`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,tau,kappa")?;
        for ((k, tau), v) in self.kappa.indexed_iter() {
            writeln!(out, "{k},{tau},{v:e}")?;
        }
        Ok(())
    }
}

/// Tabulate the response to a unit injection at lag 0.
pub fn impulse_response(alphas: &[f64], horizon: usize) -> Result<KernelTable> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("kernel horizon must be at least 1".into()));
    }
    if alphas.is_empty() {
        return Err(Error::InvalidKernel("no transfer rates".into()));
    }
    let mut values = vec![0.0; alphas.len()];
    let mut kappa = Array2::zeros((alphas.len(), horizon));
    for tau in 0..horizon {
        step_buckets(&mut values, alphas, if tau == 0 { 1.0 } else { 0.0 });
        kappa.column_mut(tau).assign(&ndarray::ArrayView1::from(&values[..]));
    }
    Ok(KernelTable { kappa })
}

/// Bucket values at time `t` from a list of `(time, magnitude)` injections.
///
/// An injection at `t` itself contributes `magnitude * kappa[k][0]`, matching
/// a step of [`step_buckets`] that carries the injection.
pub fn superpose(table: &KernelTable, spikes: &[(usize, f64)], t: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; table.buckets()];
    for &(time, magnitude) in spikes {
        if time > t {
            return Err(Error::SpikeAfterQuery {
                spike: time,
                query: t,
            });
        }
        let lag = t - time;
        if lag >= table.horizon() {
            return Err(Error::HorizonExceeded {
                horizon: table.horizon(),
                lag,
            });
        }
        for (k, slot) in out.iter_mut().enumerate() {
            *slot += magnitude * table.kappa[[k, lag]];
        }
    }
    Ok(out)
}

/// Rates for a timestep `ratio = dt_new / dt_old` times the original: `alpha^ratio`.
pub fn rescale_for_timestep(alphas: &[f64], ratio: f64) -> Result<Vec<f64>> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::InvalidArgument(format!("timestep ratio {ratio}")));
    }
    Ok(alphas.iter().map(|a| a.powf(ratio)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rates_identity_exponent() {
        let cfg = KernelConfig {
            buckets: 2,
            rate_factor: 1.0,
            l_start: 0.1,
            l_end: 0.9,
            dt_ms: 1.0,
        };
        let a = init_transfer_rates(&cfg).unwrap();
        assert!(close(a[0], 0.1, 1e-15) && close(a[1], 0.9, 1e-15));
    }

    #[test]
    fn rates_zero_exponent_are_one() {
        for k in [1, 3, 10] {
            let a = init_transfer_rates(&KernelConfig::new(k, 0.0)).unwrap();
            assert!(a.iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn rates_shd_configuration() {
        // mpmath, 40 digits: 0.1^0.15 and 0.9^0.15
        let a = init_transfer_rates(&KernelConfig::new(10, 0.15)).unwrap();
        assert!(close(a[0], 0.7079457843841379, 1e-14));
        assert!(close(a[9], 0.9843201517785072, 1e-14));
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn single_bucket_uses_start() {
        let a = init_transfer_rates(&KernelConfig::new(1, 1.0)).unwrap();
        assert_eq!(a, vec![0.1]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(init_transfer_rates(&KernelConfig::new(0, 0.1)).is_err());
        let mut cfg = KernelConfig::new(3, 0.1);
        cfg.l_start = 0.0;
        assert!(init_transfer_rates(&cfg).is_err());
        cfg.l_start = 0.2;
        cfg.l_end = 1.0;
        assert!(init_transfer_rates(&cfg).is_err());
        cfg.l_end = 0.1;
        assert!(init_transfer_rates(&cfg).is_err());
    }

    #[test]
    fn step_examples() {
        let alphas = vec![0.708, 0.8, 0.9];
        let bank = BucketBank::new(alphas.clone()).stepped(0.0);
        assert_eq!(bank.values(), &[0.0, 0.0, 0.0]);

        let bank = bank.stepped(0.4);
        assert_eq!(bank.values(), &[0.4, 0.0, 0.0]);

        let bank = bank.stepped(0.0);
        assert!(close(bank.values()[0], 0.4 * 0.708, 1e-15));
        assert!(close(bank.values()[1], 0.4 * (1.0 - 0.8), 1e-15));
        assert_eq!(bank.values()[2], 0.0);
    }

    #[test]
    fn impulse_examples() {
        let table = impulse_response(&[0.708, 0.8], 5).unwrap();
        assert_eq!(table.get(0, 0), 1.0);
        assert_eq!(table.get(1, 0), 0.0);
        assert!(close(table.get(1, 1), 1.0 - 0.8, 1e-15));
        assert!(close(table.get(0, 2), 0.501264, 1e-12));
        for tau in 0..5 {
            assert_eq!(table.get(0, tau), 0.708f64.powi(tau as i32));
        }
        assert!(impulse_response(&[0.5], 0).is_err());
    }

    #[test]
    fn superpose_examples() {
        let alphas = init_transfer_rates(&KernelConfig::new(4, 0.15)).unwrap();
        let table = impulse_response(&alphas, 10).unwrap();
        assert_eq!(superpose(&table, &[], 3).unwrap(), vec![0.0; 4]);
        let v = superpose(&table, &[(0, 0.4)], 2).unwrap();
        for k in 0..4 {
            assert_eq!(v[k], 0.4 * table.get(k, 2));
        }
        assert!(matches!(
            superpose(&table, &[(0, 1.0)], 10),
            Err(Error::HorizonExceeded { .. })
        ));
        assert!(superpose(&table, &[(5, 1.0)], 4).is_err());
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_for_timestep(&[0.708], 1.0).unwrap(), vec![0.708]);
        let quarter = rescale_for_timestep(&[0.708], 0.25).unwrap()[0];
        assert!(close(quarter, 0.9172934964985336, 1e-14));
        let double = rescale_for_timestep(&[0.708], 2.0).unwrap()[0];
        assert!(close(double, 0.501264, 1e-14));
        assert!(rescale_for_timestep(&[0.5], 0.0).is_err());
    }

    #[test]
    fn config_rescale_matches_rate_rescale() {
        let cfg = KernelConfig::new(10, 0.15);
        let direct = rescale_for_timestep(&cfg.alphas().unwrap(), 0.5).unwrap();
        let via_cfg = cfg.rescaled(0.5).unwrap().alphas().unwrap();
        for (a, b) in direct.iter().zip(&via_cfg) {
            assert!(close(*a, *b, 1e-14));
        }
    }

    #[test]
    fn kernel_csv_layout() {
        let table = impulse_response(&[0.5, 0.5], 2).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "k,tau,kappa");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,0,"));
    }
}
