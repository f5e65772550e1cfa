//! Generators for the delay, coincidence and synthetic event-classification
//! tasks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::impulse_response;
use crate::learning::{LossKind, StepTarget};
use crate::tasks::events::{Event, EventStream, FrameSequence};

/// Frames, a class label and an optional `[T, classes]` target estimate trace.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub frames: FrameSequence,
    pub label: usize,
    pub target_trace: Option<Array2<f64>>,
}

impl LabeledSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Per-step supervision for `kind`.
    pub fn step_targets(&self, kind: LossKind) -> Result<Vec<StepTarget>> {
        match kind {
            LossKind::MseOnYhat => {
                let trace = self
                    .target_trace
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("mse loss needs a target trace".into()))?;
                if trace.nrows() != self.len() {
                    return Err(Error::Shape(format!(
                        "target trace has {} rows for {} frames",
                        trace.nrows(),
                        self.len()
                    )));
                }
                Ok(trace.rows().into_iter().map(|r| StepTarget::Trace(r.to_owned())).collect())
            }
            LossKind::CePerStep | LossKind::CeWarmup => Ok(vec![StepTarget::Class(self.label); self.len()]),
        }
    }
}

/// Estimate trace of one spike of magnitude `magnitude` emitted at `at`.
pub fn spike_response_trace(alphas: &[f64], horizon: usize, at: usize, magnitude: f64) -> Result<Vec<f64>> {
    if at >= horizon {
        return Err(Error::InvalidArgument(format!("spike time {at} outside horizon {horizon}")));
    }
    let table = impulse_response(alphas, horizon - at)?;
    let mut trace = vec![0.0; horizon];
    for (tau, v) in table.total_response().into_iter().enumerate() {
        trace[at + tau] = magnitude * v;
    }
    Ok(trace)
}

/// One input spike at t = 0; the target is the estimate trace of a single
/// output spike (magnitude `2 * theta0`) at `delay`.
pub fn gen_delay_task(horizon: usize, delay: usize, alphas: &[f64], theta0: f64) -> Result<LabeledSample> {
    if delay >= horizon {
        return Err(Error::InvalidArgument(format!("delay {delay} must be below horizon {horizon}")));
    }
    let mut frames = Array2::zeros((horizon, 1));
    frames[[0, 0]] = 1.0;
    let trace = spike_response_trace(alphas, horizon, delay, 2.0 * theta0)?;
    Ok(LabeledSample {
        frames: FrameSequence::new(frames, 1.0)?,
        label: 0,
        target_trace: Some(Array2::from_shape_vec((horizon, 1), trace).expect("length matches")),
    })
}

/// Left/right spike times per class in base steps.
pub const COINCIDENCE_PAIRS: [(f64, f64); 4] = [(4.0, 60.0), (4.0, 20.0), (20.0, 4.0), (60.0, 4.0)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoincidenceConfig {
    /// Frames per base step; 2 and 4 give finer temporal resolution.
    pub time_scale: usize,
    /// Sample length in base steps.
    pub horizon: usize,
    /// Target output spike time in base steps.
    pub target_time: usize,
    /// Upper end of the `Uniform(0, jitter)` input jitter, base steps.
    pub jitter: f64,
    pub theta0: f64,
}

impl Default for CoincidenceConfig {
    fn default() -> Self {
        Self {
            time_scale: 1,
            horizon: 260,
            target_time: 200,
            jitter: 2.0,
            theta0: 0.2,
        }
    }
}

impl CoincidenceConfig {
    pub fn frames(&self) -> usize {
        self.horizon * self.time_scale
    }

    pub fn target_frame(&self) -> usize {
        self.target_time * self.time_scale
    }
}

/// Spike frame of a base time plus jitter, rounded to the nearest frame.
fn jittered_frame(base: f64, jitter: f64, scale: usize) -> usize {
    ((base + jitter) * scale as f64).round() as usize
}

/// `n_per_class` samples of each of the four classes, in class-interleaved
/// order. `alphas` must be the kernel at the requested resolution.
pub fn gen_coincidence_task<R: Rng + ?Sized>(
    n_per_class: usize,
    cfg: &CoincidenceConfig,
    alphas: &[f64],
    jitter_rng: &mut R,
) -> Result<Vec<LabeledSample>> {
    if cfg.time_scale == 0 || cfg.target_time >= cfg.horizon || !(cfg.jitter >= 0.0) {
        return Err(Error::Config(format!("bad coincidence config {cfg:?}")));
    }
    let steps = cfg.frames();
    let dt = 1.0 / cfg.time_scale as f64;
    let response = spike_response_trace(alphas, steps, cfg.target_frame(), 2.0 * cfg.theta0)?;
    let classes = COINCIDENCE_PAIRS.len();
    let mut out = Vec::with_capacity(n_per_class * classes);
    for _ in 0..n_per_class {
        for (label, &(left, right)) in COINCIDENCE_PAIRS.iter().enumerate() {
            let jl = jitter_rng.random::<f64>() * cfg.jitter;
            let jr = jitter_rng.random::<f64>() * cfg.jitter;
            let mut frames = Array2::zeros((steps, 2));
            frames[[jittered_frame(left, jl, cfg.time_scale), 0]] = 1.0;
            frames[[jittered_frame(right, jr, cfg.time_scale), 1]] = 1.0;
            let mut target = Array2::zeros((steps, classes));
            target.column_mut(label).assign(&ndarray::ArrayView1::from(&response));
            out.push(LabeledSample {
                frames: FrameSequence::new(frames, dt)?,
                label,
                target_trace: Some(target),
            });
        }
    }
    Ok(out)
}

/// Stand-in for a spoken-digit style event dataset: every class is a set of
/// channel sweeps with class-specific start, slope and onset, plus
/// background noise and per-sample timing jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticEventConfig {
    pub samples: usize,
    pub classes: usize,
    pub channels: u32,
    pub duration_us: u32,
    pub sweeps_per_class: usize,
    pub events_per_sweep: usize,
    pub noise_events: usize,
    /// Standard deviation of the channel scatter around a sweep.
    pub channel_spread: f64,
    /// Per-sample onset jitter as a fraction of the duration.
    pub onset_jitter: f64,
    /// Sweep onsets are drawn from `[0, max_onset)`, as fractions of the duration.
    pub max_onset: f64,
    /// Sweep lengths are drawn from this range, as fractions of the duration.
    pub sweep_length: [f64; 2],
}

impl Default for SyntheticEventConfig {
    fn default() -> Self {
        Self {
            samples: 240,
            classes: 10,
            channels: 700,
            duration_us: 1_000_000,
            sweeps_per_class: 3,
            events_per_sweep: 150,
            noise_events: 300,
            channel_spread: 12.0,
            onset_jitter: 0.08,
            max_onset: 0.5,
            sweep_length: [0.2, 0.45],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Sweep {
    start: f64,
    end: f64,
    onset: f64,
    length: f64,
}

/// Labelled event streams, classes assigned round-robin.
pub fn gen_synthetic_events(cfg: &SyntheticEventConfig, seed: u64) -> Result<Vec<(EventStream, usize)>> {
    let [len_lo, len_hi] = cfg.sweep_length;
    if cfg.classes == 0
        || cfg.channels == 0
        || cfg.channels > u32::from(u16::MAX) + 1
        || !(cfg.max_onset > 0.0 && cfg.max_onset <= 1.0)
        || !(len_lo > 0.0 && len_lo < len_hi && len_hi <= 1.0)
    {
        return Err(Error::Config(format!("bad synthetic event config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c_max = f64::from(cfg.channels - 1);
    let patterns: Vec<Vec<Sweep>> = (0..cfg.classes)
        .map(|_| {
            (0..cfg.sweeps_per_class)
                .map(|_| Sweep {
                    start: rng.random_range(0.0..=c_max),
                    end: rng.random_range(0.0..=c_max),
                    onset: rng.random_range(0.0..cfg.max_onset),
                    length: rng.random_range(len_lo..len_hi),
                })
                .collect()
        })
        .collect();
    let scatter = Normal::new(0.0, cfg.channel_spread).map_err(|e| Error::Config(e.to_string()))?;
    let duration = f64::from(cfg.duration_us);
    let mut out = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let label = i % cfg.classes;
        let shift = rng.random_range(-cfg.onset_jitter..=cfg.onset_jitter);
        let mut events = Vec::new();
        for sweep in &patterns[label] {
            for _ in 0..cfg.events_per_sweep {
                let u: f64 = rng.random();
                let t = (sweep.onset + shift + u * sweep.length).clamp(0.0, 1.0);
                let c = sweep.start + u * (sweep.end - sweep.start) + scatter.sample(&mut rng);
                events.push(Event {
                    time_us: (t * duration) as u32,
                    channel: c.round().clamp(0.0, c_max) as u16,
                    value: 1,
                });
            }
        }
        for _ in 0..cfg.noise_events {
            events.push(Event {
                time_us: rng.random_range(0..=cfg.duration_us),
                channel: rng.random_range(0..cfg.channels) as u16,
                value: 1,
            });
        }
        events.sort_by_key(|e| (e.time_us, e.channel));
        out.push((EventStream::new(events, cfg.duration_us, cfg.channels)?, label));
    }
    Ok(out)
}
