//! Run configuration: a TOML document with `model`, `task`, `training` and
//! `output` tables. Unknown keys are rejected everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::learning::{LossConfig, LossKind, OptimizerConfig, OptimizerKind, Readout, Schedule};
use crate::network::{BucketLayout, LayerOptions, NormKind, Trainable};
use crate::sigma_delta::ThresholdConfig;
use crate::tasks::{Downsample, SyntheticEventConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    pub task: TaskConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Which parameter groups the optimizer updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableSet {
    #[default]
    All,
    BucketWeights,
}

impl TrainableSet {
    pub fn flags(self) -> Trainable {
        match self {
            TrainableSet::All => Trainable::all(),
            TrainableSet::BucketWeights => Trainable::bucket_weights_only(),
        }
    }
}

/// One constant for every layer, or one per layer (input side first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerValues {
    All(f64),
    PerLayer(Vec<f64>),
}

impl LayerValues {
    pub fn get(&self, layer: usize, layers: usize) -> Result<f64> {
        match self {
            LayerValues::All(v) => Ok(*v),
            LayerValues::PerLayer(vs) if vs.len() == layers => Ok(vs[layer]),
            LayerValues::PerLayer(vs) => Err(Error::Config(format!(
                "{} per-layer init values for {layers} layers",
                vs.len()
            ))),
        }
    }
}

/// Constant overrides applied after random initialization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<LayerValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<LayerValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket_weights: Option<LayerValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden layer widths; input and output sizes come from the task.
    pub hidden: Vec<usize>,
    pub buckets: usize,
    pub rate_factor: f64,
    pub l_start: f64,
    pub l_end: f64,
    pub theta0: f64,
    /// Threshold growth; defaults to `theta0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mf: Option<f64>,
    pub norm: NormKind,
    pub dropout: f64,
    pub layout: BucketLayout,
    pub output_norm: bool,
    pub trainable: TrainableSet,
    pub input_scale: f64,
    pub init: InitOverrides,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let kernel = KernelConfig::default();
        Self {
            hidden: vec![256, 256, 256],
            buckets: kernel.buckets,
            rate_factor: kernel.rate_factor,
            l_start: kernel.l_start,
            l_end: kernel.l_end,
            theta0: 0.2,
            mf: None,
            norm: NormKind::Layer,
            dropout: 0.0,
            layout: BucketLayout::PerNeuron,
            output_norm: false,
            trainable: TrainableSet::All,
            input_scale: 1.0,
            init: InitOverrides::default(),
        }
    }
}

impl ModelConfig {
    /// Kernel at the base resolution; `dt_ms` is filled in by the task.
    pub fn kernel(&self) -> KernelConfig {
        KernelConfig {
            buckets: self.buckets,
            rate_factor: self.rate_factor,
            l_start: self.l_start,
            l_end: self.l_end,
            ..KernelConfig::default()
        }
    }

    pub fn threshold(&self) -> ThresholdConfig {
        ThresholdConfig {
            theta0: self.theta0,
            mf: self.mf.unwrap_or(self.theta0),
        }
    }

    pub fn layer_options(&self) -> LayerOptions {
        LayerOptions {
            norm: self.norm,
            dropout: self.dropout,
            threshold: self.threshold(),
            layout: self.layout,
            output_norm: self.output_norm,
            trainable: self.trainable.flags(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel().validate()?;
        self.threshold().validate()?;
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer of width 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout = {}", self.dropout)));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::Config(format!("input_scale = {}", self.input_scale)));
        }
        let layers = self.hidden.len() + 1;
        for values in [&self.init.weights, &self.init.bias, &self.init.bucket_weights].into_iter().flatten() {
            for l in 0..layers {
                values.get(l, layers)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelayTask {
    pub horizon: usize,
    pub delay: usize,
}

impl Default for DelayTask {
    fn default() -> Self {
        Self { horizon: 300, delay: 150 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoincidenceTask {
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Frames per base step.
    pub time_scale: usize,
    /// Base steps per sample.
    pub horizon: usize,
    pub target_time: usize,
    pub jitter: f64,
    pub train_seed: u64,
    pub test_seed: u64,
    /// Adapt the kernel to the finer timestep when `time_scale > 1`.
    pub rescale_kernel: bool,
}

impl Default for CoincidenceTask {
    fn default() -> Self {
        Self {
            train_per_class: 25,
            test_per_class: 100,
            time_scale: 1,
            horizon: 260,
            target_time: 200,
            jitter: 2.0,
            train_seed: 100,
            test_seed: 200,
            rescale_kernel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventsTask {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub frames: usize,
    /// When given, every stream must span `frames * dt_ms` to within one frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsample: Option<Downsample>,
    /// Class count; defaults to the largest label plus one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticEventsTask {
    #[serde(default)]
    pub generator: SyntheticEventConfig,
    #[serde(default)]
    pub seed: u64,
    pub frames: usize,
    /// Fraction of samples held out, taken from the end of the stream list.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsample: Option<Downsample>,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskConfig {
    Delay(DelayTask),
    Coincidence(CoincidenceTask),
    Events(EventsTask),
    SyntheticEvents(SyntheticEventsTask),
}

impl TaskConfig {
    /// Readout used when the training section does not name one.
    pub fn default_readout(&self) -> Readout {
        match self {
            TaskConfig::Delay(_) | TaskConfig::Coincidence(_) => Readout::Ttfs,
            TaskConfig::Events(_) | TaskConfig::SyntheticEvents(_) => Readout::SumOutput,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            TaskConfig::Delay(t) => {
                if t.horizon == 0 || t.delay >= t.horizon {
                    return Err(Error::Config(format!("delay {} outside horizon {}", t.delay, t.horizon)));
                }
            }
            TaskConfig::Coincidence(t) => {
                if t.time_scale == 0 || t.target_time >= t.horizon || t.train_per_class == 0 || t.test_per_class == 0 {
                    return Err(Error::Config(format!("bad coincidence task {t:?}")));
                }
                if !(t.jitter >= 0.0) {
                    return Err(Error::Config(format!("jitter = {}", t.jitter)));
                }
            }
            TaskConfig::Events(t) => {
                if t.frames == 0 {
                    return Err(Error::Config("frames must be at least 1".into()));
                }
                if let Some(dt) = t.dt_ms {
                    if !(dt.is_finite() && dt > 0.0) {
                        return Err(Error::Config(format!("dt_ms = {dt}")));
                    }
                }
                for path in [&t.train_manifest, &t.test_manifest] {
                    if !path.is_file() {
                        return Err(Error::Config(format!("manifest {} not found", path.display())));
                    }
                }
            }
            TaskConfig::SyntheticEvents(t) => {
                if t.frames == 0 {
                    return Err(Error::Config("frames must be at least 1".into()));
                }
                if !(t.test_fraction > 0.0 && t.test_fraction < 1.0) {
                    return Err(Error::Config(format!("test_fraction = {}", t.test_fraction)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub loss: LossKind,
    pub beta0: f64,
    pub beta_decay: f64,
    /// Gain-loss constant `G`.
    pub gain_loss: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Per-layer rate multiplier; defaults to the bucket count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_layer_factor: Option<f64>,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub readout: Option<Readout>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        let opt = OptimizerConfig::default();
        Self {
            loss: loss.kind,
            beta0: loss.beta0,
            beta_decay: loss.beta_decay,
            gain_loss: loss.gain_loss,
            optimizer: opt.kind,
            lr: opt.base_lr,
            per_layer_factor: None,
            schedule: Schedule::None,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            shuffle: true,
            readout: None,
        }
    }
}

impl TrainingConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            kind: self.loss,
            beta0: self.beta0,
            beta_decay: self.beta_decay,
            gain_loss: self.gain_loss,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            base_lr: self.lr,
            per_layer_factor: self.per_layer_factor,
            schedule: self.schedule,
            ..OptimizerConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        self.loss_config().validate()?;
        self.optimizer_config().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Output file names, relative to `dir` unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub checkpoint: PathBuf,
    pub traces: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            metrics: PathBuf::from("metrics.csv"),
            summary: PathBuf::from("summary.json"),
            checkpoint: PathBuf::from("checkpoint.sgck"),
            traces: PathBuf::from("traces"),
        }
    }
}

impl OutputConfig {
    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join(&self.metrics)
    }

    pub fn summary_path(&self) -> PathBuf {
        self.dir.join(&self.summary)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join(&self.checkpoint)
    }

    pub fn traces_path(&self) -> PathBuf {
        self.dir.join(&self.traces)
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse, resolve relative dataset paths against the config file's
    /// directory, and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let TaskConfig::Events(t) = &mut cfg.task {
            for p in [&mut t.train_manifest, &mut t.test_manifest] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.task.validate()?;
        self.training.validate()
    }

    pub fn readout(&self) -> Readout {
        self.training.readout.unwrap_or_else(|| self.task.default_readout())
    }

    /// SHA-256 of the canonical TOML serialization, hex encoded. The output
    /// section does not take part: where a run writes does not change it.
    pub fn hash(&self) -> Result<String> {
        let canonical = Self {
            output: OutputConfig::default(),
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml_string()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
