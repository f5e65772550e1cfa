//! The operations behind the command-line subcommands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{bucket_sum, impulse_response, rescale_for_timestep};
use crate::learning::gradcheck::random_case;
use crate::learning::{
    evaluate, frozen_trace_fd_check, init_parameters, sample_rng, GradCheckConfig, Optimizer, Readout, Trainer,
};
use crate::network::{BucketLayout, Network, NormKind};
use crate::runtime::checkpoint::Checkpoint;
use crate::runtime::config::{RunConfig, TaskConfig};
use crate::runtime::metrics::{read_metrics, MetricsRow, MetricsWriter, RunSummary, SUMMARY_SCHEMA};
use crate::sigma_delta::{write_trace_csv, TraceRow};
use crate::tasks::{
    bin_events, downsample_channels, gen_coincidence_task, gen_delay_task, gen_synthetic_events, read_manifest,
    spike_density, CoincidenceConfig, EventStream, FrameSequence, LabeledSample,
};

/// Environment variable holding the number of worker threads.
pub const WORKERS_ENV: &str = "SGAMMA_WORKERS";

/// Worker count from [`WORKERS_ENV`], defaulting to the available cores.
/// Results do not depend on it.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Train and test samples of a task, with the network shape they need.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub input_channels: usize,
    pub classes: usize,
}

/// Random stream reserved for parameter initialization.
const INIT_STREAM: u64 = u64::MAX / 2;

/// Uninitialized network with the shape the config and task ask for.
pub fn build_network(cfg: &RunConfig, input_channels: usize, classes: usize) -> Result<Network> {
    let m = &cfg.model;
    let mut net = Network::dense(m.kernel(), input_channels, &m.hidden, classes, &m.layer_options())?;
    net.input_scale = m.input_scale;
    if let TaskConfig::Coincidence(t) = &cfg.task {
        if t.rescale_kernel && t.time_scale > 1 {
            net.rescale_timestep(1.0 / t.time_scale as f64)?;
        }
    }
    Ok(net)
}

/// Random initialization from the training seed, then constant overrides.
pub fn init_network(net: &mut Network, cfg: &RunConfig) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.training.seed);
    rng.set_stream(INIT_STREAM);
    init_parameters(net, &mut rng);
    let init = &cfg.model.init;
    let n = net.layers.len();
    for (l, layer) in net.layers.iter_mut().enumerate() {
        if let Some(v) = &init.weights {
            layer.weights.fill(v.get(l, n)?);
        }
        if let Some(v) = &init.bias {
            layer.bias.fill(v.get(l, n)?);
        }
        if let Some(v) = &init.bucket_weights {
            let v = v.get(l, n)?;
            layer.bucket_weights.as_slice_mut().iter_mut().for_each(|x| *x = v);
        }
    }
    Ok(())
}

fn load_event_sample(path: &Path, label: usize, frames: usize, dt_ms: Option<f64>, task: &TaskConfig) -> Result<LabeledSample> {
    let stream = EventStream::load(path)?;
    event_sample(&stream, label, frames, dt_ms, task).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn event_sample(stream: &EventStream, label: usize, frames: usize, dt_ms: Option<f64>, task: &TaskConfig) -> Result<LabeledSample> {
    if let Some(dt) = dt_ms {
        let span = f64::from(stream.duration_us()) / 1000.0;
        if (frames as f64 * dt - span).abs() > dt {
            return Err(Error::Config(format!(
                "{frames} frames of {dt} ms do not cover a {span} ms stream"
            )));
        }
    }
    let mut seq: FrameSequence = bin_events(stream, frames)?;
    let downsample = match task {
        TaskConfig::Events(t) => t.downsample,
        TaskConfig::SyntheticEvents(t) => t.downsample,
        _ => None,
    };
    if let Some(mode) = downsample {
        seq = downsample_channels(&seq, mode)?;
    }
    Ok(LabeledSample {
        frames: seq,
        label,
        target_trace: None,
    })
}

fn check_labels(samples: &[LabeledSample], classes: usize) -> Result<()> {
    match samples.iter().find(|s| s.label >= classes) {
        Some(s) => Err(Error::LabelOutOfRange { label: s.label, classes }),
        None => Ok(()),
    }
}

fn common_channels(samples: &[LabeledSample]) -> Result<usize> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))?
        .frames
        .channels();
    if let Some(s) = samples.iter().find(|s| s.frames.channels() != first) {
        return Err(Error::Shape(format!(
            "samples with {first} and {} channels in one dataset",
            s.frames.channels()
        )));
    }
    Ok(first)
}

/// Generate or load the task's samples. `alphas` are the network's kernel
/// rates, which shape the target traces of the synthetic timing tasks.
pub fn load_dataset(cfg: &RunConfig, alphas: &[f64]) -> Result<Dataset> {
    let theta0 = cfg.model.theta0;
    match &cfg.task {
        TaskConfig::Delay(t) => {
            let sample = gen_delay_task(t.horizon, t.delay, alphas, theta0)?;
            Ok(Dataset {
                train: vec![sample.clone()],
                test: vec![sample],
                input_channels: 1,
                classes: 1,
            })
        }
        TaskConfig::Coincidence(t) => {
            let pattern = CoincidenceConfig {
                time_scale: t.time_scale,
                horizon: t.horizon,
                target_time: t.target_time,
                jitter: t.jitter,
                theta0,
            };
            let train = gen_coincidence_task(t.train_per_class, &pattern, alphas, &mut ChaCha8Rng::seed_from_u64(t.train_seed))?;
            let test = gen_coincidence_task(t.test_per_class, &pattern, alphas, &mut ChaCha8Rng::seed_from_u64(t.test_seed))?;
            Ok(Dataset {
                train,
                test,
                input_channels: 2,
                classes: 4,
            })
        }
        TaskConfig::Events(t) => {
            let load = |manifest: &Path| -> Result<Vec<LabeledSample>> {
                read_manifest(manifest)?
                    .iter()
                    .map(|e| load_event_sample(&e.path, e.label, t.frames, t.dt_ms, &cfg.task))
                    .collect()
            };
            let train = load(&t.train_manifest)?;
            let test = load(&t.test_manifest)?;
            let classes = t
                .classes
                .unwrap_or_else(|| train.iter().chain(&test).map(|s| s.label + 1).max().unwrap_or(0));
            finish_event_dataset(train, test, classes)
        }
        TaskConfig::SyntheticEvents(t) => {
            let streams = gen_synthetic_events(&t.generator, t.seed)?;
            if streams.len() < 2 {
                return Err(Error::Config("synthetic dataset needs at least 2 samples to split".into()));
            }
            let n_test = ((streams.len() as f64 * t.test_fraction).round() as usize).clamp(1, streams.len() - 1);
            let mut samples = streams
                .iter()
                .map(|(s, label)| event_sample(s, *label, t.frames, None, &cfg.task))
                .collect::<Result<Vec<_>>>()?;
            let test = samples.split_off(samples.len() - n_test);
            finish_event_dataset(samples, test, t.generator.classes)
        }
    }
}

fn finish_event_dataset(train: Vec<LabeledSample>, test: Vec<LabeledSample>, classes: usize) -> Result<Dataset> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("both train and test splits need samples".into()));
    }
    let channels = common_channels(&train)?;
    if common_channels(&test)? != channels {
        return Err(Error::Shape("train and test samples differ in channel count".into()));
    }
    check_labels(&train, classes)?;
    check_labels(&test, classes)?;
    Ok(Dataset {
        train,
        test,
        input_channels: channels,
        classes,
    })
}

/// Initialized network plus the task data.
pub fn prepare(cfg: &RunConfig) -> Result<(Network, Dataset)> {
    let fixed = match &cfg.task {
        TaskConfig::Delay(_) => Some((1, 1)),
        TaskConfig::Coincidence(_) => Some((2, 4)),
        _ => None,
    };
    let (mut net, data) = match fixed {
        Some((channels, classes)) => {
            let net = build_network(cfg, channels, classes)?;
            let data = load_dataset(cfg, net.alphas())?;
            (net, data)
        }
        None => {
            let data = load_dataset(cfg, &[])?;
            (build_network(cfg, data.input_channels, data.classes)?, data)
        }
    };
    init_network(&mut net, cfg)?;
    Ok((net, data))
}

fn check_compatible(net: &Network, data: &Dataset) -> Result<()> {
    if net.input_channels() != data.input_channels {
        return Err(Error::Shape(format!(
            "task has {} input channels, model expects {}",
            data.input_channels,
            net.input_channels()
        )));
    }
    if data.classes > net.outputs() {
        return Err(Error::Shape(format!(
            "task has {} classes, model has {} outputs",
            data.classes,
            net.outputs()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Replaces `output.dir` from the config.
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh initialization.
    pub resume: Option<PathBuf>,
    pub workers: usize,
}

/// Train for `training.epochs` epochs, writing one metrics row and one
/// checkpoint per epoch and a JSON summary at the end. `progress` sees every
/// row as soon as it is on disk.
pub fn cmd_train(cfg: &RunConfig, opts: &TrainOptions, mut progress: impl FnMut(&MetricsRow)) -> Result<RunSummary> {
    let mut cfg = cfg.clone();
    if let Some(dir) = &opts.out_dir {
        cfg.output.dir = dir.clone();
    }
    cfg.validate()?;
    fs::create_dir_all(&cfg.output.dir).map_err(|e| Error::file(&cfg.output.dir, e))?;
    let metrics_path = cfg.output.metrics_path();
    let checkpoint_path = cfg.output.checkpoint_path();
    let seed = cfg.training.seed;
    let loss = cfg.training.loss_config();
    let readout = cfg.readout();

    let (net, data) = prepare(&cfg)?;
    let (mut trainer, mut peak, mut metrics) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config.model != cfg.model || ck.config.task != cfg.task || ck.seed != seed {
                return Err(Error::Config(format!(
                    "{} was written for a different model, task or seed",
                    path.display()
                )));
            }
            check_compatible(&ck.net, &data)?;
            let epoch = ck.epoch;
            let mut trainer = Trainer::new(ck.net, ck.optimizer, loss, seed);
            trainer.epoch = epoch;
            let metrics = if metrics_path.exists() {
                MetricsWriter::resume(&metrics_path, epoch)?
            } else {
                MetricsWriter::create(&metrics_path)?
            };
            (trainer, ck.peak_test_accuracy, metrics)
        }
        None => {
            let optimizer = Optimizer::new(cfg.training.optimizer_config(), &net)?;
            (Trainer::new(net, optimizer, loss, seed), None, MetricsWriter::create(&metrics_path)?)
        }
    };
    trainer.readout = readout;
    trainer.batch_size = cfg.training.batch_size;
    trainer.shuffle = cfg.training.shuffle;
    trainer.workers = opts.workers.max(1);

    let save = |trainer: &Trainer, peak: Option<f64>| {
        Checkpoint {
            config: cfg.clone(),
            net: trainer.net.clone(),
            optimizer: trainer.optimizer.clone(),
            epoch: trainer.epoch,
            seed,
            peak_test_accuracy: peak,
        }
        .save(&checkpoint_path)
    };
    if opts.resume.is_none() {
        save(&trainer, peak)?;
    }
    while trainer.epoch < cfg.training.epochs {
        let stats = trainer.train_epoch(&data.train)?;
        let eval = evaluate(&trainer.net, &data.test, &trainer.loss, readout, trainer.workers)?;
        let best = peak.map_or(eval.accuracy, |p: f64| p.max(eval.accuracy));
        peak = Some(best);
        let row = MetricsRow {
            epoch: stats.epoch,
            train_loss: stats.loss,
            train_acc: stats.accuracy,
            test_loss: eval.loss,
            test_acc: eval.accuracy,
            peak_test_acc: best,
            spike_density: eval.spike_density,
            timing_error: eval.timing_error,
            lr: stats.lr,
        };
        metrics.write(&row)?;
        save(&trainer, peak)?;
        progress(&row);
    }
    drop(metrics);

    let rows = read_metrics(&metrics_path)?;
    let summary = RunSummary {
        schema: SUMMARY_SCHEMA.into(),
        config_hash: cfg.hash()?,
        seed,
        epochs: trainer.epoch,
        initial_train_loss: rows.first().map(|r| r.train_loss),
        final_epoch: rows.last().cloned(),
        peak_test_acc: peak,
        parameters: trainer.net.parameter_count(),
        checkpoint: checkpoint_path,
        metrics: metrics_path,
    };
    summary.write(&cfg.output.summary_path())?;
    Ok(summary)
}

/// Config for a checkpoint's network, optionally with another task.
fn config_for(ck: &Checkpoint, task: Option<&RunConfig>) -> RunConfig {
    let mut cfg = ck.config.clone();
    if let Some(other) = task {
        cfg.task = other.task.clone();
        cfg.training.readout = other.training.readout;
    }
    cfg
}

fn checkpoint_data(ck: &Checkpoint, task: Option<&RunConfig>) -> Result<(RunConfig, Dataset)> {
    let cfg = config_for(ck, task);
    cfg.validate()?;
    let data = load_dataset(&cfg, ck.net.alphas())?;
    check_compatible(&ck.net, &data)?;
    Ok((cfg, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    /// Completed training epochs of the evaluated checkpoint.
    pub epoch: usize,
    pub samples: usize,
    pub readout: Readout,
    pub accuracy: f64,
    pub loss: f64,
    pub spike_density: Option<f64>,
    pub timing_error: Option<f64>,
    pub max_timing_error: Option<usize>,
    pub missed: usize,
}

/// Evaluate a checkpoint on the test split of its own task, or of `task`.
pub fn cmd_eval(checkpoint: &Path, task: Option<&RunConfig>, workers: usize) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let (cfg, data) = checkpoint_data(&ck, task)?;
    let readout = cfg.readout();
    let stats = evaluate(&ck.net, &data.test, &cfg.training.loss_config(), readout, workers)?;
    Ok(EvalReport {
        schema: "sgamma-eval v1".into(),
        epoch: ck.epoch,
        samples: data.test.len(),
        readout,
        accuracy: stats.accuracy,
        loss: stats.loss,
        spike_density: stats.spike_density,
        timing_error: stats.timing_error,
        max_timing_error: stats.max_timing_error,
        missed: stats.missed,
    })
}

/// Spikes per layer for one sample run in inference mode.
pub fn layer_spike_counts(net: &Network, sample: &LabeledSample) -> Result<Vec<u64>> {
    let mut state = net.new_state();
    let mut rng = sample_rng(0, 0, 0);
    for frame in sample.frames.frames.axis_iter(Axis(0)) {
        net.forward_step(&mut state, frame, false, &mut rng)?;
    }
    Ok(state.layers.iter().map(|l| l.spike_count).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDensity {
    pub layer: usize,
    pub neurons: usize,
    /// Spikes per neuron per sample.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub schema: String,
    pub samples: usize,
    pub hidden_neurons: usize,
    /// Over all hidden layers; `None` without hidden layers.
    pub spike_density: Option<f64>,
    /// Every layer, the output layer last.
    pub layers: Vec<LayerDensity>,
}

pub fn density_report(net: &Network, samples: &[LabeledSample]) -> Result<DensityReport> {
    let counts = samples.iter().map(|s| layer_spike_counts(net, s)).collect::<Result<Vec<_>>>()?;
    let n = net.layers.len();
    let layers = (0..n)
        .map(|l| {
            let per_sample: Vec<u64> = counts.iter().map(|c| c[l]).collect();
            Ok(LayerDensity {
                layer: l,
                neurons: net.layers[l].outputs(),
                density: spike_density(&per_sample, net.layers[l].outputs())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hidden: Vec<u64> = counts.iter().map(|c| c[..n - 1].iter().sum()).collect();
    let hidden_neurons = net.hidden_neurons();
    Ok(DensityReport {
        schema: "sgamma-density v1".into(),
        samples: samples.len(),
        hidden_neurons,
        spike_density: if hidden_neurons > 0 { Some(spike_density(&hidden, hidden_neurons)?) } else { None },
        layers,
    })
}

/// Spike density of a checkpoint on the test split of its (or another) task.
pub fn cmd_density(checkpoint: &Path, task: Option<&RunConfig>) -> Result<DensityReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let (_, data) = checkpoint_data(&ck, task)?;
    density_report(&ck.net, &data.test)
}

/// A neuron addressed as `layer:index`, layers counted from 0 at the input side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeuronRef {
    pub layer: usize,
    pub neuron: usize,
}

impl FromStr for NeuronRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("neuron selector {s:?}, expected LAYER:INDEX"));
        let (l, n) = s.split_once(':').ok_or_else(bad)?;
        Ok(Self {
            layer: l.trim().parse().map_err(|_| bad())?,
            neuron: n.trim().parse().map_err(|_| bad())?,
        })
    }
}

/// Recorded signals of one neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronTrace {
    pub neuron: NeuronRef,
    pub rows: Vec<TraceRow>,
    /// Bucket values after each step, `[T, K]`.
    pub buckets: Array2<f64>,
}

impl NeuronTrace {
    /// Spike times and injected magnitudes, as a receiver would see them.
    pub fn spike_events(&self) -> Vec<(usize, f64)> {
        self.rows.iter().filter(|r| r.spike).map(|r| (r.t, 2.0 * r.theta)).collect()
    }
}

/// Run one sample in inference mode and record the selected neurons.
pub fn trace_network(net: &Network, sample: &LabeledSample, neurons: &[NeuronRef]) -> Result<Vec<NeuronTrace>> {
    for r in neurons {
        let width = net.layers.get(r.layer).map(|l| l.outputs());
        if width.is_none_or(|w| r.neuron >= w) {
            return Err(Error::InvalidArgument(format!(
                "neuron {}:{} does not exist in a network with layer widths {:?}",
                r.layer,
                r.neuron,
                net.layers.iter().map(|l| l.outputs()).collect::<Vec<_>>()
            )));
        }
    }
    let steps = sample.len();
    let k = net.alphas().len();
    let mut traces: Vec<NeuronTrace> = neurons
        .iter()
        .map(|&neuron| NeuronTrace {
            neuron,
            rows: Vec::with_capacity(steps),
            buckets: Array2::zeros((steps, k)),
        })
        .collect();
    let mut state = net.new_state();
    let mut rng = sample_rng(0, 0, 0);
    for (t, frame) in sample.frames.frames.axis_iter(Axis(0)).enumerate() {
        net.forward_step(&mut state, frame, false, &mut rng)?;
        for trace in &mut traces {
            let NeuronRef { layer, neuron } = trace.neuron;
            let ls = &state.layers[layer];
            let y = ls.cache.as_ref().expect("forward populates the cache").y[neuron];
            let row = ls.buckets.row(neuron);
            trace.rows.push(TraceRow {
                t,
                y,
                yhat: bucket_sum(row.as_slice().expect("row-major buckets")),
                z: ls.z[neuron],
                theta: ls.thetas[neuron],
                spike: ls.spikes[neuron],
            });
            trace.buckets.row_mut(t).assign(&row);
        }
    }
    Ok(traces)
}

#[derive(Debug, Clone)]
pub struct TraceOptions {
    /// Index into the test split.
    pub sample: usize,
    /// Empty selects every output neuron.
    pub neurons: Vec<NeuronRef>,
    pub out_dir: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::file(path, e))?))
}

/// Write `trace_l{L}_n{N}.csv` (t, y, yhat, z, theta, spike) and
/// `buckets_l{L}_n{N}.csv` per selected neuron, plus `kernel.csv` with the
/// per-bucket impulse responses over the sample length. Returns the paths.
pub fn cmd_trace(checkpoint: &Path, task: Option<&RunConfig>, opts: &TraceOptions) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::load(checkpoint)?;
    let (_, data) = checkpoint_data(&ck, task)?;
    let sample = data.test.get(opts.sample).ok_or_else(|| {
        Error::InvalidArgument(format!("sample {} of {} test samples", opts.sample, data.test.len()))
    })?;
    let net = &ck.net;
    let neurons = if opts.neurons.is_empty() {
        let last = net.layers.len() - 1;
        (0..net.outputs()).map(|neuron| NeuronRef { layer: last, neuron }).collect()
    } else {
        opts.neurons.clone()
    };
    let traces = trace_network(net, sample, &neurons)?;
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::file(&opts.out_dir, e))?;
    let mut written = Vec::new();
    for trace in &traces {
        let NeuronRef { layer, neuron } = trace.neuron;
        let path = opts.out_dir.join(format!("trace_l{layer}_n{neuron}.csv"));
        let mut out = create(&path)?;
        write_trace_csv(&trace.rows, &mut out)?;
        out.flush()?;
        written.push(path);

        let path = opts.out_dir.join(format!("buckets_l{layer}_n{neuron}.csv"));
        let mut out = create(&path)?;
        write!(out, "t")?;
        for k in 0..trace.buckets.ncols() {
            write!(out, ",b{k}")?;
        }
        writeln!(out)?;
        for (t, row) in trace.buckets.axis_iter(Axis(0)).enumerate() {
            write!(out, "{t}")?;
            for v in row {
                write!(out, ",{v:e}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        written.push(path);
    }
    let path = opts.out_dir.join("kernel.csv");
    cmd_kernel_dump(net.alphas(), sample.len(), &path)?;
    written.push(path);
    Ok(written)
}

/// Kernel rates a config's network would use, including any rescaling.
pub fn config_alphas(cfg: &RunConfig) -> Result<Vec<f64>> {
    let alphas = cfg.model.kernel().alphas()?;
    match &cfg.task {
        TaskConfig::Coincidence(t) if t.rescale_kernel && t.time_scale > 1 => {
            rescale_for_timestep(&alphas, 1.0 / t.time_scale as f64)
        }
        _ => Ok(alphas),
    }
}

/// Write the per-bucket impulse responses for `horizon` steps as CSV.
pub fn cmd_kernel_dump(alphas: &[f64], horizon: usize, out: &Path) -> Result<()> {
    let table = impulse_response(alphas, horizon)?;
    let mut file = create(out)?;
    table.write_csv(&mut file)?;
    file.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub nets: usize,
    pub seed: u64,
    /// Negative control: perturb the analytic gradient.
    pub corrupt: bool,
    /// Nets cycle through every layout/norm combination.
    pub layouts: Vec<BucketLayout>,
    pub norms: Vec<NormKind>,
    pub tolerance: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            nets: 20,
            seed: 0,
            corrupt: false,
            layouts: vec![BucketLayout::PerNeuron, BucketLayout::PerSynapse],
            norms: vec![NormKind::None, NormKind::Layer],
            tolerance: GradCheckConfig::default().tolerance,
        }
    }
}

impl GradcheckOptions {
    /// Restrict the random nets to the layout and norm of a run config.
    pub fn for_config(cfg: &RunConfig) -> Self {
        Self {
            layouts: vec![cfg.model.layout],
            norms: vec![cfg.model.norm],
            seed: cfg.training.seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckCaseReport {
    pub seed: u64,
    pub layout: BucketLayout,
    pub norm: NormKind,
    pub layers: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    pub kink_excluded: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub schema: String,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub checked: usize,
    pub kink_excluded: usize,
    pub passed: bool,
    pub cases: Vec<GradcheckCaseReport>,
}

/// Frozen-trace finite-difference check on a series of small random nets.
pub fn cmd_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckSummary> {
    if opts.nets == 0 || opts.layouts.is_empty() || opts.norms.is_empty() {
        return Err(Error::InvalidArgument("gradcheck needs at least one net, layout and norm".into()));
    }
    let combos: Vec<(BucketLayout, NormKind)> = opts
        .layouts
        .iter()
        .flat_map(|&l| opts.norms.iter().map(move |&n| (l, n)))
        .collect();
    let mut cases = Vec::with_capacity(opts.nets);
    for i in 0..opts.nets {
        let (layout, norm) = combos[i % combos.len()];
        let seed = opts.seed.wrapping_add(i as u64);
        let case = random_case(seed, layout, norm)?;
        let check = GradCheckConfig {
            tolerance: opts.tolerance,
            corrupt: opts.corrupt,
            seed,
            ..GradCheckConfig::default()
        };
        let report = frozen_trace_fd_check(&case.net, &case.frames, &case.targets, &case.loss, &check)?;
        cases.push(GradcheckCaseReport {
            seed,
            layout,
            norm,
            layers: case.net.layers.len(),
            max_rel_error: report.max_rel_error,
            checked: report.checked,
            kink_excluded: report.kink_excluded,
            passed: report.passed,
        });
    }
    Ok(GradcheckSummary {
        schema: "sgamma-gradcheck v1".into(),
        tolerance: opts.tolerance,
        max_rel_error: cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max),
        checked: cases.iter().map(|c| c.checked).sum(),
        kink_excluded: cases.iter().map(|c| c.kink_excluded).sum(),
        passed: cases.iter().all(|c| c.passed),
        cases,
    })
}
