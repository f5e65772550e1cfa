use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use spiking_gamma::runtime::{
    cmd_density, cmd_eval, cmd_gradcheck, cmd_kernel_dump, cmd_trace, cmd_train, config_alphas, workers_from_env,
    Checkpoint, GradcheckOptions, NeuronRef, RunConfig, TraceOptions, TrainOptions,
};
use spiking_gamma::Error;

#[derive(Parser)]
#[command(name = "sgamma", version, about = "Train and inspect gamma-kernel spiking networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override `training.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; with --checkpoint, resume from it.
    Train(Common),
    /// Evaluate a checkpoint on its task's test split (or the task of --config).
    Eval(Common),
    /// Check analytic gradients against finite differences on random nets.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of random nets.
        #[arg(long, default_value_t = 20)]
        nets: usize,
        /// Perturb the analytic gradient; the check must then fail.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Dump per-step neuron traces and bucket values of one test sample.
    Trace {
        #[command(flatten)]
        common: Common,
        /// Test sample index.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Neurons as LAYER:INDEX; defaults to every output neuron.
        #[arg(long = "neuron")]
        neurons: Vec<String>,
    },
    /// Write the per-bucket impulse responses as CSV.
    KernelDump {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 300)]
        horizon: usize,
    },
    /// Report spike density per neuron and sample.
    Density(Common),
}

fn load_config(common: &Common) -> Result<Option<RunConfig>, Error> {
    let Some(path) = &common.config else { return Ok(None) };
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.training.seed = seed;
    }
    Ok(Some(cfg))
}

fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, Error> {
    value
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("{flag} is required for this command")))
}

/// Print a report and, with --out-dir, also save it there.
fn emit<T: Serialize>(report: &T, out_dir: Option<&Path>, name: &str) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(report)?;
    println!("{json}");
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(Error::Io)?;
        fs::write(dir.join(name), format!("{json}\n")).map_err(Error::Io)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let workers = workers_from_env()?;
    match cli.command {
        Command::Train(common) => {
            let cfg = load_config(&common)?.ok_or_else(|| Error::InvalidArgument("--config is required for train".into()))?;
            let opts = TrainOptions {
                out_dir: common.out_dir.clone(),
                resume: common.checkpoint.clone(),
                workers,
            };
            let summary = cmd_train(&cfg, &opts, |row| {
                eprintln!(
                    "epoch {:>4}  loss {:.4e}  train {:.3}  test {:.3}  peak {:.3}",
                    row.epoch, row.train_loss, row.train_acc, row.test_acc, row.peak_test_acc
                );
            })?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval(common) => {
            let task = load_config(&common)?;
            let report = cmd_eval(require(&common.checkpoint, "--checkpoint")?, task.as_ref(), workers)?;
            emit(&report, common.out_dir.as_deref(), "eval.json")?;
        }
        Command::Gradcheck { common, nets, corrupt } => {
            let mut opts = match load_config(&common)? {
                Some(cfg) => GradcheckOptions::for_config(&cfg),
                None => GradcheckOptions::default(),
            };
            opts.nets = nets;
            opts.corrupt = corrupt;
            if let Some(seed) = common.seed {
                opts.seed = seed;
            }
            let summary = cmd_gradcheck(&opts)?;
            emit(&summary, common.out_dir.as_deref(), "gradcheck.json")?;
            eprintln!(
                "{}: max relative error {:.3e} over {} entries ({} kink-adjacent excluded), tolerance {:e}",
                if summary.passed { "PASS" } else { "FAIL" },
                summary.max_rel_error,
                summary.checked,
                summary.kink_excluded,
                summary.tolerance
            );
            if !summary.passed {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Trace { common, sample, neurons } => {
            let task = load_config(&common)?;
            let checkpoint = require(&common.checkpoint, "--checkpoint")?;
            let out_dir = match &common.out_dir {
                Some(dir) => dir.clone(),
                None => Checkpoint::load(checkpoint)?.config.output.traces_path(),
            };
            let opts = TraceOptions {
                sample,
                neurons: neurons.iter().map(|s| s.parse::<NeuronRef>()).collect::<Result<_, _>>()?,
                out_dir,
            };
            for path in cmd_trace(checkpoint, task.as_ref(), &opts)? {
                println!("{}", path.display());
            }
        }
        Command::KernelDump { common, horizon } => {
            let alphas = match (&common.checkpoint, load_config(&common)?) {
                (Some(ck), _) => Checkpoint::load(ck)?.net.alphas().to_vec(),
                (None, Some(cfg)) => config_alphas(&cfg)?,
                (None, None) => return Err(Error::InvalidArgument("kernel-dump needs --config or --checkpoint".into())),
            };
            let dir = common.out_dir.unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir).map_err(Error::Io)?;
            let path = dir.join("kernel.csv");
            cmd_kernel_dump(&alphas, horizon, &path)?;
            println!("{}", path.display());
        }
        Command::Density(common) => {
            let task = load_config(&common)?;
            let report = cmd_density(require(&common.checkpoint, "--checkpoint")?, task.as_ref())?;
            emit(&report, common.out_dir.as_deref(), "density.json")?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
