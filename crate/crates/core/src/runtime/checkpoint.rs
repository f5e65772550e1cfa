//! Binary checkpoints.
//!
//! Layout (little-endian): magic `SGCK`, `u32` format version, `u64` length
//! of a JSON header, the header, `u64` tensor value count, then that many
//! `f64` values. The header holds the run config, the network structure and
//! the bookkeeping; the tensor block holds the kernel rates, per-layer
//! parameters (weights, bias, bucket weights, gain, norm bias) and the
//! optimizer moments, in that order. Per-sample random streams derive from
//! `(seed, epoch, index)`, so seed and epoch are the complete RNG state.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::learning::{Optimizer, OptimizerConfig};
use crate::network::{BucketLayout, DenseGammaLayer, Network, NormKind, Trainable};
use crate::runtime::config::RunConfig;
use crate::sigma_delta::ThresholdConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Refuse headers beyond this size instead of allocating blindly.
const MAX_HEADER_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerMeta {
    inputs: usize,
    outputs: usize,
    layout: BucketLayout,
    norm_kind: NormKind,
    eps: f64,
    dropout: f64,
    threshold: ThresholdConfig,
    trainable: Trainable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    epoch: usize,
    seed: u64,
    peak_test_accuracy: Option<f64>,
    kernel: KernelConfig,
    input_channels: usize,
    input_scale: f64,
    layers: Vec<LayerMeta>,
    optimizer: OptimizerConfig,
    optimizer_steps: u64,
}

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub net: Network,
    pub optimizer: Optimizer,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub peak_test_accuracy: Option<f64>,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let net = &self.net;
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            seed: self.seed,
            peak_test_accuracy: self.peak_test_accuracy,
            kernel: *net.kernel(),
            input_channels: net.input_channels(),
            input_scale: net.input_scale,
            layers: net
                .layers
                .iter()
                .map(|l| LayerMeta {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    layout: l.bucket_weights.layout(),
                    norm_kind: l.norm_kind,
                    eps: l.eps,
                    dropout: l.dropout,
                    threshold: l.threshold,
                    trainable: l.trainable,
                })
                .collect(),
            optimizer: *self.optimizer.config(),
            optimizer_steps: self.optimizer.steps(),
        };
        let json = serde_json::to_vec(&header)?;

        let mut values: Vec<f64> = net.alphas().to_vec();
        for l in &net.layers {
            values.extend(l.weights.iter());
            values.extend(l.bias.iter());
            values.extend_from_slice(l.bucket_weights.as_slice());
            values.extend(l.gamma.iter());
            values.extend(l.beta.iter());
        }
        values.extend(self.optimizer.state_tensors());

        out.write_all(&CHECKPOINT_MAGIC)?;
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        out.write_u64::<LittleEndian>(json.len() as u64)?;
        out.write_all(&json)?;
        out.write_u64::<LittleEndian>(values.len() as u64)?;
        for v in values {
            out.write_f64::<LittleEndian>(v)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        let len = input.read_u64::<LittleEndian>()?;
        if len > MAX_HEADER_BYTES {
            return Err(Error::Checkpoint(format!("header of {len} bytes")));
        }
        let mut json = vec![0u8; len as usize];
        input.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;

        let count = input.read_u64::<LittleEndian>()? as usize;
        let k = header.kernel.buckets;
        let expected_params: usize = header
            .layers
            .iter()
            .map(|m| {
                let v = match m.layout {
                    BucketLayout::PerNeuron => m.outputs * k,
                    BucketLayout::PerSynapse => m.outputs * m.inputs * k,
                };
                m.outputs * m.inputs + m.outputs + v + 2 * m.outputs
            })
            .sum();
        if count < k + expected_params {
            return Err(Error::Checkpoint(format!(
                "{count} tensor values, structure needs at least {}",
                k + expected_params
            )));
        }
        let mut values = vec![0.0; count];
        input.read_f64_into::<LittleEndian>(&mut values)?;
        let mut probe = [0u8; 1];
        if input.read(&mut probe)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after tensor block".into()));
        }

        let mut cursor = values.into_iter();
        let mut take = |n: usize| -> Vec<f64> { cursor.by_ref().take(n).collect() };
        let alphas = take(k);
        let mut layers = Vec::with_capacity(header.layers.len());
        for m in &header.layers {
            let mut layer = DenseGammaLayer::new(m.inputs, m.outputs, k, m.layout);
            layer.weights.as_slice_mut().expect("standard layout").copy_from_slice(&take(m.inputs * m.outputs));
            layer.bias.as_slice_mut().expect("standard layout").copy_from_slice(&take(m.outputs));
            let n_v = layer.bucket_weights.as_slice().len();
            layer.bucket_weights.as_slice_mut().copy_from_slice(&take(n_v));
            layer.gamma.as_slice_mut().expect("standard layout").copy_from_slice(&take(m.outputs));
            layer.beta.as_slice_mut().expect("standard layout").copy_from_slice(&take(m.outputs));
            layer.norm_kind = m.norm_kind;
            layer.eps = m.eps;
            layer.dropout = m.dropout;
            layer.threshold = m.threshold;
            layer.trainable = m.trainable;
            layers.push(layer);
        }
        let net = Network::from_parts(header.kernel, alphas, header.input_channels, header.input_scale, layers)?;
        let opt_state = take(count - k - expected_params);
        let mut optimizer = Optimizer::new(header.optimizer, &net)?;
        optimizer.restore(header.optimizer_steps, &opt_state)?;
        Ok(Self {
            config: header.config,
            net,
            optimizer,
            epoch: header.epoch,
            seed: header.seed,
            peak_test_accuracy: header.peak_test_accuracy,
        })
    }

    /// Write through a temporary file and rename, so a crash never leaves a
    /// truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let file = File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
        self.write(BufWriter::new(file))?;
        fs::rename(&tmp, path).map_err(|e| Error::file(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read(BufReader::new(file))
    }
}
