//! Event streams, their file formats, and conversion to frame sequences.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic       4 bytes  "SGEV"
//! version     u16      1
//! channels    u32
//! duration    u32      microseconds
//! count       u64      number of records
//! records     count x (time_us u32, channel u16, value u16)
//! ```
//!
//! The CSV form starts with a `# sgev-csv v1 channels=<n> duration_us=<d>`
//! line followed by a `time_us,channel,value` header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EVENT_MAGIC: &[u8; 4] = b"SGEV";
pub const EVENT_FORMAT_VERSION: u16 = 1;
const CSV_PREAMBLE: &str = "# sgev-csv v1";
const MANIFEST_PREAMBLE: &str = "# sgev-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub time_us: u32,
    pub channel: u16,
    pub value: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    duration_us: u32,
    channel_count: u32,
}

impl EventStream {
    pub fn new(events: Vec<Event>, duration_us: u32, channel_count: u32) -> Result<Self> {
        if channel_count == 0 || duration_us == 0 {
            return Err(Error::Events("channel count and duration must be positive".into()));
        }
        for (i, e) in events.iter().enumerate() {
            if u32::from(e.channel) >= channel_count {
                return Err(Error::Events(format!(
                    "event {i} on channel {} of {channel_count}",
                    e.channel
                )));
            }
            if e.time_us > duration_us {
                return Err(Error::Events(format!(
                    "event {i} at {} us past duration {duration_us} us",
                    e.time_us
                )));
            }
            if e.value == 0 {
                return Err(Error::Events(format!("event {i} has zero value")));
            }
            if i > 0 && e.time_us < events[i - 1].time_us {
                return Err(Error::Events(format!("event {i} is out of time order")));
            }
        }
        Ok(Self {
            events,
            duration_us,
            channel_count,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn duration_us(&self) -> u32 {
        self.duration_us
    }

    pub fn channel_count(&self) -> u32 {
        self.channel_count
    }

    pub fn total_value(&self) -> u64 {
        self.events.iter().map(|e| u64::from(e.value)).sum()
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(EVENT_MAGIC)?;
        out.write_u16::<LittleEndian>(EVENT_FORMAT_VERSION)?;
        out.write_u32::<LittleEndian>(self.channel_count)?;
        out.write_u32::<LittleEndian>(self.duration_us)?;
        out.write_u64::<LittleEndian>(self.events.len() as u64)?;
        for e in &self.events {
            out.write_u32::<LittleEndian>(e.time_us)?;
            out.write_u16::<LittleEndian>(e.channel)?;
            out.write_u16::<LittleEndian>(e.value)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != EVENT_MAGIC {
            return Err(Error::Events("bad magic, not an event file".into()));
        }
        let version = input.read_u16::<LittleEndian>()?;
        if version != EVENT_FORMAT_VERSION {
            return Err(Error::Events(format!("unsupported event format version {version}")));
        }
        let channels = input.read_u32::<LittleEndian>()?;
        let duration = input.read_u32::<LittleEndian>()?;
        let count = input.read_u64::<LittleEndian>()?;
        let mut events = Vec::with_capacity(count.min(1 << 24) as usize);
        for _ in 0..count {
            events.push(Event {
                time_us: input.read_u32::<LittleEndian>()?,
                channel: input.read_u16::<LittleEndian>()?,
                value: input.read_u16::<LittleEndian>()?,
            });
        }
        Self::new(events, duration, channels)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "{CSV_PREAMBLE} channels={} duration_us={}",
            self.channel_count, self.duration_us
        )?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_us", "channel", "value"])?;
        for e in &self.events {
            w.serialize((e.time_us, e.channel, e.value))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let rest = first
            .trim()
            .strip_prefix(CSV_PREAMBLE)
            .ok_or_else(|| Error::Events("missing sgev-csv preamble".into()))?;
        let (mut channels, mut duration) = (None, None);
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("channels", v)) => channels = v.parse::<u32>().ok(),
                Some(("duration_us", v)) => duration = v.parse::<u32>().ok(),
                _ => return Err(Error::Events(format!("unknown preamble field {field:?}"))),
            }
        }
        let (Some(channels), Some(duration)) = (channels, duration) else {
            return Err(Error::Events("preamble needs channels and duration_us".into()));
        };
        let mut rdr = csv::Reader::from_reader(reader);
        let events = rdr
            .deserialize::<(u32, u16, u16)>()
            .map(|r| {
                r.map(|(time_us, channel, value)| Event {
                    time_us,
                    channel,
                    value,
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(events, duration, channels)
    }

    /// Read either format, chosen by the `.csv` extension.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        if path.extension().is_some_and(|e| e == "csv") {
            Self::read_csv(file)
        } else {
            Self::read_binary(BufReader::new(file))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut out = BufWriter::new(file);
        if path.extension().is_some_and(|e| e == "csv") {
            self.write_csv(&mut out)?;
        } else {
            self.write_binary(&mut out)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `T x channels` event counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Array2<f64>,
    /// Milliseconds per frame.
    pub dt_ms: f64,
}

impl FrameSequence {
    pub fn new(frames: Array2<f64>, dt_ms: f64) -> Result<Self> {
        if frames.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Events("frames must hold non-negative counts".into()));
        }
        Ok(Self { frames, dt_ms })
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.ncols()
    }

    pub fn total(&self) -> f64 {
        self.frames.sum()
    }
}

/// Accumulate events into `n_frames` equal-width bins over `[0, duration]`.
/// An event exactly at the right edge lands in the last bin.
pub fn bin_events(stream: &EventStream, n_frames: usize) -> Result<FrameSequence> {
    if n_frames == 0 {
        return Err(Error::InvalidArgument("n_frames must be at least 1".into()));
    }
    let channels = stream.channel_count as usize;
    let duration = u64::from(stream.duration_us);
    let mut frames = Array2::zeros((n_frames, channels));
    for e in &stream.events {
        let bin = ((u64::from(e.time_us) * n_frames as u64) / duration).min(n_frames as u64 - 1) as usize;
        frames[[bin, usize::from(e.channel)]] += f64::from(e.value);
    }
    FrameSequence::new(frames, duration as f64 / 1000.0 / n_frames as f64)
}

/// Channel grid for sensors with polarity and a 2-D pixel array.
/// Channel index is `(p * height + row) * width + col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialLayout {
    pub polarities: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Downsample {
    /// Sum groups of `factor` adjacent channels.
    Channels { factor: usize },
    /// Sum `window x window` pixel blocks per polarity.
    Spatial { layout: SpatialLayout, window: usize },
}

pub fn downsample_channels(frames: &FrameSequence, mode: Downsample) -> Result<FrameSequence> {
    let channels = frames.channels();
    match mode {
        Downsample::Channels { factor } => {
            if factor == 0 || channels % factor != 0 {
                return Err(Error::Shape(format!("{channels} channels not divisible by {factor}")));
            }
            let mut out = Array2::zeros((frames.len(), channels / factor));
            for (t, row) in frames.frames.axis_iter(Axis(0)).enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    out[[t, c / factor]] += v;
                }
            }
            FrameSequence::new(out, frames.dt_ms)
        }
        Downsample::Spatial { layout, window } => {
            let SpatialLayout {
                polarities,
                height,
                width,
            } = layout;
            if polarities * height * width != channels {
                return Err(Error::Shape(format!(
                    "layout {polarities}x{height}x{width} does not cover {channels} channels"
                )));
            }
            if window == 0 || height % window != 0 || width % window != 0 {
                return Err(Error::Shape(format!("{height}x{width} not divisible by window {window}")));
            }
            let (h2, w2) = (height / window, width / window);
            let mut out = Array2::zeros((frames.len(), polarities * h2 * w2));
            for (t, row) in frames.frames.axis_iter(Axis(0)).enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    let p = c / (height * width);
                    let r = (c / width) % height;
                    let col = c % width;
                    out[[t, (p * h2 + r / window) * w2 + col / window]] += v;
                }
            }
            FrameSequence::new(out, frames.dt_ms)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

/// Read a `path,label` manifest. Relative paths resolve against the
/// manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim() != MANIFEST_PREAMBLE {
        return Err(Error::Events(format!("{}: missing manifest preamble", path.display())));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::Reader::from_reader(reader);
    let mut entries = Vec::new();
    for row in rdr.deserialize::<(String, usize)>() {
        let (p, label) = row?;
        let p = PathBuf::from(p);
        entries.push(ManifestEntry {
            path: if p.is_absolute() { p } else { base.join(p) },
            label,
        });
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[(String, usize)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{MANIFEST_PREAMBLE}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "label"])?;
    for (p, label) in entries {
        w.serialize((p, label))?;
    }
    w.flush()?;
    Ok(())
}
