//! Task data: event streams and frames, synthetic task generators, and
//! readout rules.

mod decode;
mod events;
mod synthetic;

pub use decode::{classify_by_sum, first_spike_times, spike_density, ttfs_decode};
pub use events::{
    bin_events, downsample_channels, read_manifest, write_manifest, Downsample, Event, EventStream,
    FrameSequence, ManifestEntry, SpatialLayout, EVENT_FORMAT_VERSION, EVENT_MAGIC,
};
pub use synthetic::{
    gen_coincidence_task, gen_delay_task, gen_synthetic_events, spike_response_trace, CoincidenceConfig,
    LabeledSample, SyntheticEventConfig, COINCIDENCE_PAIRS,
};
