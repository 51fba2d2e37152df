//! Samples, masks, crops, synthetic tampering, and manifest-driven batching.

mod batch;
mod manifest;
mod preprocess;
mod sample;
mod synth;

pub use batch::{image_to_tensor, iterate_batches, Batch, BatchOptions, Batches, SampleSource, INPUT_MEAN, INPUT_STD};
pub use manifest::{BBox, Manifest, ManifestSplit, Record};
pub use preprocess::{
    center_crop_pair, compute_mask, enlarge_and_crop, random_crop_pair, reflect_pad_pair, resize_shorter_then_crop,
    resize_shorter_then_crop_pair, Placement,
};
pub use sample::{Method, Sample, Split};
pub use synth::{paste_region, synth_benchmark, synth_pristine, synth_tamper, synth_tamper_in, Region, SynthPair, TamperMode};
