//! Layered feature stacks, their on-disk container, dataset manifests,
//! fixed-duration cropping and the synthetic layered-feature generator.

mod crop;
mod esdf;
mod manifest;
mod source;
mod stack;
mod synth;

pub use crop::{center_crop, crop_at, random_crop};
pub use esdf::{read_feature_stack, write_feature_stack, ESDF_HEADER_LEN, ESDF_MAGIC, ESDF_VERSION};
pub use manifest::{load_manifest, write_manifest, Label, ManifestEntry, Split};
pub use source::{DirSource, FeatureSource, MemorySource};
pub use stack::FeatureStack;
pub use synth::{synthesize_dataset, Generator, SynthConfig, SynthDataset};
