//! Feature files, masks, manifests, episode sampling and synthetic fixtures.

pub mod format;
pub mod manifest;
pub mod mask;
pub mod synthetic;

pub use format::{decode_layers, encode_layers, read_feature_file, write_feature_file};
pub use manifest::{
    load_episode, sample_episodes, split_seed, DatasetManifest, EpisodeDescriptor, EpisodePlan,
    EpisodeSpec, ManifestRecord,
};
pub use mask::{read_mask, write_mask};
pub use synthetic::{generate_synthetic, write_synthetic_dataset, SynthConfig};
