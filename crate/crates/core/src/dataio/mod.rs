//! Interaction logs: loading, filtering, chronological splitting, instance
//! enumeration and synthetic generation.

mod dataset;
mod io;
mod split;
mod synth;

pub use dataset::{Dataset, Instance, InstanceId, Interaction, Vocab};
pub use io::{load_interactions, manifest_path, save_interactions, DatasetManifest, Format};
pub use split::{
    build_instances, build_test_instances, chronological_split, filter_min_interactions,
    SplitConfig,
};
pub use synth::{synth_generate, synth_generate_with, Regime, SynthConfig};
