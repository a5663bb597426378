//! Dataset schema, manifest IO, splitting, frame sampling and synthetic data.

pub mod frames;
pub mod manifest;
pub mod split;
pub mod synth;

pub use frames::{jittered_indices, sample_frames, uniform_indices};
pub use manifest::{
    load_manifest, ActionLexiconEntry, DatasetManifest, LexiconFile, MediaRef, Quality, SampleRecord, Viewpoint, WorkoutMode,
    STEPS_PER_ENTRY,
};
pub use split::{split_dataset, split_sizes, SplitAssignment};
pub use synth::{generate_synthetic_dataset, SyntheticDataset, SyntheticSpec};
