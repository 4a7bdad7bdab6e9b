//! Artifact generation, injection and removal, Clever-Hans sensitivity
//! studies and the retraining experiment.

pub mod artifact;
pub mod dataset;
pub mod study;
pub mod unhans;

pub use artifact::{
    channel_stats, inject, make_artifact, relevance_mass_fraction, remove, Anchor, ArtifactKind, ArtifactMask,
    ArtifactParams, Fill,
};
pub use dataset::{build_poisoned_dataset, GeneratorParams, SHAPES};
pub use study::{addition_study, blind_to_mask, removal_study, AblationResult, SampleEffect};
pub use unhans::{unhans_experiment, UnhansRecord, MASS_EPOCHS};
