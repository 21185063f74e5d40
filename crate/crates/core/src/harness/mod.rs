//! Synthetic experiment pipeline: phantoms, data synthesis, training data,
//! end-to-end runs and artifact output.

pub mod config;
pub mod experiment;
pub mod kspace;
pub mod phantom;
pub mod render;
pub mod slices;

pub use config::{ExperimentConfig, Method, Seeds, TrajectoryKind, DEFAULT_CONFIG_TOML};
pub use experiment::{
    build_subspace, evaluate, reconstruct, run_experiment, run_experiment_with_prior, simulate,
    train_prior, training_slices, Acquisition, Evaluation, ExperimentReport, MethodTrace,
    MetricsRow, Reconstruction, Scene, ScoringTarget, Subspace,
};
pub use kspace::{subset_spokes, synthesize_kspace, GroundTruth};
pub use phantom::{default_tissues, make_phantom, random_tissues, Phantom, Tissue};
pub use render::{render_outputs, write_pgm, Window};
pub use slices::{extract_training_slices, TrainingSlices};
