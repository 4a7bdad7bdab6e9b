//! Staged, cached analysis runs over attribution maps, plus the demos.

pub mod cache;
pub mod config;
pub mod demo;
pub mod run;

pub use cache::{is_fresh, stamp, KeyBuilder};
pub use config::{PipelineConfig, KEYS};
pub use run::{run_pipeline, Manifest, PipelineError, RunOptions, Stage, StageRecord, StageStatus};
pub use demo::{demo_fig2, demo_fig3, four_blobs, glyph, transform, Fig2Result, FIG2_MAX_K, Fig3Result};
