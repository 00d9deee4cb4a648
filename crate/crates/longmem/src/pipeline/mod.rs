//! Pipeline orchestration: declarative config, content-addressed run
//! manifest with resumability, and the six processing stages.

pub mod config;
pub mod manifest;
pub mod stages;

pub use config::PipelineConfig;
pub use manifest::{hash_file, RunManifest};
pub use stages::{
    default_design, dump_w_matrix, estimate_single_volume, run_pipeline, Layout, Stage,
};
