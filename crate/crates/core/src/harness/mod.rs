//! Experiment driver: configuration, synthetic data, runs, sweeps and file formats.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod latents;
pub mod run;
pub mod sweep;

pub use checkpoint::{Checkpoint, CKPT_MAGIC, CKPT_VERSION};
pub use config::{DatasetConfig, EvalConfig, RunConfig, RunSection, TeacherConfig, TeacherSource};
pub use dataset::SyntheticDataset;
pub use latents::{LatentFile, LATS_MAGIC, LATS_VERSION};
pub use run::{
    evaluate, load_teachers, metrics_csv, run_eval, run_resume, run_sample, run_train, sample_latents, EvalReport,
    Experiment, LogRow, ProbeLosses, SampleRequest, TrainOutput, Trainer, METRICS_HEADER,
};
pub use sweep::{depth_stages, run_sweep, state_hash, CellResult, SweepOutput, DEFAULT_LAMBDAS};
