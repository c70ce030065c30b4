//! Training, checkpoints, metrics and evaluation.

mod adam;
mod checkpoint;
mod config;
mod eval;
mod metrics;
mod run;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{OptimizerConfig, OptimizerKind, TrainConfig};
pub use eval::{evaluate, reconstruct, score, EvalReport, EvalRow, MethodReport, KID_DEGREE};
pub use metrics::{kid, kid_subsets, mmd2_unbiased, ms_ssim_value, poly_kernel, psnr, ssim_value};
pub use run::{checkpoint_path, train, LogRow, TrainState, Trainer};
