//! Config-driven commands: training runs and grids, the gradient-check
//! matrix, conditioning sweeps and curvature histograms.

mod analysis;
pub mod config;
mod gradcheck;
pub mod metrics;
mod train;

use std::path::PathBuf;

use crate::error::Error;

pub use analysis::{cmd_conditioning, cmd_khist, k_histogram, LayerHistogram, CONDITIONING_HEADER};
pub use config::{
    ConditioningConfig, DatasetConfig, GradcheckConfig, KhistConfig, NetworkConfig, TrainConfig,
};
pub use gradcheck::{check_cell, cmd_gradcheck, matrix, Cell, CellResult, LayerVariant};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter, METRICS_HEADER};
pub use train::{accuracy, cmd_train, RunSummary};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Zero wall-clock columns so reruns are byte-identical.
    pub deterministic: bool,
    pub data_dir: Option<PathBuf>,
}

/// Process exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Io { .. }
        | Error::Format { .. }
        | Error::InvalidArgument(_)
        | Error::Shape(_)
        | Error::LabelOutOfRange { .. } => 2,
        Error::Divergence { .. }
        | Error::NonFinite { .. }
        | Error::Numerical(_)
        | Error::DegenerateSpectrum
        | Error::DegenerateRow { .. }
        | Error::Degenerate(_)
        | Error::Precondition(_) => 3,
        Error::Acceptance(_) => 4,
        Error::StaleCache(_) | Error::Csv(_) => 1,
    }
}

#[cfg(test)]
mod tests;
