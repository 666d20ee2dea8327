//! Gaussian-output dynamics ensembles in three architectures, plus
//! count-based tabular models.

mod base;
mod composer;
mod ensemble;
mod persist;
mod tabular;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use base::BaseModel;
pub use composer::MaskedComposer;
pub use ensemble::{mask_matrix, DynamicsEnsemble, EpochRecord, MseReport, TrainHistory};
pub use persist::EnsembleManifest;
pub use tabular::{fit_tabular, max_l1_error, tabular_l1_error, TabularCountModel};

/// Members per ensemble.
pub const ENSEMBLE_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Unfactored,
    GlobalFactored,
    LocalFactored,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::Unfactored,
        Architecture::GlobalFactored,
        Architecture::LocalFactored,
    ];

    /// Short name used on the command line and in file names.
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Unfactored => "unfactored",
            Architecture::GlobalFactored => "global",
            Architecture::LocalFactored => "local",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Architecture::Unfactored => "Unfactored",
            Architecture::GlobalFactored => "Globally Factored",
            Architecture::LocalFactored => "Locally Factored",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "unfactored" => Ok(Architecture::Unfactored),
            "global" | "global_factored" => Ok(Architecture::GlobalFactored),
            "local" | "local_factored" => Ok(Architecture::LocalFactored),
            other => Err(Error::InvalidArgument(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    /// Hidden widths. For the local model the first entry is the embedding
    /// size and the rest are the head's hidden layers.
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// The kept snapshot is the best-validation one among the final
    /// `early_stop_window` epochs.
    pub early_stop_window: usize,
    pub seed: u64,
}

impl DynamicsConfig {
    pub fn full(seed: u64) -> Self {
        Self {
            hidden: vec![256, 256],
            batch_size: 512,
            lr: 1e-4,
            max_epochs: 600,
            early_stop_window: 50,
            seed,
        }
    }

    /// Reduced budget for a single desktop core: narrower layers, fewer
    /// epochs, larger step size.
    pub fn desk(seed: u64) -> Self {
        Self {
            hidden: vec![64, 64],
            batch_size: 512,
            lr: 1e-3,
            max_epochs: 120,
            early_stop_window: 30,
            seed,
        }
    }
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self::full(0)
    }
}

/// Per-dimension Gaussian over the next state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}
