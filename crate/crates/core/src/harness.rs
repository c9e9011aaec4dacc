//! Configuration, convergence studies, demo runs, output files and the CLI.
//!
//! Settings are assembled from three layers, later ones winning: a named
//! preset, a flat TOML file and `--key value` flags. Every key is listed in
//! [`config::KEYS`].

pub mod cli;
pub mod config;
pub mod output;
pub mod presets;
pub mod study;

use thiserror::Error;

use crate::energies::EnergyError;
use crate::mesh::MeshError;
use crate::multiphase::MultiphaseError;
use crate::solver::SolverError;

pub use config::{Problem, RawConfig, Settings, Window};
pub use presets::{Preset, PRESETS};
pub use study::{
    converge, demo_diffusion, demo_multiphase, demo_porous_medium, error_l1l1, error_l1l1_after, rates, run_level,
    total_variation, ConvergenceReport, DemoReport, LevelRecord,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Solver {
        context: String,
        #[source]
        source: SolverError,
    },
    #[error(transparent)]
    Multiphase(#[from] MultiphaseError),
    #[error("trajectory stops at step {step} of {steps}")]
    Incomplete { step: usize, steps: usize },
    #[error("invalid levels: {0}")]
    Levels(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn solver(context: impl Into<String>, source: SolverError) -> Self {
        HarnessError::Solver { context: context.into(), source }
    }

    /// Process exit status: 2 for usage and configuration errors, 3 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::Config(_) | HarnessError::Levels(_) => 2,
            HarnessError::Solver { .. } | HarnessError::Multiphase(_) | HarnessError::Incomplete { .. } => 3,
            HarnessError::Energy(_) => 2,
            HarnessError::Mesh(_) | HarnessError::Io(_) | HarnessError::Csv(_) | HarnessError::Json(_) => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
