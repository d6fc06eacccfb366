//! Comparison methods the benchmark harness runs next to the energy model:
//!
//! * direct pose regression with the same encoders ([`RegressorModel`]),
//! * point-to-point ICP on back-projected contact points ([`icp_refine`]),
//! * exhaustive render-and-compare over a pose grid ([`grid_match`]).
//!
//! The regressor honors a fairness contract: it consumes the same datasets
//! and shares every encoder hyperparameter with the energy model, differing
//! only in the head (a direct 9-vector pose output, no time embedding and no
//! candidate-pose input). The ICP here is a plain point-to-point stand-in
//! for probabilistic registration methods and is labeled as such by the
//! harness.

mod grid;
mod icp;
mod regress;

pub use grid::{grid_match, imprint_distance, GridConfig, GridMatchResult, PoseGrid};
pub use icp::{
    back_project_imprint, icp_refine, plate_visible_points, IcpResult, ICP_DEFAULT_MAX_ITER,
};
pub use regress::{
    load_regressor, load_regressor_file, regress, save_regressor, save_regressor_file,
    train_regressor, RegressorModel,
};

use thiserror::Error;

use crate::energynet::EnergyError;
use crate::geom::GeomError;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("bad baseline config: {0}")]
    BadConfig(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}
