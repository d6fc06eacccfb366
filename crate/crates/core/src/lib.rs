//! Energy-based diffusion model for 6D rigid-pose estimation from simulated
//! tactile contact imprints.
//!
//! The crate is organized around the estimation pipeline:
//!
//! - [`geom`]: pose representations (9-vector with 6D rotation), ADD/ADD-S
//!   metrics, icosphere pose priors, rotation averaging, object models.
//! - [`sim`]: the deterministic two-plate contact-imprint simulator, grasp
//!   synthesis, trajectory generation and dataset IO.
//! - [`diffusion`]: noise schedule, perturbation kernel, denoising score
//!   matching loss and the adaptive Dormand–Prince PF-ODE integrator.
//! - [`ad`]: a small reverse-mode tape used to differentiate the energy
//!   network, including the score (an input gradient) inside the training
//!   loss (a parameter gradient of a gradient).
//! - [`energynet`]: the render-compare energy network, its exact score, the
//!   training step and checkpoint IO.
//! - [`pipeline`]: pre-filtering, PF-ODE refinement, post-ranking, tracking
//!   and uncertainty-based grasp selection.
//! - [`baselines`]: direct regression, ICP and pose-grid matching baselines.
//! - [`config`], [`metrics`], [`harness`]: run configuration, metrics records
//!   and the evaluation harness shared by the CLI and the acceptance tests.

pub mod ad;
pub mod baselines;
pub mod config;
pub mod diffusion;
pub mod energynet;
pub mod geom;
pub mod harness;
pub mod metrics;
pub mod ode;
pub mod pipeline;
pub mod seed;
pub mod sim;

pub use config::RunConfig;
pub use diffusion::NoiseSchedule;
pub use energynet::{ArchConfig, EnergyModel, TrainConfig};
pub use geom::{ObjectModel, Pose9, RigidPose, SymmetryClass, SymmetryKind};
pub use metrics::{MetricKind, MetricsRecord};
pub use pipeline::{EstimationResult, PipelineConfig, TrackerState};
pub use sim::{Sample, SensorConfig, TactileImprint};
