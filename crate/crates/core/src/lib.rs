//! Adaptive selection of sensing locations by Bayesian optimization over a
//! semi-parametric residual Gaussian process.
//!
//! The belief over the quality field is a parametric prior mean (a reference
//! map shifted by `(t_x, t_y)` and scaled by `c`) plus a zero-mean GP over the
//! residuals. After each observation the latent parameters are re-estimated
//! by MAP, residuals are recomputed and the GP is refit. Regions are searched
//! one after another with EI or UCB over a discrete candidate grid.
//!
//! * [`field`]: quality maps, regions, random perturbations
//! * [`gp`]: squared-exponential GP regression
//! * [`spar`]: the semi-parametric model and MAP estimation
//! * [`acquisition`]: EI / UCB and candidate maximization
//! * [`planner`]: the per-region search loop and trace I/O
//! * [`oracle`]: simulated and replayed quality observations
//! * [`harness`]: Monte-Carlo experiments over prior perturbations
//! * [`raster`]: grid export for plotting
//! * [`cli`]: the `sparbo` command line

pub mod acquisition;
pub mod cli;
pub mod error;
pub mod field;
pub mod gp;
pub mod harness;
pub mod optim;
pub mod oracle;
pub mod planner;
pub mod raster;
pub mod spar;

pub use acquisition::{expected_improvement, ucb, AcquisitionSpec};
pub use error::{Error, Result};
pub use field::{CombineRule, FieldFile, Peak, PerturbationSpec, Point2, QualityField, Region};
pub use gp::{GpState, KernelParams};
pub use harness::{run_experiment, AggregateResult, ExperimentConfig, PerturbDirection};
pub use oracle::{QualityOracle, ReplayOracle, SimulatedOracle};
pub use planner::{run_session, BestScope, ObservationRecord, SessionConfig, SessionResult};
pub use spar::{LatentParams, ModelConfig, PriorMode, SparModel, ThetaPrior};
