//! Hierarchical penalized second-order GEE for clustered binary data.
//!
//! Marginal means follow a logistic model and pairwise association a
//! log-odds-ratio model. Coefficients are selected in two penalized stages
//! (mean first, then association, optionally respecting hierarchy
//! constraints) starting from an alternating-logistic-regression fit, with
//! the tuning parameter chosen by a score-based BIC and standard errors
//! from a sandwich estimator.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alr;
pub mod error;
pub mod inference;
pub mod io;
pub(crate) mod linalg;
pub mod model;
pub mod penalty;
pub mod scores;
pub mod selection;
pub mod simulate;
pub mod tuning;

pub use alr::{fit_alr, AlrFit, FitDiagnostics};
pub use error::{Error, Result};
pub use inference::{sandwich_covariance, SandwichEstimate};
pub use model::{ClusterData, Dataset, Params};
pub use penalty::{PenaltyConfig, PenaltyKind};
pub use selection::{fit_hpgee2, AnalysisMode, Constraint, FitResult, ModeKind, SolverOptions};
pub use simulate::{replicate_study, simulate_dataset, StudyConfig};
pub use tuning::{grid_search, GridSpec, TuningReport};
