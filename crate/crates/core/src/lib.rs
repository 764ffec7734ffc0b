//! Penalized logistic regression that tolerates label noise.
//!
//! The crate is built around one solver, [`solver::fit_penalized`], a
//! weighted L1/L2-penalized binary logistic regression. Every model reduces
//! to it:
//!
//! * [`robust`] adds one L1-penalized shift parameter per training row and
//!   trains it as extra identity columns of the design matrix.
//! * [`flipping`] treats the true label as latent with a global flipping
//!   matrix and runs EM, with the M-step as instance-weighted regression.
//! * [`prefilter`] drops rows whose nearest neighbours disagree with their
//!   label before fitting.
//!
//! [`selection`] tunes the penalties, [`simulation`] regenerates the
//! synthetic comparisons, and [`model_file`] defines the on-disk model
//! format used by the command-line tool.

pub mod data;
pub mod error;
pub mod flipping;
pub mod model_file;
pub mod prefilter;
pub mod robust;
pub mod selection;
pub mod simulation;
pub mod solver;

pub use data::{augment_with_identity, subsample_negatives, AugmentedProblem, Design, SparseDataset, SparseRow};
pub use error::{Error, Result};
pub use solver::{fit_path, fit_penalized, GlmFit, PenaltySpec, SolverOptions};
