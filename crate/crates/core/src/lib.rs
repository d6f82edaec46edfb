//! Synthetic signal/nuisance benchmarks for linear classifiers under
//! nuisance-only distribution shift.
//!
//! The pipeline is: draw a noisy training set ([`data`]), fit a sparse or
//! minimum-norm linear model ([`trainers`]), build a shift that only moves
//! nuisance coordinates ([`shift`]), read off the model's nuisance
//! statistics ([`diagnostics`]), evaluate closed-form lower bounds on the
//! OOD error ([`bounds`]) and check everything against Monte Carlo
//! ([`estimators`]).

pub mod bounds;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod shift;
pub mod stats;
pub mod trainers;

pub use data::{sample_dataset, Dataset, ProblemSpec};
pub use error::{Error, Result};
pub use model::{margin, predict, training_error, LinearModel};
pub use shift::{make_angled_shift, make_paper_shift, sample_ood_testset, sample_shift, ShiftFamily, ShiftSpec};
