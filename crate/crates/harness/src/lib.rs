//! Experiment harness: configuration, sweeps over training size and label
//! noise, bound verification, the minimum-norm sup-norm experiment and
//! figures.

pub mod config;
pub mod error;
pub mod plots;
pub mod prop_a1;
pub mod sweep;
pub mod verify;

pub use config::{ShiftKind, SweepConfig, Trainer};
pub use error::{HarnessError, Result};
