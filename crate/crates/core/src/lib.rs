//! Fourier pseudospectral solver for the vacancy modified phase field crystal
//! equation `alpha psi_t + beta psi = M Delta mu`, `psi = phi_t`, with linear,
//! mass-conserving, energy-stable time integrators and an adaptive time-step
//! controller.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Failed runs carry their partial records back to the caller.
#![allow(clippy::result_large_err)]

pub mod adaptive;
pub mod error;
pub mod io;
pub mod model;
pub mod schemes;
pub mod sim;
pub mod spectral;

pub use adaptive::{AdaptiveParams, ControllerKind};
pub use error::{Error, Result};
pub use model::{ModelParams, SchemeParams};
pub use schemes::{SchemeKind, SchemeState, StepOrder, StepReport};
pub use sim::{InitialCondition, RunOptions, RunOutput, TimeSeriesRecord};
pub use spectral::{Grid, RealField, SpectralField};
