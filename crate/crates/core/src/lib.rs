//! Calibration, simulation and diagnostics for linear propagator models of
//! price impact.
//!
//! The pipeline runs: [`events`] (ingest and label trades), [`spectral`]
//! (two- and three-point cross-correlations), [`calibration`] (kernel
//! estimation), [`simulate`] (returns and prediction errors from kernels),
//! [`diagnostics`] (aggregate impact, signature plots, responses) and
//! [`synth`] (synthetic order flow with known ground truth).

pub mod calibration;
pub mod diagnostics;
pub mod error;
pub mod events;
pub mod linalg;
pub mod simulate;
pub mod spectral;
pub mod synth;

pub use calibration::{CalibratedModel, CalibrationConfig, ModelKind};
pub use error::{Error, Result};
pub use events::{DaySeries, InstrumentData, Label, Sign, Split, TradeEvent};
pub use spectral::{CrossCorr2, CrossCorr3};
