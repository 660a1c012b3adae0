//! Deep direct geo-localization.
//!
//! A CNN backbone followed by stacked LSTM cells regresses the meter-space
//! offset from an anchor (a raw phone-grade GPS fix or a ground control
//! point) to the true position. The crate carries everything needed to train
//! and score that model at desk scale: UTM geodesy, a small reverse-mode
//! autodiff engine, GPS noise simulation, a synthetic world renderer, the SGD
//! training loop and meter-space evaluation.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geodesy;
pub mod layers;
pub mod model;
pub mod training;

pub use error::{Error, Result};
