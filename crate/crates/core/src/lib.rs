//! Interferometric hyperspectral imaging toolkit.
//!
//! Simulates the degradation chain of a Sagnac-type imager, calibrates its
//! parameters from flat-field captures, synthesizes training pairs and
//! reconstructs hyperspectral cubes from interferograms.

pub mod calibrate;
pub mod cube;
pub mod degrade;
pub mod error;
pub mod evaluate;
pub mod reconstruct;
pub mod rng;
pub mod synthesize;
pub mod transform;

pub use cube::{AxisKind, Cube, InstrumentProfile};
pub use error::{Error, Result};
