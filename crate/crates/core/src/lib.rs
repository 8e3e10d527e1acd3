//! Quantized output feedback for sampled-data linear plants.
//!
//! A Luenberger observer produces both the control input and the center of
//! a zooming hypercube quantizer for the plant output. The crate covers the
//! output-only protocol (encoder runs its own observer replica) and the
//! full protocol where the controller also quantizes its output estimate and
//! the control input around the origin.

pub mod design;
pub mod error;
pub mod numerics;
pub mod plant;
pub mod quantizer;
pub mod schedule;
pub mod simulator;

pub use error::{Error, Result};
pub use numerics::Matrix;
