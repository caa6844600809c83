//! Convert small pre-trained feedforward ANNs into integrate-and-fire
//! spiking networks and calibrate a per-layer, per-channel, per-timestep
//! additive bias so the SNN tracks the ANN's activations at every step.
//!
//! The crate covers the full pipeline: tensor kernels, ANN definition and
//! desk-scale training, threshold initialization and weight scaling, IF
//! simulation with spike traces, forward-only temporal bias calibration
//! (plus a time-averaged baseline), experiment harnesses and a CLI.

pub mod ann;
pub mod bench;
pub mod calibrate;
pub mod cli;
pub mod config;
pub mod convert;
pub mod data;
pub mod error;
pub mod io;
pub mod report;
pub mod snn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
