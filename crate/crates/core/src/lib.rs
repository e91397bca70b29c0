//! Pulse-level simulation of single-qutrit randomized benchmarking with
//! leakage tracking, DRAG/detuning pulse shaping, readout modelling and the
//! rate-equation analysis used to extract leakage and seepage rates.

pub mod analysis;
pub mod calibration;
pub mod cliffords;
pub mod error;
pub mod pulses;
pub mod qutrit;
pub mod rb;
pub mod readout;
pub mod units;

pub use error::{Error, Result};
