//! Streaming full-body motion tracking from a head-mounted display plus zero
//! to three body-worn inertial sensors.

pub mod body_model;
pub mod error;
pub mod harness;
pub mod net;
pub mod objectives;
pub mod rotmath;
pub mod sensing;

pub use error::{Error, Result};
