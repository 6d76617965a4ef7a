pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fitting;
pub mod lindblad;
pub mod physics;
pub mod polarization;
pub mod pulses;
pub mod svg;

pub use error::{Error, Result};
