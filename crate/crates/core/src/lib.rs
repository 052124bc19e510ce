pub mod bootstrap;
pub mod calibration;
pub mod cli;
pub mod error;
pub mod inference;
pub mod io;
pub mod numerics;
pub mod pattern;
pub mod rng;
pub mod simulate;
pub mod synthetic;

pub use error::{Error, Result};
