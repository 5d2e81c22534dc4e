//! GMM-based pilot design and downlink channel estimation for FDD MIMO
//! systems, with the experiment harness that drives it.

pub mod channel_model;
pub mod checks;
pub mod error;
pub mod estimators;
pub mod gmm;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod pilot_design;
pub mod rng;

pub use error::{Error, Result};
pub use num_complex::Complex64 as c64;
