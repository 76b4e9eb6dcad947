//! Hawkes processes through their population structure: exact thinning
//! simulation, the age pyramid and its finite-dimensional Markov state,
//! moment ODEs, Riccati-type Laplace transforms and a Monte Carlo harness
//! to check them against each other.

pub mod error;
pub mod goodness;
pub mod kernels;
pub mod laplace;
pub mod mc;
pub mod model;
pub mod moments;
pub mod numerics;
pub mod pyramid;
pub mod simulate;

pub use error::{Error, Result};
