//! Adaptive variational statevector toolkit.

pub mod ansatz;
pub mod error;
pub mod greens;
pub mod linalg;
pub mod models;
pub mod nonlinear;
pub mod oracle;
pub mod pauli;
pub mod resources;
pub mod series;
pub mod spectral;
pub mod statevector;
pub mod variational;

pub use error::{Error, Result};
