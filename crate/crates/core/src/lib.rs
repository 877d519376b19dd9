//! Driven Jaynes-Cummings model of a single atom in a lossy cavity:
//! Liouvillian steady states, photon correlation functions, quantum
//! trajectories, position averaging and oscillation fits.
//!
//! Rates and detunings are angular frequencies in rad/µs and times are in µs
//! internally; see [`units`] for the conventions at the boundary.

pub mod analysis;
pub mod averaging;
pub mod correlations;
pub mod error;
pub mod expm;
pub mod fitting;
pub mod liouvillian;
pub mod operators;
pub mod trajectory;
pub mod units;

pub use error::{Error, Result};
pub use operators::{HilbertDims, SystemParams};

extern "C" {
    fn openblas_set_num_threads(n: i32);
}

/// Restrict the BLAS backend to one thread. Parallelism comes from
/// independent work units instead, and nested BLAS threads only contend.
pub fn single_threaded_blas() {
    // SAFETY: plain setter exported by the linked OpenBLAS.
    unsafe { openblas_set_num_threads(1) }
}
