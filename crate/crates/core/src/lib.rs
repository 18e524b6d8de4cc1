//! Two-flavor collective neutrino oscillation simulator.
//!
//! The crate is organised bottom-up: [`flavor`] holds per-beam storage and
//! kernels, [`spectra`] and [`matter`] provide the physical inputs,
//! [`geometry`] assembles the neutrino-neutrino Hamiltonian, [`solver`]
//! runs the adaptive evolution loop across the lanes of [`parallel`], and
//! [`io`] handles configuration and snapshot files. [`bench`] contains the
//! kernel microbenchmarks.

pub mod bench;
pub mod error;
pub mod flavor;
pub mod geometry;
pub mod io;
pub mod matter;
pub mod parallel;
pub mod solver;
pub mod spectra;
pub mod units;

pub use error::{Error, Result};
