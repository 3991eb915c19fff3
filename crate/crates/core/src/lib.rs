//! Lattice P(phi)_2 fields on the unit torus.
//!
//! The crate samples Wick-ordered polynomial interactions on an `n x n`
//! periodic lattice by integrating the backward Polchinski flow, couples the
//! result to the Gaussian free field through an explicit difference field,
//! cross-checks it against a variational representation and a MALA sampler,
//! and measures extreme-value statistics of the sampled fields.

pub mod error;
pub mod extremes;
mod fft;
pub mod flow;
pub mod gff;
pub mod harness;
pub mod mcmc;
pub mod norms;
pub mod seed;
pub mod spectral;
pub mod stats;
pub mod variational;
pub mod wick;

pub use error::{Error, Result};
pub use spectral::{LatticeGeometry, RealField, Scale, SpectralField};
