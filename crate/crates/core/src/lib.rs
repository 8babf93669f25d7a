//! Digital twin of a feedback-cooled levitated nanoparticle.
//!
//! The crate is organized in four layers:
//!
//! - [`model`]: analytic physics — susceptibilities, noise densities, rate
//!   bookkeeping and closed-form occupation formulas.
//! - [`filter`]: the feedback electronics — composable filter stages, the
//!   pure-delay controller, closed-loop susceptibility and Nyquist stability.
//! - [`sim`]: synthetic data generation — time-domain closed-loop stochastic
//!   simulation and frequency-domain synthesis of correlated heterodyne
//!   sideband records.
//! - [`est`]: the analysis stack — PSD/cross-PSD estimation, burst
//!   postselection, carrier phase correction, model fits, and the three
//!   independent phonon thermometers.
//!
//! [`harness`] ties everything together into reproducible gain sweeps and
//! noise-squashing demonstrations driven by a single configuration file.
//!
//! All internal quantities are SI. Spectral densities are two-sided in
//! angular frequency unless tagged otherwise; see
//! [`spectrum::SpectralConvention`].

pub mod error;
pub mod est;
pub mod fftutil;
pub mod filter;
pub mod harness;
pub mod io;
pub mod model;
pub mod sim;
pub mod spectrum;
pub mod trace;

/// Reduced Planck constant (CODATA), J s.
pub const HBAR: f64 = 1.054_571_817e-34;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;
