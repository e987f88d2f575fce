//! Numerical semiclassical analysis on periodic grids.
//!
//! The crate is organised along the classical/quantum correspondence:
//! [`phasespace`] integrates Hamiltonian flows together with their
//! linearisation and action, [`transforms`] holds grid wave functions and the
//! phase-space transforms (h-Fourier, Wigner, Bargmann), [`quantization`]
//! assembles Weyl and left quantizations as dense operators, [`wavepackets`]
//! and [`propagators`] compare Gaussian-beam approximations with an exact
//! split-step oracle, and [`multilevel`] covers two-level adiabatic transport
//! and Landau–Zener hopping.

pub mod error;
mod fft;
pub mod linalg;
pub mod multilevel;
pub mod ode;
pub mod phasespace;
pub mod propagators;
pub mod quantization;
pub mod rng;
pub mod transforms;
pub mod wavepackets;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
