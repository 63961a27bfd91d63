//! Boundary-integral (multipole) solver for the subwavelength band structure
//! of a two-dimensional square lattice of circular gas bubbles in a liquid,
//! and for the defect band created by resizing the bubbles along a line.
//!
//! The crate is organized around the pipeline
//!
//! 1. [`specfun`]: small-argument Bessel/Hankel kernels;
//! 2. [`greens`]: quasi-periodic Green's functions via Ewald summation,
//!    their smooth lattice remainders and gradients;
//! 3. [`operators`]: dense Fourier-basis matrices of the boundary-integral
//!    operators on the bubble circle (free, quasi-periodic, perturbation and
//!    defect system blocks);
//! 4. [`solver`]: characteristic-value computation (Muller's method), Bloch
//!    bands, band edges, defect bands and band-edge curvature;
//! 5. [`asymptotics`]: closed-form and quadrature-based asymptotic
//!    quantities (capacitance, dilute band law, dilute defect equation,
//!    critical defect size, small-perturbation defect formula).
//!
//! All lengths are in units of the lattice period and both wave speeds are
//! normalized to 1, so the wavenumber inside and outside the bubbles equals
//! the frequency `omega`.

pub mod asymptotics;
pub mod error;
pub mod greens;
pub mod operators;
pub mod solver;
pub mod specfun;

pub use error::{Error, Result};
