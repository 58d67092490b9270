//! Numerical laboratory for conformal energies on hyperboloidal foliations.
//!
//! The crate is organised around the interior of the light cone
//! `K = {t > |x| + 1}`, foliated by hyperboloids `H_s = {t = sqrt(s^2 + r^2)}`:
//!
//! * [`jets`] — truncated multivariate Taylor (jet) arithmetic in `(t, x1, x2, x3)`,
//!   the exact-differentiation engine behind every pointwise check;
//! * [`frame`] — hyperbolic variables, frame transition matrices, vector fields
//!   and homogeneity tests;
//! * [`forms`] — constant quadratic/cubic forms, the null condition and
//!   hyperbolic-frame component bounds;
//! * [`identities`] — pointwise residual verification of the differential
//!   identities used by the energy method;
//! * [`energy`] — quadrature over hyperboloids, flat/curved conformal energies,
//!   controlled norms, Hardy and Sobolev constants, energy-inequality slack;
//! * [`solver`] — radially reduced evolution of the quasilinear wave equation
//!   with hyperboloid resampling, bootstrap monitoring and blow-up detection.

pub mod energy;
pub mod forms;
pub mod frame;
pub mod identities;
pub mod jets;
pub mod solver;

pub use frame::ConePoint;
pub use jets::Jet;
