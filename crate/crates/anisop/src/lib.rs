//! Numerical toolkit for anisotropic `p`-energies built from combined
//! weighted-`ℓ^s` / elliptic-matrix norms.
//!
//! The crate has four layers:
//!
//! * [`norms`] — the norm families `|ξ|_{s,a}`, `|ξ|_A`, their `p`-combination
//!   `H`, the Lagrangian `F = H^p/p`, its gradient field `𝒜 = ∇F`, and the
//!   ellipticity/structure constants that govern them.
//! * [`bregman`] — Bregman distances of `ξ ↦ |ξ|^p` for those norms, the
//!   comparator quantities `R1`/`R2`, a chain-rule decomposition, and seeded
//!   Monte-Carlo estimation of the two-sided equivalence constants.
//! * [`energy`] — finite-difference grid domains, the discrete energy
//!   `Q[φ] = Σ (H(∇φ)^p + V|φ|^p) h^n`, its first variation, simplified-energy
//!   brackets for products `u·ψ`, and Morrey-norm evaluation.
//! * [`variational`] — projected-gradient solvers for the weighted Rayleigh
//!   quotient (generalized Hardy constants), obstacle capacities, the
//!   capacity/energy ratio bracket, tail constants on shrinking collars, and
//!   minimizer diagnostics.
//!
//! Everything downstream of a seed is deterministic: the same inputs and seed
//! produce bit-identical outputs regardless of thread count.

pub mod bregman;
pub mod calibration;
pub mod energy;
pub mod error;
pub mod gridio;
pub mod norms;
pub mod sampling;
pub mod sum;
pub mod variational;

pub use error::AnisopError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, AnisopError>;
