//! Stretching metrics, ideal lines, power-law fits, and residual checks.

mod divergence;
mod fit;
mod line;
mod stretch;
mod weak;

pub use divergence::{divergence_at, divergence_residual, reconstructed_divergence};
pub use fit::{fit_blowup_exponent, PowerLawFit};
pub use line::{evolve_line, evolve_line_partial, LineEvolution, LineSpec, Polyline};
pub use stretch::{stretch_supremum, RingSup, StretchRegion, StretchReport};
pub use weak::{weak_form_residual, BumpTestFunction, QuadratureSpec, WeakFormReport};
