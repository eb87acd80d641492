//! Lagrangian simulation of a passive vector field stretched by a Hölder
//! rotation flow, with and without transport noise.
//!
//! The crate integrates the stochastic flow `dX = v dt + σ dW` together with
//! its Jacobian, reconstructs `B(t, ·)` from the representation formula, and
//! measures stretching against the closed-form solution.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod exact;
pub mod fields;
pub mod flow;
pub mod geometry;
pub mod montecarlo;
pub mod transport;

pub use error::{Error, Result};
pub use exact::{blowup_envelope, exact_b, ExactSolution};
pub use fields::{holder_velocity, preset_initial_field, HolderRotationField, InitialField, VelocityField, ZeroField};
pub use flow::{
    flow_jacobian, integrate_flow, integrate_flow_with_jacobian, integrate_inverse_flow, inverse_jacobian_evolve,
    sample_brownian, BrownianPath, FlowSample, InverseOptions, JacobianMethod, Scheme,
};
pub use geometry::{adjugate, CylPoint, CylVec, Mat3, Vec3};
pub use montecarlo::{run_ensemble, split_seed, EnsembleSpec, EnsembleStats, ReplicateMetric};
pub use transport::{pullback_at, pushforward, reconstruct_grid, FieldSample, GridSpec, PullbackOptions, Reconstructor};
