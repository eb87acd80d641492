//! Distributional identity for `B` tested against a Gaussian bump,
//!
//! ```text
//! ⟨B_t, φ⟩ = ⟨B_0, φ⟩ + ∫ ⟨(Dφ - Dφᵀ) v, B_s⟩ ds
//!          + σ Σ_k ∫ ⟨Dφ e_k, B_s⟩ dW^k_s + σ²/2 ∫ ⟨Δφ, B_s⟩ ds.
//! ```
//!
//! Space integrals are taken in Lagrangian labels: with `det DΦ = 1`,
//! `∫ F(x)·B(s, x) dx = ∫ F(Φ_s(x₀))·DΦ_s(x₀)B₀(x₀) dx₀`, so one forward
//! integration per quadrature node yields every time slice at once. The
//! identity still relies on `det DΦ = 1` and `div B = 0` (the antisymmetric
//! drift term only appears after integrating by parts), so it is a genuine
//! check of the flow and Jacobian.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{InitialField, VelocityField};
use crate::flow::step::Stepper;
use crate::flow::{integrate_flow_with_jacobian, BrownianPath, JacobianMethod};
use crate::geometry::{CylPoint, Mat3, Vec3};

/// `φ(x) = a exp(-|x - c|² / (2w²))` with a fixed unit direction `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpTestFunction {
    pub center: Vec3,
    pub width: f64,
    pub direction: Vec3,
}

impl BumpTestFunction {
    /// Support cut-off in widths; `exp(-4.5²/2) ≈ 4e-5`.
    pub const CUTOFF: f64 = 4.5;

    pub fn new(center: Vec3, width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) || !center.is_finite() {
            return Err(Error::InvalidParameter(format!("bad test function: center {center:?}, width {width}")));
        }
        Ok(Self {
            center,
            width,
            direction: Vec3::new(1.0, 1.0, 0.0) / 2f64.sqrt(),
        })
    }

    pub fn support_radius(&self) -> f64 {
        Self::CUTOFF * self.width
    }

    #[inline]
    fn profile(&self, x: Vec3) -> (f64, Vec3, f64) {
        let d = x - self.center;
        let w2 = self.width * self.width;
        let q = d.norm_sq() / w2;
        let g = (-0.5 * q).exp();
        let grad = d * (-g / w2);
        let lap = (q - 3.0) / w2 * g;
        (g, grad, lap)
    }

    pub fn value(&self, x: Vec3) -> Vec3 {
        self.direction * self.profile(x).0
    }

    /// `Dφ`, row-major.
    pub fn jacobian(&self, x: Vec3) -> Mat3 {
        Mat3::outer(self.direction, self.profile(x).1)
    }

    pub fn laplacian(&self, x: Vec3) -> Vec3 {
        self.direction * self.profile(x).2
    }
}

/// Tensor grid in cylindrical coordinates around the test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Node spacing in units of the bump width.
    pub spacing: f64,
    /// Recompute at twice the spacing and fail if the residual moves by more
    /// than 20%.
    pub check_resolution: bool,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            spacing: 0.8,
            check_resolution: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct WeakFormReport {
    /// `⟨B_t, φ⟩`.
    pub lhs_t: f64,
    /// `⟨B_0, φ⟩`.
    pub lhs_0: f64,
    pub drift: f64,
    /// `σ²/2 ∫ ⟨Δφ, B⟩`.
    pub ito_correction: f64,
    /// `σ Σ ⟨Dφ e_k, B⟩ ΔW^k`.
    pub ito_sum: f64,
    /// Signed: `lhs_t - lhs_0 - drift - ito_correction - ito_sum`.
    pub residual: f64,
    /// Sum of the magnitudes of all terms.
    pub scale: f64,
    pub relative: f64,
    pub nodes: usize,
    /// Nodes whose trajectory came too close to the axis for the field
    /// Jacobian and fell back to finite differences.
    pub fallback_nodes: usize,
}

#[derive(Default, Clone, Copy)]
struct Terms {
    g0: f64,
    gt: f64,
    drift: f64,
    lap: f64,
    ito: f64,
}

impl Terms {
    fn scaled_add(&mut self, o: &Terms, w: f64) {
        self.g0 += w * o.g0;
        self.gt += w * o.gt;
        self.drift += w * o.drift;
        self.lap += w * o.lap;
        self.ito += w * o.ito;
    }
}

struct Accumulator<'a> {
    phi: &'a BumpTestFunction,
    field: &'a dyn VelocityField,
    path: &'a BrownianPath,
    noisy: bool,
    n_steps: usize,
    terms: Terms,
}

impl Accumulator<'_> {
    /// Record `(Φ_{t_n}, Z_n)`; time integrals by the trapezoid rule, Itô sums
    /// at the left endpoint.
    #[inline]
    fn visit(&mut self, n: usize, x: Vec3, z: Vec3) {
        let dt = self.path.dt();
        let (g, grad, lap) = self.phi.profile(x);
        let a = self.phi.direction;
        let az = a.dot(z);
        if n == 0 {
            self.terms.g0 = g * az;
        }
        if n == self.n_steps {
            self.terms.gt = g * az;
        }
        let w = if n == 0 || n == self.n_steps { 0.5 * dt } else { dt };
        let v = self.field.velocity(n as f64 * dt, x);
        // (Dφ v)·Z - (Dφᵀ v)·Z with Dφ = a ⊗ ∇g
        self.terms.drift += w * (grad.dot(v) * az - a.dot(v) * grad.dot(z));
        self.terms.lap += w * lap * az;
        if self.noisy && n < self.n_steps {
            self.terms.ito += az * grad.dot(self.path.increment(n));
        }
    }
}

fn node_terms(
    b0: &InitialField,
    field: &dyn VelocityField,
    path: &BrownianPath,
    sigma: f64,
    k: usize,
    phi: &BumpTestFunction,
    x0: Vec3,
) -> Result<(Terms, bool)> {
    let mut acc = Accumulator {
        phi,
        field,
        path,
        noisy: sigma != 0.0,
        n_steps: k,
        terms: Terms::default(),
    };
    let stepper = Stepper::new(field, sigma);
    let dt = path.dt();
    let z0 = b0.evaluate(x0);
    let (mut x, mut z) = (x0, z0);
    acc.visit(0, x, z);
    let mut failed = None;
    for n in 0..k {
        let kick = if sigma == 0.0 { Vec3::ZERO } else { path.increment(n) * sigma };
        match stepper.step_with_tangent(n as f64 * dt, x, z, dt, kick) {
            Ok((nx, nz)) => (x, z) = (nx, nz),
            Err(e) => {
                failed = Some(e);
                break;
            }
        }
        if !(x.is_finite() && z.is_finite()) {
            return Err(Error::NonFinite {
                step: n + 1,
                t: (n + 1) as f64 * dt,
            });
        }
        acc.visit(n + 1, x, z);
    }
    match failed {
        None => Ok((acc.terms, false)),
        Some(Error::NearAxis { .. }) => {
            let flow = integrate_flow_with_jacobian(field, x0, path, sigma, JacobianMethod::finite_difference())?;
            acc.terms = Terms::default();
            let jacs = flow.jacobians.as_ref().ok_or(Error::MissingJacobian)?;
            for (n, (x, jac)) in flow.trajectory.iter().zip(jacs).enumerate().take(k + 1) {
                acc.visit(n, *x, *jac * z0);
            }
            Ok((acc.terms, true))
        }
        Some(e) => Err(e),
    }
}

fn quadrature_nodes(phi: &BumpTestFunction, sigma: f64, t: f64, spacing: f64) -> Vec<(Vec3, f64)> {
    let reach = phi.support_radius() + 5.0 * sigma.abs() * t.sqrt();
    let h = spacing * phi.width;
    let c = phi.center;
    let rc = c.radius();
    let (r_lo, r_hi) = ((rc - reach).max(0.0), rc + reach);
    let (z_lo, z_hi) = (c.z - reach, c.z + reach);
    let n_r = ((r_hi - r_lo) / h).ceil().max(1.0) as usize;
    let n_z = ((z_hi - z_lo) / h).ceil().max(1.0) as usize;
    let n_t = (std::f64::consts::TAU * r_hi / h).ceil().max(4.0) as usize;
    let (dr, dz, dth) = ((r_hi - r_lo) / n_r as f64, (z_hi - z_lo) / n_z as f64, std::f64::consts::TAU / n_t as f64);
    let mut nodes = Vec::with_capacity(n_r * n_z * n_t);
    for i in 0..n_r {
        let r = r_lo + (i as f64 + 0.5) * dr;
        for j in 0..n_t {
            for l in 0..n_z {
                let z = z_lo + (l as f64 + 0.5) * dz;
                nodes.push((CylPoint::new(r, j as f64 * dth, z).to_cartesian(), r * dr * dth * dz));
            }
        }
    }
    nodes
}

fn assemble(
    b0: &InitialField,
    field: &dyn VelocityField,
    path: &BrownianPath,
    sigma: f64,
    t: f64,
    phi: &BumpTestFunction,
    spacing: f64,
) -> Result<WeakFormReport> {
    let k = path.step_index(t)?;
    let nodes = quadrature_nodes(phi, sigma, t, spacing);
    let per_node: Vec<Result<(Terms, bool)>> = nodes
        .par_iter()
        .map(|&(x0, _)| node_terms(b0, field, path, sigma, k, phi, x0))
        .collect();
    let mut total = Terms::default();
    let mut fallback_nodes = 0;
    for (res, &(_, w)) in per_node.into_iter().zip(&nodes) {
        let (terms, fell_back) = res?;
        total.scaled_add(&terms, w);
        fallback_nodes += fell_back as usize;
    }
    let ito_correction = 0.5 * sigma * sigma * total.lap;
    let ito_sum = sigma * total.ito;
    let residual = total.gt - total.g0 - total.drift - ito_correction - ito_sum;
    let scale = total.gt.abs() + total.g0.abs() + total.drift.abs() + ito_correction.abs() + ito_sum.abs();
    Ok(WeakFormReport {
        lhs_t: total.gt,
        lhs_0: total.g0,
        drift: total.drift,
        ito_correction,
        ito_sum,
        residual,
        scale,
        relative: if scale > 0.0 { residual.abs() / scale } else { 0.0 },
        nodes: nodes.len(),
        fallback_nodes,
    })
}

/// Residual of the weak identity on one realization.
///
/// With `quad.check_resolution`, the residual is recomputed at twice the node
/// spacing and `QuadratureUnderResolved` is returned if the two differ by more
/// than 20% of the larger of `|residual|` and `tolerance · scale`.
#[allow(clippy::too_many_arguments)]
pub fn weak_form_residual(
    b0: &InitialField,
    field: &dyn VelocityField,
    path: &BrownianPath,
    sigma: f64,
    t: f64,
    phi: &BumpTestFunction,
    quad: &QuadratureSpec,
    tolerance: f64,
) -> Result<WeakFormReport> {
    if !(quad.spacing > 0.0) {
        return Err(Error::InvalidParameter("quadrature spacing must be positive".into()));
    }
    let fine = assemble(b0, field, path, sigma, t, phi, quad.spacing)?;
    if quad.check_resolution {
        let coarse = assemble(b0, field, path, sigma, t, phi, 2.0 * quad.spacing)?;
        let yardstick = fine.residual.abs().max(tolerance * fine.scale);
        if (fine.residual - coarse.residual).abs() > 0.2 * yardstick {
            return Err(Error::QuadratureUnderResolved {
                coarse: coarse.residual,
                fine: fine.residual,
            });
        }
    }
    Ok(fine)
}
