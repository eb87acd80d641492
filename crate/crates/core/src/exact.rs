//! Closed-form deterministic solution inside the unit cylinder.
//!
//! For `v_θ = r^α` on `r < 1` the transport equations for the cylindrical
//! components decouple. Each component is carried along circles at angular
//! speed `r^{α-1}`, and the angular component picks up a shear term that
//! grows linearly in time:
//!
//! ```text
//! B_r(t, r, θ, z) = B_r⁰(r, θ - r^{α-1} t, z)
//! B_z(t, r, θ, z) = B_z⁰(r, θ - r^{α-1} t, z)
//! B_θ(t, r, θ, z) = B_θ⁰(r, θ - r^{α-1} t, z) - (1 - α) r^{α-1} t B_r⁰(r, θ - r^{α-1} t, z)
//! ```
//!
//! This is the reference every numerical path is checked against.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::InitialField;
use crate::geometry::{to_cylindrical, vector_from_cylindrical, vector_to_cylindrical, CylPoint, CylVec, Vec3};

type CylFieldFn = dyn Fn(CylPoint) -> CylVec + Send + Sync;

#[derive(Clone)]
pub struct ExactSolution {
    alpha: f64,
    b0: Arc<CylFieldFn>,
}

impl ExactSolution {
    /// `b0` returns `(B_r⁰, B_θ⁰, B_z⁰)` at a cylindrical point.
    pub fn new(alpha: f64, b0: impl Fn(CylPoint) -> CylVec + Send + Sync + 'static) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1], got {alpha}"
            )));
        }
        Ok(Self {
            alpha,
            b0: Arc::new(b0),
        })
    }

    /// Wrap a Cartesian initial field by projecting onto the local frame.
    pub fn from_initial_field(alpha: f64, b0: &InitialField) -> Result<Self> {
        let b0 = b0.clone();
        Self::new(alpha, move |q: CylPoint| {
            let p = q.to_cartesian();
            // r > 0 is guaranteed by the domain check before any evaluation
            vector_to_cylindrical(p, b0.evaluate(p)).unwrap_or_default()
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Angle `r^{α-1} t` swept by a particle at radius `r`.
    pub fn shift_angle(&self, t: f64, r: f64) -> f64 {
        r.powf(self.alpha - 1.0) * t
    }

    fn check_domain(q: CylPoint) -> Result<()> {
        if q.r > 0.0 && q.r < 1.0 {
            Ok(())
        } else {
            Err(Error::OutOfDomain { r: q.r })
        }
    }

    /// The formulas without domain or sign checks on `t` (finite differences
    /// need to step slightly before `t = 0`).
    fn evaluate(&self, t: f64, q: CylPoint) -> CylVec {
        let foot = CylPoint::new(q.r, q.theta - self.shift_angle(t, q.r), q.z);
        let b = (self.b0)(foot);
        let growth = (1.0 - self.alpha) * q.r.powf(self.alpha - 1.0) * t;
        CylVec::new(b.r_comp, b.theta_comp - growth * b.r_comp, b.z_comp)
    }

    /// `B(t, q)` in cylindrical components.
    pub fn field(&self, t: f64, q: CylPoint) -> Result<CylVec> {
        Self::check_domain(q)?;
        if t < 0.0 {
            return Err(Error::InvalidParameter(format!("t must be >= 0, got {t}")));
        }
        Ok(self.evaluate(t, q))
    }

    /// `B(t, p)` in Cartesian components.
    pub fn field_cartesian(&self, t: f64, p: Vec3) -> Result<Vec3> {
        let q = to_cylindrical(p);
        let c = self.field(t, q)?;
        vector_from_cylindrical(q, c)
    }

    /// The stretching source `(1 - α) B_r r^{α-1}` of the `B_θ` equation.
    pub fn stretching_source(&self, t: f64, q: CylPoint) -> Result<f64> {
        let b = self.field(t, q)?;
        Ok((1.0 - self.alpha) * b.r_comp * q.r.powf(self.alpha - 1.0))
    }

    /// Central-difference residual of
    ///
    /// ```text
    /// ∂_t B_r + r^{α-1} ∂_θ B_r                           = 0
    /// ∂_t B_θ + r^{α-1} ∂_θ B_θ + (1 - α) B_r r^{α-1}     = 0
    /// ∂_t B_z + r^{α-1} ∂_θ B_z                           = 0
    /// ```
    ///
    /// evaluated on the closed form. Second order in both steps.
    pub fn transport_residual(&self, t: f64, q: CylPoint, h_t: f64, h_theta: f64) -> Result<CylVec> {
        Self::check_domain(q)?;
        if !(h_t > 0.0 && h_theta > 0.0) {
            return Err(Error::InvalidParameter("finite-difference steps must be positive".into()));
        }
        let at = |tt: f64, th: f64| self.evaluate(tt, CylPoint::new(q.r, th, q.z));
        let (tp, tm) = (at(t + h_t, q.theta), at(t - h_t, q.theta));
        let (ap, am) = (at(t, q.theta + h_theta), at(t, q.theta - h_theta));
        let speed = q.r.powf(self.alpha - 1.0);
        let d = |p: f64, m: f64, h: f64| (p - m) / (2.0 * h);
        let centre = self.evaluate(t, q);
        Ok(CylVec::new(
            d(tp.r_comp, tm.r_comp, h_t) + speed * d(ap.r_comp, am.r_comp, h_theta),
            d(tp.theta_comp, tm.theta_comp, h_t)
                + speed * d(ap.theta_comp, am.theta_comp, h_theta)
                + (1.0 - self.alpha) * centre.r_comp * speed,
            d(tp.z_comp, tm.z_comp, h_t) + speed * d(ap.z_comp, am.z_comp, h_theta),
        ))
    }
}

impl std::fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExactSolution").field("alpha", &self.alpha).finish()
    }
}

/// `B(t, q)` for a Cartesian initial field; convenience over [`ExactSolution`].
pub fn exact_b(alpha: f64, b0: &InitialField, t: f64, q: CylPoint) -> Result<CylVec> {
    ExactSolution::from_initial_field(alpha, b0)?.field(t, q)
}

/// Guaranteed growth magnitude `(1 - α) r^{α-1} t · sup|B_r⁰|` of the angular
/// component at radius `r`.
pub fn blowup_envelope(alpha: f64, t: f64, r: f64, br0_inf: f64) -> f64 {
    (1.0 - alpha) * r.powf(alpha - 1.0) * t * br0_inf
}
