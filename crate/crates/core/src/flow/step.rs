//! One-step maps and their exact derivatives.
//!
//! Both schemes are written for a signed step `h`; backward integration is the
//! same map with `h = -dt` and the noise kick negated.

use crate::error::Result;
use crate::fields::VelocityField;
use crate::geometry::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Classical fourth-order Runge–Kutta; used when `σ = 0`.
    Rk4,
    /// Euler–Maruyama; strong order 1 for additive noise.
    EulerMaruyama,
}

impl Scheme {
    pub fn for_sigma(sigma: f64) -> Self {
        if sigma == 0.0 {
            Scheme::Rk4
        } else {
            Scheme::EulerMaruyama
        }
    }
}

#[derive(Clone, Copy)]
pub(crate) struct Stepper<'a> {
    pub field: &'a dyn VelocityField,
    pub scheme: Scheme,
}

impl<'a> Stepper<'a> {
    pub fn new(field: &'a dyn VelocityField, sigma: f64) -> Self {
        Self {
            field,
            scheme: Scheme::for_sigma(sigma),
        }
    }

    /// Advance `x` from time `t` by `h`, adding `kick` (already scaled by σ).
    #[inline]
    pub fn step(&self, t: f64, x: Vec3, h: f64, kick: Vec3) -> Vec3 {
        let v = self.field;
        match self.scheme {
            Scheme::EulerMaruyama => x + v.velocity(t, x) * h + kick,
            Scheme::Rk4 => {
                let half = 0.5 * h;
                let k1 = v.velocity(t, x);
                let k2 = v.velocity(t + half, x + k1 * half);
                let k3 = v.velocity(t + half, x + k2 * half);
                let k4 = v.velocity(t + h, x + k3 * h);
                x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0) + kick
            }
        }
    }

    /// As [`Stepper::step`], also pushing `jac` through the derivative of the
    /// step map (the variational equation `dZ = Dv Z dt`, discretised exactly
    /// as the step itself).
    #[inline]
    pub fn step_with_jacobian(&self, t: f64, x: Vec3, jac: Mat3, h: f64, kick: Vec3) -> Result<(Vec3, Mat3)> {
        let v = self.field;
        match self.scheme {
            Scheme::EulerMaruyama => {
                let a = v.jacobian(t, x)?;
                Ok((x + v.velocity(t, x) * h + kick, jac + (a * jac) * h))
            }
            Scheme::Rk4 => {
                let half = 0.5 * h;
                let k1 = v.velocity(t, x);
                let g1 = v.jacobian(t, x)? * jac;
                let x2 = x + k1 * half;
                let k2 = v.velocity(t + half, x2);
                let g2 = v.jacobian(t + half, x2)? * (jac + g1 * half);
                let x3 = x + k2 * half;
                let k3 = v.velocity(t + half, x3);
                let g3 = v.jacobian(t + half, x3)? * (jac + g2 * half);
                let x4 = x + k3 * h;
                let k4 = v.velocity(t + h, x4);
                let g4 = v.jacobian(t + h, x4)? * (jac + g3 * h);
                Ok((
                    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0) + kick,
                    jac + (g1 + (g2 + g3) * 2.0 + g4) * (h / 6.0),
                ))
            }
        }
    }

    /// As [`Stepper::step_with_jacobian`] for a single tangent vector `z`.
    #[inline]
    pub fn step_with_tangent(&self, t: f64, x: Vec3, z: Vec3, h: f64, kick: Vec3) -> Result<(Vec3, Vec3)> {
        let v = self.field;
        match self.scheme {
            Scheme::EulerMaruyama => {
                let a = v.jacobian(t, x)?;
                Ok((x + v.velocity(t, x) * h + kick, z + (a * z) * h))
            }
            Scheme::Rk4 => {
                let half = 0.5 * h;
                let k1 = v.velocity(t, x);
                let g1 = v.jacobian(t, x)? * z;
                let x2 = x + k1 * half;
                let k2 = v.velocity(t + half, x2);
                let g2 = v.jacobian(t + half, x2)? * (z + g1 * half);
                let x3 = x + k2 * half;
                let k3 = v.velocity(t + half, x3);
                let g3 = v.jacobian(t + half, x3)? * (z + g2 * half);
                let x4 = x + k3 * h;
                let k4 = v.velocity(t + h, x4);
                let g4 = v.jacobian(t + h, x4)? * (z + g3 * h);
                Ok((
                    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0) + kick,
                    z + (g1 + (g2 + g3) * 2.0 + g4) * (h / 6.0),
                ))
            }
        }
    }

    /// Advance `m` under `dM/dt = -M Dv(t, x(t))` across the step that takes
    /// `x` from `t` to `t + h`.
    ///
    /// RK4 co-integrates with the same stage positions as the flow. The
    /// Euler–Maruyama update is `M (I + Dv h)⁻¹`, the exact inverse of the
    /// forward Jacobian step, so `M · DΦ = I` holds to round-off.
    pub fn inverse_jacobian_step(&self, t: f64, x: Vec3, m: Mat3, h: f64) -> Result<Mat3> {
        let v = self.field;
        match self.scheme {
            Scheme::EulerMaruyama => {
                let step = Mat3::IDENTITY + v.jacobian(t, x)? * h;
                let inv = step.adjugate() * (1.0 / step.det());
                Ok(m * inv)
            }
            Scheme::Rk4 => {
                let half = 0.5 * h;
                let k1 = v.velocity(t, x);
                let x2 = x + k1 * half;
                let k2 = v.velocity(t + half, x2);
                let x3 = x + k2 * half;
                let k3 = v.velocity(t + half, x3);
                let x4 = x + k3 * h;
                let g1 = -(m * v.jacobian(t, x)?);
                let g2 = -((m + g1 * half) * v.jacobian(t + half, x2)?);
                let g3 = -((m + g2 * half) * v.jacobian(t + half, x3)?);
                let g4 = -((m + g3 * h) * v.jacobian(t + h, x4)?);
                Ok(m + (g1 + (g2 + g3) * 2.0 + g4) * (h / 6.0))
            }
        }
    }
}
