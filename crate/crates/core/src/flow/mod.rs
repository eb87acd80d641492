//! Lagrangian flow `Φ_t(x)` of `dX = v(t, X) dt + σ dW`, its inverse, and its
//! Jacobian.
//!
//! `σ = 0` runs use RK4 and `σ ≠ 0` runs use Euler–Maruyama (see [`Scheme`]).
//! All routines read increments from a shared [`BrownianPath`], so a forward
//! flow, its inverse and every finite-difference perturbation see the same
//! noise realization.

mod brownian;
pub(crate) mod step;

pub use brownian::{sample_brownian, BrownianPath};
pub use step::Scheme;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::VelocityField;
use crate::geometry::{Mat3, Vec3};
use step::Stepper;

/// How `DΦ` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum JacobianMethod {
    /// Co-integrate the variational equation on the flow's own time grid.
    Variational,
    /// Central differences over six perturbed flows `x ± h e_i` driven by
    /// the same Brownian path.
    FiniteDifference { h: f64 },
}

impl JacobianMethod {
    pub const DEFAULT_FD_STEP: f64 = 1e-5;

    pub fn finite_difference() -> Self {
        JacobianMethod::FiniteDifference {
            h: Self::DEFAULT_FD_STEP,
        }
    }
}

impl Default for JacobianMethod {
    fn default() -> Self {
        Self::finite_difference()
    }
}

/// One realization of `t ↦ Φ_t(x₀)` on the path grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub trajectory: Vec<Vec3>,
    /// `DΦ_{t_n}(x₀)` for every grid time, when requested.
    pub jacobians: Option<Vec<Mat3>>,
    pub sigma: f64,
    pub scheme: Scheme,
    pub dt: f64,
}

impl FlowSample {
    pub fn start(&self) -> Vec3 {
        self.trajectory[0]
    }

    pub fn end(&self) -> Vec3 {
        *self.trajectory.last().expect("trajectory is never empty")
    }

    pub fn n_steps(&self) -> usize {
        self.trajectory.len() - 1
    }

    fn index(&self, t: f64) -> Result<usize> {
        let k = t / self.dt;
        let rounded = k.round();
        let horizon = self.dt * self.n_steps() as f64;
        if !(t >= 0.0) || (k - rounded).abs() > 1e-9 * rounded.max(1.0) || rounded as usize > self.n_steps() {
            return Err(Error::OffGrid { t, dt: self.dt, horizon });
        }
        Ok(rounded as usize)
    }

    pub fn position_at(&self, t: f64) -> Result<Vec3> {
        Ok(self.trajectory[self.index(t)?])
    }

    pub fn jacobian_at(&self, t: f64) -> Result<Mat3> {
        let idx = self.index(t)?;
        let jacs = self.jacobians.as_ref().ok_or(Error::MissingJacobian)?;
        Ok(jacs[idx])
    }

    /// `max_n |det DΦ_{t_n} - 1|`.
    pub fn max_det_deviation(&self) -> Result<f64> {
        let jacs = self.jacobians.as_ref().ok_or(Error::MissingJacobian)?;
        Ok(jacs.iter().map(|j| (j.det() - 1.0).abs()).fold(0.0, f64::max))
    }
}

#[inline]
fn kick(path: &BrownianPath, sigma: f64, n: usize) -> Vec3 {
    if sigma == 0.0 {
        Vec3::ZERO
    } else {
        path.increment(n) * sigma
    }
}

#[inline]
fn check_finite(x: Vec3, step: usize, dt: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            t: step as f64 * dt,
        })
    }
}

fn check_start(x0: Vec3) -> Result<()> {
    if x0.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("non-finite start point {x0:?}")))
    }
}

/// Integrate `Φ_t(x₀)` over the whole path.
///
/// `σ ≠ 0`: `X_{n+1} = X_n + v(t_n, X_n) dt + σ ΔW_n`. `σ = 0`: RK4 on the ODE.
pub fn integrate_flow(field: &dyn VelocityField, x0: Vec3, path: &BrownianPath, sigma: f64) -> Result<FlowSample> {
    check_start(x0)?;
    let stepper = Stepper::new(field, sigma);
    let dt = path.dt();
    let mut trajectory = Vec::with_capacity(path.n_steps() + 1);
    let mut x = x0;
    trajectory.push(x);
    for n in 0..path.n_steps() {
        x = stepper.step(n as f64 * dt, x, dt, kick(path, sigma, n));
        check_finite(x, n + 1, dt)?;
        trajectory.push(x);
    }
    Ok(FlowSample {
        trajectory,
        jacobians: None,
        sigma,
        scheme: stepper.scheme,
        dt,
    })
}

/// `Φ_{t_k}(x₀)` for `k = n_steps`, without storing the trajectory.
pub fn flow_map(field: &dyn VelocityField, x0: Vec3, path: &BrownianPath, sigma: f64, n_steps: usize) -> Result<Vec3> {
    check_start(x0)?;
    let stepper = Stepper::new(field, sigma);
    let dt = path.dt();
    let mut x = x0;
    for n in 0..n_steps.min(path.n_steps()) {
        x = stepper.step(n as f64 * dt, x, dt, kick(path, sigma, n));
        check_finite(x, n + 1, dt)?;
    }
    Ok(x)
}

/// Positions at the given (ascending) grid indices.
pub fn flow_snapshots(
    field: &dyn VelocityField,
    x0: Vec3,
    path: &BrownianPath,
    sigma: f64,
    indices: &[usize],
) -> Result<Vec<Vec3>> {
    check_start(x0)?;
    let stepper = Stepper::new(field, sigma);
    let dt = path.dt();
    let mut out = Vec::with_capacity(indices.len());
    let mut x = x0;
    let mut n = 0;
    for &k in indices {
        if k > path.n_steps() {
            return Err(Error::OffGrid {
                t: k as f64 * dt,
                dt,
                horizon: path.horizon(),
            });
        }
        while n < k {
            x = stepper.step(n as f64 * dt, x, dt, kick(path, sigma, n));
            n += 1;
            check_finite(x, n, dt)?;
        }
        out.push(x);
    }
    Ok(out)
}

/// Flow together with its full Jacobian history.
pub fn integrate_flow_with_jacobian(
    field: &dyn VelocityField,
    x0: Vec3,
    path: &BrownianPath,
    sigma: f64,
    method: JacobianMethod,
) -> Result<FlowSample> {
    match method {
        JacobianMethod::Variational => {
            check_start(x0)?;
            let stepper = Stepper::new(field, sigma);
            let dt = path.dt();
            let n_steps = path.n_steps();
            let mut trajectory = Vec::with_capacity(n_steps + 1);
            let mut jacobians = Vec::with_capacity(n_steps + 1);
            let (mut x, mut jac) = (x0, Mat3::IDENTITY);
            trajectory.push(x);
            jacobians.push(jac);
            for n in 0..n_steps {
                (x, jac) = stepper.step_with_jacobian(n as f64 * dt, x, jac, dt, kick(path, sigma, n))?;
                if !(x.is_finite() && jac.is_finite()) {
                    return Err(Error::NonFinite {
                        step: n + 1,
                        t: (n + 1) as f64 * dt,
                    });
                }
                trajectory.push(x);
                jacobians.push(jac);
            }
            Ok(FlowSample {
                trajectory,
                jacobians: Some(jacobians),
                sigma,
                scheme: stepper.scheme,
                dt,
            })
        }
        JacobianMethod::FiniteDifference { h } => {
            check_fd_step(h)?;
            let mut centre = integrate_flow(field, x0, path, sigma)?;
            let mut columns = Vec::with_capacity(3);
            for j in 0..3 {
                let e = Vec3::basis(j) * h;
                let plus = integrate_flow(field, x0 + e, path, sigma)?;
                let minus = integrate_flow(field, x0 - e, path, sigma)?;
                let col: Vec<Vec3> = plus
                    .trajectory
                    .iter()
                    .zip(&minus.trajectory)
                    .map(|(p, m)| (*p - *m) / (2.0 * h))
                    .collect();
                columns.push(col);
            }
            let jacobians = (0..centre.trajectory.len())
                .map(|n| Mat3::from_cols(columns[0][n], columns[1][n], columns[2][n]))
                .collect();
            centre.jacobians = Some(jacobians);
            Ok(centre)
        }
    }
}

/// `DΦ_{t_n}(x₀)` for every grid time.
pub fn flow_jacobian(
    field: &dyn VelocityField,
    x0: Vec3,
    path: &BrownianPath,
    sigma: f64,
    method: JacobianMethod,
) -> Result<Vec<Mat3>> {
    integrate_flow_with_jacobian(field, x0, path, sigma, method)?
        .jacobians
        .ok_or(Error::MissingJacobian)
}

/// Integrate `d/dt (DΦ_t)⁻¹ = -(DΦ_t)⁻¹ Dv(t, Φ_t)` along a stored flow.
pub fn inverse_jacobian_evolve(field: &dyn VelocityField, flow: &FlowSample) -> Result<Vec<Mat3>> {
    let stepper = Stepper {
        field,
        scheme: flow.scheme,
    };
    let dt = flow.dt;
    let mut m = Mat3::IDENTITY;
    let mut out = Vec::with_capacity(flow.trajectory.len());
    out.push(m);
    for (n, &x) in flow.trajectory[..flow.n_steps()].iter().enumerate() {
        m = stepper.inverse_jacobian_step(n as f64 * dt, x, m, dt)?;
        if !m.is_finite() {
            return Err(Error::NonFinite {
                step: n + 1,
                t: (n + 1) as f64 * dt,
            });
        }
        out.push(m);
    }
    Ok(out)
}

fn check_fd_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("finite-difference step must be positive, got {h}")))
    }
}

/// Controls for [`integrate_inverse_flow`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseOptions {
    /// Re-run the forward flow from the result and check the round trip.
    pub verify: bool,
    pub tolerance: f64,
    /// Newton iterations polishing `x` so that `Φ_t(x) = y` for the discrete
    /// forward map.
    pub newton_steps: usize,
    pub fd_step: f64,
}

impl Default for InverseOptions {
    fn default() -> Self {
        Self {
            verify: false,
            tolerance: 1e-3,
            newton_steps: 0,
            fd_step: JacobianMethod::DEFAULT_FD_STEP,
        }
    }
}

/// Time-reversed integration from `y` at time `t` back to time 0.
///
/// Steps run over the stored increments in reverse order with negated drift
/// and noise: RK4 with step `-dt` when `σ = 0`, and
/// `Y_n = Y_{n+1} - v(t_{n+1}, Y_{n+1}) dt - σ ΔW_n` otherwise.
pub fn backward_map(field: &dyn VelocityField, y: Vec3, path: &BrownianPath, sigma: f64, k: usize) -> Result<Vec3> {
    check_start(y)?;
    let stepper = Stepper::new(field, sigma);
    let dt = path.dt();
    let mut x = y;
    for n in (0..k).rev() {
        x = stepper.step((n + 1) as f64 * dt, x, -dt, -kick(path, sigma, n));
        check_finite(x, n, dt)?;
    }
    Ok(x)
}

/// Backward map from `y` at grid index `k`, with the Jacobian of `y ↦ Φ_t⁻¹(y)`.
pub fn backward_map_with_jacobian(
    field: &dyn VelocityField,
    y: Vec3,
    path: &BrownianPath,
    sigma: f64,
    k: usize,
    method: JacobianMethod,
) -> Result<(Vec3, Mat3)> {
    match method {
        JacobianMethod::Variational => {
            check_start(y)?;
            let stepper = Stepper::new(field, sigma);
            let dt = path.dt();
            let (mut x, mut jac) = (y, Mat3::IDENTITY);
            for n in (0..k).rev() {
                (x, jac) = stepper.step_with_jacobian((n + 1) as f64 * dt, x, jac, -dt, -kick(path, sigma, n))?;
                if !(x.is_finite() && jac.is_finite()) {
                    return Err(Error::NonFinite {
                        step: n,
                        t: n as f64 * dt,
                    });
                }
            }
            Ok((x, jac))
        }
        JacobianMethod::FiniteDifference { h } => {
            check_fd_step(h)?;
            let x = backward_map(field, y, path, sigma, k)?;
            let mut cols = [Vec3::ZERO; 3];
            for (j, col) in cols.iter_mut().enumerate() {
                let e = Vec3::basis(j) * h;
                let plus = backward_map(field, y + e, path, sigma, k)?;
                let minus = backward_map(field, y - e, path, sigma, k)?;
                *col = (plus - minus) / (2.0 * h);
            }
            Ok((x, Mat3::from_cols(cols[0], cols[1], cols[2])))
        }
    }
}

/// `Φ_t⁻¹(y)`.
pub fn integrate_inverse_flow(
    field: &dyn VelocityField,
    y: Vec3,
    path: &BrownianPath,
    sigma: f64,
    t: f64,
    opts: &InverseOptions,
) -> Result<Vec3> {
    let k = path.step_index(t)?;
    let mut x = backward_map(field, y, path, sigma, k)?;
    for _ in 0..opts.newton_steps {
        let sample = integrate_flow_with_jacobian_to(field, x, path, sigma, k, opts.fd_step)?;
        let (fx, jac) = sample;
        let inv = jac.inverse().ok_or(Error::NonFinite { step: k, t })?;
        x -= inv * (fx - y);
    }
    if opts.verify {
        let residual = (flow_map(field, x, path, sigma, k)? - y).norm();
        if !(residual <= opts.tolerance) {
            return Err(Error::InverseVerificationFailed {
                residual,
                tolerance: opts.tolerance,
            });
        }
    }
    Ok(x)
}

/// Endpoint and finite-difference Jacobian of the forward map after `k` steps.
fn integrate_flow_with_jacobian_to(
    field: &dyn VelocityField,
    x0: Vec3,
    path: &BrownianPath,
    sigma: f64,
    k: usize,
    h: f64,
) -> Result<(Vec3, Mat3)> {
    let fx = flow_map(field, x0, path, sigma, k)?;
    let mut cols = [Vec3::ZERO; 3];
    for (j, col) in cols.iter_mut().enumerate() {
        let e = Vec3::basis(j) * h;
        *col = (flow_map(field, x0 + e, path, sigma, k)? - flow_map(field, x0 - e, path, sigma, k)?) / (2.0 * h);
    }
    Ok((fx, Mat3::from_cols(cols[0], cols[1], cols[2])))
}

/// Round-trip residual `|Φ_t(Φ_t⁻¹(y)) - y|` of the backward integration.
pub fn inverse_round_trip(field: &dyn VelocityField, y: Vec3, path: &BrownianPath, sigma: f64, t: f64) -> Result<f64> {
    let k = path.step_index(t)?;
    let x = backward_map(field, y, path, sigma, k)?;
    Ok((flow_map(field, x, path, sigma, k)? - y).norm())
}

#[cfg(test)]
mod tests;
