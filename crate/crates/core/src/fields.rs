//! Velocity fields and initial passive fields.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

/// Divergence-free drift `v(t, x)`.
pub trait VelocityField: Send + Sync {
    fn velocity(&self, t: f64, p: Vec3) -> Vec3;

    /// Spatial Jacobian, row-major (`∂v_i/∂x_j`).
    fn jacobian(&self, t: f64, p: Vec3) -> Result<Mat3>;

    /// Hölder exponent of the field (1 for Lipschitz fields).
    fn holder_exponent(&self) -> f64;

    /// Upper bound on `|v|` over space and time.
    fn bound(&self) -> f64;

    /// Radius below which [`VelocityField::jacobian`] refuses to evaluate.
    fn axis_floor(&self) -> f64 {
        0.0
    }

    fn label(&self) -> String;
}

/// `v ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroField;

impl VelocityField for ZeroField {
    fn velocity(&self, _t: f64, _p: Vec3) -> Vec3 {
        Vec3::ZERO
    }

    fn jacobian(&self, _t: f64, _p: Vec3) -> Result<Mat3> {
        Ok(Mat3::ZERO)
    }

    fn holder_exponent(&self) -> f64 {
        1.0
    }

    fn bound(&self) -> f64 {
        0.0
    }

    fn label(&self) -> String {
        "zero".into()
    }
}

/// Swirl about the z-axis, `v = v_θ(r) e_θ`, with
///
/// ```text
/// v_θ(r) = r^α                     r ≤ 1
/// v_θ(r) = r^α exp(-γ (r - 1)^3)   r > 1
/// ```
///
/// The cubic in the exponent leaves value, slope and curvature unchanged at
/// `r = 1`, so the profile is C² there and decays faster than any exponential.
/// For `α < 1` the angular speed `r^{α-1}` is unbounded at the axis while the
/// velocity itself stays α-Hölder.
#[derive(Debug, Clone, Copy)]
pub struct HolderRotationField {
    alpha: f64,
    gamma: f64,
    r_floor: f64,
    bound: f64,
}

impl HolderRotationField {
    /// Smallest round value for which `sup |v| <= 1.2` holds for every α; at
    /// `γ = 1` the α = 1 profile peaks near 1.32.
    pub const DEFAULT_GAMMA: f64 = 4.0;

    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1], got {alpha}"
            )));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        let r_floor = if alpha == 1.0 { 1e-12 } else { 1e-6 };
        let mut field = Self {
            alpha,
            gamma,
            r_floor,
            bound: 0.0,
        };
        field.bound = field.profile_max();
        Ok(field)
    }

    pub fn with_r_floor(mut self, r_floor: f64) -> Self {
        self.r_floor = r_floor;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `v_θ(r)`.
    pub fn profile(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let core = r.powf(self.alpha);
        if r <= 1.0 {
            core
        } else {
            let u = r - 1.0;
            core * (-self.gamma * u * u * u).exp()
        }
    }

    /// `v_θ'(r)` for `r > 0`.
    pub fn profile_derivative(&self, r: f64) -> f64 {
        let a = self.alpha;
        let d_core = a * r.powf(a - 1.0);
        if r <= 1.0 {
            return d_core;
        }
        let u = r - 1.0;
        let e = (-self.gamma * u * u * u).exp();
        let de = -3.0 * self.gamma * u * u * e;
        d_core * e + r.powf(a) * de
    }

    /// `v_θ''(r)` for `r > 0`.
    pub fn profile_second_derivative(&self, r: f64) -> f64 {
        let a = self.alpha;
        let dd_core = a * (a - 1.0) * r.powf(a - 2.0);
        if r <= 1.0 {
            return dd_core;
        }
        let g = self.gamma;
        let u = r - 1.0;
        let e = (-g * u * u * u).exp();
        let de = -3.0 * g * u * u * e;
        let dde = (9.0 * g * g * u.powi(4) - 6.0 * g * u) * e;
        dd_core * e + 2.0 * a * r.powf(a - 1.0) * de + r.powf(a) * dde
    }

    /// Angular speed `ω(r) = v_θ(r) / r`.
    pub fn angular_speed(&self, r: f64) -> f64 {
        if r <= 1.0 {
            r.powf(self.alpha - 1.0)
        } else {
            self.profile(r) / r
        }
    }

    /// `ω'(r) / r`, the coefficient of the shear part of the Jacobian.
    fn shear_coefficient(&self, r: f64) -> f64 {
        let a = self.alpha;
        if r <= 1.0 {
            (a - 1.0) * r.powf(a - 3.0)
        } else {
            let omega_prime = (self.profile_derivative(r) * r - self.profile(r)) / (r * r);
            omega_prime / r
        }
    }

    fn profile_max(&self) -> f64 {
        // v_θ ≤ 1 on [0, 1]; beyond, the maximum sits close to r = 1.
        let tail = 1.0 + 4.0 / self.gamma.cbrt();
        let n = 20_000;
        let step = (tail - 1.0) / n as f64;
        let best_k = (0..=n)
            .max_by(|&a, &b| self.profile(1.0 + step * a as f64).total_cmp(&self.profile(1.0 + step * b as f64)))
            .unwrap_or(0);
        // The profile is unimodal on [1, tail]; polish the scan maximum.
        let (mut lo, mut hi) = (1.0 + step * (best_k.max(1) - 1) as f64, 1.0 + step * (best_k + 1) as f64);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if self.profile(m1) < self.profile(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        self.profile(0.5 * (lo + hi)).max(1.0) * (1.0 + 1e-12)
    }
}

impl VelocityField for HolderRotationField {
    #[inline]
    fn velocity(&self, _t: f64, p: Vec3) -> Vec3 {
        let r = p.radius();
        if r == 0.0 {
            return Vec3::ZERO;
        }
        let w = self.angular_speed(r);
        Vec3::new(-w * p.y, w * p.x, 0.0)
    }

    fn jacobian(&self, _t: f64, p: Vec3) -> Result<Mat3> {
        let r = p.radius();
        if r < self.r_floor {
            return Err(Error::NearAxis {
                r,
                floor: self.r_floor,
            });
        }
        // v = ω(r) (-y, x, 0); ∂ω/∂x_j = ω'(r) x_j / r
        let w = self.angular_speed(r);
        let g = if self.alpha == 1.0 && r <= 1.0 {
            0.0
        } else {
            self.shear_coefficient(r)
        };
        let (x, y) = (p.x, p.y);
        Ok(Mat3::new([
            [-g * x * y, -w - g * y * y, 0.0],
            [w + g * x * x, g * x * y, 0.0],
            [0.0, 0.0, 0.0],
        ]))
    }

    fn holder_exponent(&self) -> f64 {
        self.alpha
    }

    fn bound(&self) -> f64 {
        self.bound
    }

    fn axis_floor(&self) -> f64 {
        self.r_floor
    }

    fn label(&self) -> String {
        format!("holder(alpha={}, gamma={})", self.alpha, self.gamma)
    }
}

/// Build the Hölder rotation field; shorthand for [`HolderRotationField::new`].
pub fn holder_velocity(alpha: f64, gamma: f64) -> Result<HolderRotationField> {
    HolderRotationField::new(alpha, gamma)
}

type FieldFn = dyn Fn(Vec3) -> Vec3 + Send + Sync;

/// Initial passive field `B₀`.
#[derive(Clone)]
pub struct InitialField {
    name: String,
    f: Arc<FieldFn>,
}

impl InitialField {
    pub const PRESETS: [&'static str; 3] = ["constant_ex", "constant_ez", "solid_rotor"];

    /// `constant_ex`: `B₀ ≡ e₁`; `constant_ez`: `B₀ ≡ e₃`;
    /// `solid_rotor`: `B₀ = (x, y, -2z)`.
    pub fn preset(name: &str) -> Result<Self> {
        let f: Arc<FieldFn> = match name {
            "constant_ex" => Arc::new(|_| Vec3::E1),
            "constant_ez" => Arc::new(|_| Vec3::E3),
            "solid_rotor" => Arc::new(|p: Vec3| Vec3::new(p.x, p.y, -2.0 * p.z)),
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        Ok(Self {
            name: name.to_string(),
            f,
        })
    }

    pub fn custom(name: impl Into<String>, f: impl Fn(Vec3) -> Vec3 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    /// `a·F + b·G`.
    pub fn linear_combination(a: f64, f: &InitialField, b: f64, g: &InitialField) -> Self {
        let (f, g) = (f.clone(), g.clone());
        let name = format!("{a}*{}+{b}*{}", f.name, g.name);
        Self::custom(name, move |p| f.evaluate(p) * a + g.evaluate(p) * b)
    }

    #[inline]
    pub fn evaluate(&self, p: Vec3) -> Vec3 {
        (self.f)(p)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Debug for InitialField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialField").field("name", &self.name).finish()
    }
}

pub fn preset_initial_field(name: &str) -> Result<InitialField> {
    InitialField::preset(name)
}
