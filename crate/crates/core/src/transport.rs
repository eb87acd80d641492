//! Reconstruction of `B(t, ·)` from the flow: pushforward along a stored
//! trajectory, or pullback through the inverse flow with the adjugate of its
//! Jacobian.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ExactSolution;
use crate::fields::{InitialField, VelocityField};
use crate::flow::{backward_map_with_jacobian, integrate_inverse_flow, BrownianPath, FlowSample, InverseOptions, JacobianMethod};
use crate::geometry::{adjugate, CylPoint, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Pushforward,
    Pullback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub t: f64,
    pub x: Vec3,
    pub b: Vec3,
    pub provenance: Provenance,
    /// `|det J - 1|` of the Jacobian used; a quality metric, not an error.
    pub det_residual: f64,
}

/// `(Φ_t(x₀), DΦ_t(x₀) B₀(x₀))`.
pub fn pushforward(b0: &InitialField, flow: &FlowSample, t: f64) -> Result<FieldSample> {
    let jac = flow.jacobian_at(t)?;
    Ok(FieldSample {
        t,
        x: flow.position_at(t)?,
        b: jac * b0.evaluate(flow.start()),
        provenance: Provenance::Pushforward,
        det_residual: (jac.det() - 1.0).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PullbackOptions {
    pub method: JacobianMethod,
    pub inverse: InverseOptions,
}

impl PullbackOptions {
    pub fn variational() -> Self {
        Self {
            method: JacobianMethod::Variational,
            ..Self::default()
        }
    }

    /// Radius below which evaluation is refused.
    fn floor(&self, field: &dyn VelocityField) -> f64 {
        let floor = field.axis_floor();
        match self.method {
            // A centred stencil straddling the axis differentiates across the
            // singular shear and returns garbage.
            JacobianMethod::FiniteDifference { h } if floor > 0.0 => floor.max(10.0 * h),
            _ => floor,
        }
    }
}

/// `B(t, x) = adj(DΦ_t⁻¹(x)) B₀(Φ_t⁻¹(x))`.
pub fn pullback_at(
    b0: &InitialField,
    field: &dyn VelocityField,
    path: &BrownianPath,
    sigma: f64,
    t: f64,
    x: Vec3,
    opts: &PullbackOptions,
) -> Result<FieldSample> {
    let k = path.step_index(t)?;
    let floor = opts.floor(field);
    let r = x.radius();
    if r < floor {
        return Err(Error::NearAxis { r, floor });
    }
    let (mut y, jac_inv) = backward_map_with_jacobian(field, x, path, sigma, k, opts.method)?;
    if opts.inverse.verify || opts.inverse.newton_steps > 0 {
        y = integrate_inverse_flow(field, x, path, sigma, t, &opts.inverse)?;
    }
    let b = adjugate(&jac_inv) * b0.evaluate(y);
    if !b.is_finite() {
        return Err(Error::NonFinite { step: k, t });
    }
    Ok(FieldSample {
        t,
        x,
        b,
        provenance: Provenance::Pullback,
        det_residual: (jac_inv.det() - 1.0).abs(),
    })
}

/// Evaluation points for [`reconstruct_grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GridSpec {
    Points { points: Vec<Vec3> },
    /// `n_r × n_theta` points at height `z`; `r` log-spaced when `log_r`.
    Annulus {
        r_min: f64,
        r_max: f64,
        n_r: usize,
        n_theta: usize,
        z: f64,
        log_r: bool,
    },
    /// Regular lattice with `n[i]` nodes along axis `i`, corners included.
    Box { min: Vec3, max: Vec3, n: [usize; 3] },
}

/// `n` radii from `lo` to `hi`, endpoints included.
pub(crate) fn radii(lo: f64, hi: f64, n: usize, log: bool) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            if log {
                (lo.ln() + s * (hi.ln() - lo.ln())).exp()
            } else {
                lo + s * (hi - lo)
            }
        })
        .collect()
}

impl GridSpec {
    pub fn annulus(r_min: f64, r_max: f64, n_r: usize, n_theta: usize) -> Self {
        GridSpec::Annulus {
            r_min,
            r_max,
            n_r,
            n_theta,
            z: 0.0,
            log_r: false,
        }
    }

    pub fn points(&self) -> Result<Vec<Vec3>> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        match self {
            GridSpec::Points { points } => {
                if points.is_empty() {
                    return bad("grid has no points");
                }
                Ok(points.clone())
            }
            &GridSpec::Annulus {
                r_min,
                r_max,
                n_r,
                n_theta,
                z,
                log_r,
            } => {
                if n_r == 0 || n_theta == 0 {
                    return bad("annulus needs n_r, n_theta >= 1");
                }
                if !(r_min >= 0.0 && r_max >= r_min) || (log_r && r_min <= 0.0) {
                    return bad("annulus needs 0 <= r_min <= r_max (r_min > 0 when log-spaced)");
                }
                let mut out = Vec::with_capacity(n_r * n_theta);
                for r in radii(r_min, r_max, n_r, log_r) {
                    for j in 0..n_theta {
                        let theta = std::f64::consts::TAU * j as f64 / n_theta as f64;
                        out.push(CylPoint::new(r, theta, z).to_cartesian());
                    }
                }
                Ok(out)
            }
            &GridSpec::Box { min, max, n } => {
                if n.contains(&0) {
                    return bad("box needs at least one node per axis");
                }
                let coord = |i: usize, k: usize| {
                    if n[i] == 1 {
                        min[i]
                    } else {
                        min[i] + (max[i] - min[i]) * k as f64 / (n[i] - 1) as f64
                    }
                };
                let mut out = Vec::with_capacity(n[0] * n[1] * n[2]);
                for i in 0..n[0] {
                    for j in 0..n[1] {
                        for k in 0..n[2] {
                            out.push(Vec3::new(coord(0, i), coord(1, j), coord(2, k)));
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedPoint {
    pub index: usize,
    pub x: Vec3,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReconstruction {
    /// One entry per grid point, in grid order; `None` where skipped.
    pub samples: Vec<Option<FieldSample>>,
    pub skipped: Vec<SkippedPoint>,
}

impl GridReconstruction {
    pub fn ok_samples(&self) -> impl Iterator<Item = &FieldSample> {
        self.samples.iter().flatten()
    }
}

/// [`pullback_at`] over every grid point, in parallel. Per-point failures are
/// collected in `skipped` rather than aborting the sweep.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_grid(
    b0: &InitialField,
    field: &dyn VelocityField,
    path: &BrownianPath,
    sigma: f64,
    t: f64,
    grid: &GridSpec,
    opts: &PullbackOptions,
) -> Result<GridReconstruction> {
    path.step_index(t)?;
    let points = grid.points()?;
    let results: Vec<Result<FieldSample>> = points
        .par_iter()
        .map(|&x| pullback_at(b0, field, path, sigma, t, x, opts))
        .collect();
    let mut samples = Vec::with_capacity(points.len());
    let mut skipped = Vec::new();
    for (index, (res, x)) in results.into_iter().zip(points).enumerate() {
        match res {
            Ok(s) => samples.push(Some(s)),
            Err(error) => {
                samples.push(None);
                skipped.push(SkippedPoint { index, x, error });
            }
        }
    }
    Ok(GridReconstruction { samples, skipped })
}

/// Anything that can produce `B(t, x)`.
pub trait Reconstructor: Sync {
    fn field_at(&self, t: f64, x: Vec3) -> Result<Vec3>;
}

impl Reconstructor for ExactSolution {
    fn field_at(&self, t: f64, x: Vec3) -> Result<Vec3> {
        self.field_cartesian(t, x)
    }
}

/// Pullback reconstruction for one noise realization.
#[derive(Clone, Copy)]
pub struct PullbackReconstructor<'a> {
    pub b0: &'a InitialField,
    pub field: &'a dyn VelocityField,
    pub path: &'a BrownianPath,
    pub sigma: f64,
    pub opts: PullbackOptions,
}

impl Reconstructor for PullbackReconstructor<'_> {
    fn field_at(&self, t: f64, x: Vec3) -> Result<Vec3> {
        pullback_at(self.b0, self.field, self.path, self.sigma, t, x, &self.opts).map(|s| s.b)
    }
}

/// `B₀` itself, i.e. the solution at `t = 0` or for `v = 0, σ = 0`.
impl Reconstructor for InitialField {
    fn field_at(&self, _t: f64, x: Vec3) -> Result<Vec3> {
        Ok(self.evaluate(x))
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use crate::fields::{holder_velocity, HolderRotationField, ZeroField};
    use crate::flow::{integrate_flow_with_jacobian, sample_brownian};
    use crate::geometry::Mat3;

    const GAMMA: f64 = HolderRotationField::DEFAULT_GAMMA;

    fn ex() -> InitialField {
        InitialField::preset("constant_ex").unwrap()
    }

    #[test]
    fn pushforward_at_time_zero() {
        let path = sample_brownian(1, 1e-3, 10).unwrap();
        let x0 = Vec3::new(0.3, 0.2, 0.1);
        let rotor = InitialField::preset("solid_rotor").unwrap();
        let flow = integrate_flow_with_jacobian(&ZeroField, x0, &path, 0.1, JacobianMethod::Variational).unwrap();
        let s = pushforward(&rotor, &flow, 0.0).unwrap();
        assert_eq!((s.x, s.b), (x0, rotor.evaluate(x0)));
    }

    #[test]
    fn translation_does_not_stretch() {
        let path = sample_brownian(2, 1e-3, 500).unwrap();
        let x0 = Vec3::new(0.1, 0.0, 0.0);
        let rotor = InitialField::preset("solid_rotor").unwrap();
        let flow = integrate_flow_with_jacobian(&ZeroField, x0, &path, 0.1, JacobianMethod::Variational).unwrap();
        let s = pushforward(&rotor, &flow, 0.5).unwrap();
        assert!((s.x - (x0 + path.value_at(500) * 0.1)).max_abs() < 1e-14);
        assert_eq!(s.b, rotor.evaluate(x0));
    }

    #[test]
    fn pushforward_rotates_with_the_frame() {
        let n = 1571;
        let path = BrownianPath::zero(FRAC_PI_2 / n as f64, n).unwrap();
        let field = holder_velocity(1.0, 1.0).unwrap();
        let flow = integrate_flow_with_jacobian(&field, Vec3::new(0.6, 0.0, 0.0), &path, 0.0, JacobianMethod::Variational)
            .unwrap();
        let s = pushforward(&ex(), &flow, path.horizon()).unwrap();
        assert!((s.b - Vec3::E2).max_abs() <= 1e-6);

        let flow = integrate_flow(&field, &path);
        assert!(matches!(pushforward(&ex(), &flow, 0.0), Err(Error::MissingJacobian)));
    }

    fn integrate_flow(field: &dyn VelocityField, path: &BrownianPath) -> FlowSample {
        crate::flow::integrate_flow(field, Vec3::E1, path, 0.0).unwrap()
    }

    #[test]
    fn pullback_at_time_zero_and_under_pure_noise() {
        let path = sample_brownian(3, 1e-3, 1000).unwrap();
        let rotor = InitialField::preset("solid_rotor").unwrap();
        let x = Vec3::new(0.3, -0.5, 0.2);
        let opts = PullbackOptions::default();
        let s = pullback_at(&rotor, &ZeroField, &path, 1.0, 0.0, x, &opts).unwrap();
        assert!((s.b - rotor.evaluate(x)).max_abs() <= 1e-9);
        let s = pullback_at(&rotor, &ZeroField, &path, 1.0, 0.0, x, &PullbackOptions::variational()).unwrap();
        assert_eq!(s.b, rotor.evaluate(x));
        let s = pullback_at(&rotor, &ZeroField, &path, 1.0, 1.0, x, &opts).unwrap();
        let expected = rotor.evaluate(x - path.value_at(1000));
        assert!((s.b - expected).max_abs() <= 1e-9, "{:?} vs {expected:?}", s.b);
    }

    #[test]
    fn pullback_matches_worked_example() {
        let field = holder_velocity(0.5, GAMMA).unwrap();
        let path = BrownianPath::zero(1e-4, 10_000).unwrap();
        for opts in [PullbackOptions::default(), PullbackOptions::variational()] {
            let s = pullback_at(&ex(), &field, &path, 0.0, 1.0, Vec3::new(0.25, 0.0, 0.0), &opts).unwrap();
            let expected = Vec3::new(-0.41615, 1.32545, 0.0);
            assert!((s.b - expected).max_abs() <= 1e-3, "{:?}", s.b);
            assert!(s.det_residual <= 1e-6);
        }
    }

    #[test]
    fn annulus_sweep_matches_oracle() {
        let field = holder_velocity(0.5, GAMMA).unwrap();
        let path = BrownianPath::zero(1e-4, 10_000).unwrap();
        let grid = GridSpec::annulus(0.2, 0.9, 10, 16);
        let rec = reconstruct_grid(&ex(), &field, &path, 0.0, 1.0, &grid, &PullbackOptions::default()).unwrap();
        assert!(rec.skipped.is_empty());
        let oracle = ExactSolution::from_initial_field(0.5, &ex()).unwrap();
        let worst = rec
            .ok_samples()
            .map(|s| (s.b - oracle.field_at(1.0, s.x).unwrap()).max_abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-3, "{worst}");
    }

    #[test]
    fn single_point_grid_is_pullback() {
        let field = holder_velocity(0.5, GAMMA).unwrap();
        let path = sample_brownian(4, 1e-3, 500).unwrap();
        let x = Vec3::new(0.4, 0.1, 0.0);
        let opts = PullbackOptions::default();
        let grid = GridSpec::Points { points: vec![x] };
        let rec = reconstruct_grid(&ex(), &field, &path, 0.1, 0.5, &grid, &opts).unwrap();
        let direct = pullback_at(&ex(), &field, &path, 0.1, 0.5, x, &opts).unwrap();
        assert_eq!(rec.samples, vec![Some(direct)]);
    }

    #[test]
    fn axis_points_are_skipped_not_fatal() {
        let field = holder_velocity(0.5, GAMMA).unwrap();
        let path = BrownianPath::zero(1e-3, 100).unwrap();
        let grid = GridSpec::Points {
            points: vec![Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.3, 0.0)],
        };
        let rec = reconstruct_grid(&ex(), &field, &path, 0.0, 0.1, &grid, &PullbackOptions::default()).unwrap();
        assert_eq!(rec.skipped.len(), 1);
        assert_eq!(rec.skipped[0].index, 1);
        assert!(matches!(rec.skipped[0].error, Error::NearAxis { .. }));
        assert!(rec.samples[0].is_some() && rec.samples[2].is_some());
        assert!(reconstruct_grid(&ex(), &field, &path, 0.0, 0.1, &GridSpec::Points { points: vec![] }, &PullbackOptions::default()).is_err());
    }

    #[test]
    fn grid_layouts() {
        let pts = GridSpec::Annulus {
            r_min: 1e-3,
            r_max: 1e-1,
            n_r: 3,
            n_theta: 4,
            z: 0.5,
            log_r: true,
        }
        .points()
        .unwrap();
        assert_eq!(pts.len(), 12);
        assert!((pts[4].radius() - 1e-2).abs() < 1e-15);
        assert!(pts.iter().all(|p| p.z == 0.5));
        let pts = GridSpec::Box {
            min: Vec3::new(0.0, 0.0, 0.0),
            max: Vec3::new(1.0, 2.0, 3.0),
            n: [2, 3, 4],
        }
        .points()
        .unwrap();
        assert_eq!(pts.len(), 24);
        assert_eq!(pts[23], Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(pts[1], Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn rigid_rotation_preserves_norm() {
        let field = holder_velocity(1.0, GAMMA).unwrap();
        let path = BrownianPath::zero(1e-3, 1000).unwrap();
        let rotor = InitialField::preset("solid_rotor").unwrap();
        let x = Vec3::new(0.2, 0.5, 0.3);
        let s = pullback_at(&rotor, &field, &path, 0.0, 1.0, x, &PullbackOptions::variational()).unwrap();
        let foot = Mat3::rotation_z(-1.0) * x;
        assert!((s.b.norm() - rotor.evaluate(foot).norm()).abs() <= 1e-9);
    }
}
