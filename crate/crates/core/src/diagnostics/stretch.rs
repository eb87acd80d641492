use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{vector_to_cylindrical, CylPoint, Vec3};
use crate::transport::{radii, Reconstructor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StretchRegion {
    Annulus { r_min: f64, r_max: f64 },
}

/// Per-radius maxima over the θ samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingSup {
    pub r: f64,
    pub sup_b: f64,
    pub sup_b_theta: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchReport {
    pub t: f64,
    pub region: StretchRegion,
    /// Max `|B|` over the samples; a lower bound for the true supremum.
    pub sup_b: f64,
    pub sup_b_theta: f64,
    pub argmax: Vec3,
    pub samples_used: usize,
    pub skipped: usize,
    pub rings: Vec<RingSup>,
}

/// Max of `|B(t, ·)|` on `n_r` log-spaced radii times `n_theta` uniform angles
/// at `z = 0`. Points the reconstructor refuses are counted, not fatal, unless
/// every point fails.
pub fn stretch_supremum(
    rec: &dyn Reconstructor,
    t: f64,
    r_min: f64,
    r_max: f64,
    n_r: usize,
    n_theta: usize,
) -> Result<StretchReport> {
    if !(r_min > 0.0 && r_max > r_min) {
        return Err(Error::InvalidParameter(format!("annulus needs 0 < r_min < r_max, got [{r_min}, {r_max}]")));
    }
    if n_r < 2 || n_theta < 2 {
        return Err(Error::InvalidParameter("stretch grid needs at least 2 x 2 samples".into()));
    }
    let rs = radii(r_min, r_max, n_r, true);
    let points: Vec<Vec3> = rs
        .iter()
        .flat_map(|&r| {
            (0..n_theta).map(move |j| CylPoint::new(r, std::f64::consts::TAU * j as f64 / n_theta as f64, 0.0).to_cartesian())
        })
        .collect();
    let values: Vec<Result<Vec3>> = points.par_iter().map(|&x| rec.field_at(t, x)).collect();

    let mut rings = Vec::with_capacity(n_r);
    let (mut sup_b, mut sup_b_theta, mut argmax) = (0.0_f64, 0.0_f64, points[0]);
    let (mut used, mut skipped) = (0, 0);
    let mut first_error = None;
    for (i, &r) in rs.iter().enumerate() {
        let mut ring = RingSup {
            r,
            sup_b: 0.0,
            sup_b_theta: 0.0,
            skipped: 0,
        };
        for j in 0..n_theta {
            let idx = i * n_theta + j;
            match &values[idx] {
                Ok(b) => {
                    used += 1;
                    let norm = b.norm();
                    let b_theta = vector_to_cylindrical(points[idx], *b)?.theta_comp.abs();
                    ring.sup_b = ring.sup_b.max(norm);
                    ring.sup_b_theta = ring.sup_b_theta.max(b_theta);
                    if norm > sup_b {
                        sup_b = norm;
                        argmax = points[idx];
                    }
                    sup_b_theta = sup_b_theta.max(b_theta);
                }
                Err(e) => {
                    skipped += 1;
                    ring.skipped += 1;
                    first_error.get_or_insert_with(|| e.clone());
                }
            }
        }
        rings.push(ring);
    }
    if used == 0 {
        return Err(first_error.expect("every point failed"));
    }
    Ok(StretchReport {
        t,
        region: StretchRegion::Annulus { r_min, r_max },
        sup_b,
        sup_b_theta,
        argmax,
        samples_used: used,
        skipped,
        rings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{blowup_envelope, ExactSolution};
    use crate::fields::{holder_velocity, InitialField};
    use crate::flow::BrownianPath;
    use crate::transport::{PullbackOptions, PullbackReconstructor};

    fn ex() -> InitialField {
        InitialField::preset("constant_ex").unwrap()
    }

    #[test]
    fn initial_time_gives_initial_sup() {
        let report = stretch_supremum(&ex(), 0.0, 0.1, 0.9, 4, 8).unwrap();
        assert_eq!(report.sup_b, 1.0);
        assert_eq!(report.samples_used, 32);
        assert!(stretch_supremum(&ex(), 0.0, 0.0, 0.9, 4, 8).is_err());
        assert!(stretch_supremum(&ex(), 0.0, 0.1, 0.9, 1, 8).is_err());
    }

    #[test]
    fn oracle_sup_tracks_envelope() {
        let oracle = ExactSolution::from_initial_field(0.2, &ex()).unwrap();
        let report = stretch_supremum(&oracle, 1.0, 1e-3, 1e-1, 9, 64).unwrap();
        let envelope = blowup_envelope(0.2, 1.0, 1e-3, 1.0);
        assert!((envelope - 200.95).abs() < 0.01);
        assert!((report.sup_b / envelope - 1.0).abs() <= 0.1, "{}", report.sup_b);
        assert!(report.sup_b >= report.rings.iter().map(|r| r.sup_b).fold(0.0, f64::max));
        assert!(report.argmax.radius() < 1.01e-3);
    }

    #[test]
    fn pullback_sup_tracks_envelope() {
        let field = holder_velocity(0.2, 4.0).unwrap();
        let path = BrownianPath::zero(1e-4, 10_000).unwrap();
        let b0 = ex();
        let rec = PullbackReconstructor {
            b0: &b0,
            field: &field,
            path: &path,
            sigma: 0.0,
            opts: PullbackOptions::variational(),
        };
        let report = stretch_supremum(&rec, 1.0, 1e-3, 1e-1, 3, 32).unwrap();
        let envelope = blowup_envelope(0.2, 1.0, 1e-3, 1.0);
        assert!((report.sup_b / envelope - 1.0).abs() <= 0.1, "{}", report.sup_b);
    }

    #[test]
    fn rigid_rotation_is_isometric() {
        let field = holder_velocity(1.0, 4.0).unwrap();
        let path = BrownianPath::zero(1e-3, 1000).unwrap();
        let b0 = ex();
        let rec = PullbackReconstructor {
            b0: &b0,
            field: &field,
            path: &path,
            sigma: 0.0,
            opts: PullbackOptions::variational(),
        };
        for t in [0.3, 1.0] {
            let report = stretch_supremum(&rec, t, 0.05, 0.9, 4, 16).unwrap();
            assert!((report.sup_b - 1.0).abs() <= 1e-9, "{}", report.sup_b);
        }
    }
}
