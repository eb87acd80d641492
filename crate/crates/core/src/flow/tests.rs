use std::f64::consts::FRAC_PI_2;

use super::*;
use crate::error::Error;
use crate::fields::{holder_velocity, HolderRotationField, ZeroField};

fn rigid() -> HolderRotationField {
    holder_velocity(1.0, 1.0).unwrap()
}

fn mat_err(a: Mat3, b: Mat3) -> f64 {
    (a - b).max_abs()
}

#[test]
fn pure_noise_is_integrated_exactly() {
    let path = sample_brownian(3, 1e-3, 1000).unwrap();
    let x0 = Vec3::new(0.2, -0.1, 0.4);
    let flow = integrate_flow(&ZeroField, x0, &path, 1.0).unwrap();
    assert_eq!(flow.scheme, Scheme::EulerMaruyama);
    assert_eq!(flow.start(), x0);
    let expected = x0 + path.value_at(1000);
    assert!((flow.end() - expected).max_abs() <= 1e-12);
}

#[test]
fn rigid_rotation_quarter_turn() {
    let n = 1571;
    let dt = FRAC_PI_2 / n as f64;
    let path = BrownianPath::zero(dt, n).unwrap();
    let flow = integrate_flow(&rigid(), Vec3::E1, &path, 0.0).unwrap();
    assert_eq!(flow.scheme, Scheme::Rk4);
    assert!((flow.end() - Vec3::E2).norm() <= 1e-6, "{:?}", flow.end());
}

#[test]
fn holder_half_sweeps_two_radians() {
    let field = holder_velocity(0.5, 1.0).unwrap();
    let path = BrownianPath::zero(1e-4, 10_000).unwrap();
    let end = flow_map(&field, Vec3::new(0.25, 0.0, 0.0), &path, 0.0, 10_000).unwrap();
    let expected = Vec3::new(0.25 * 2f64.cos(), 0.25 * 2f64.sin(), 0.0);
    assert!((end - expected).norm() <= 1e-4);
    assert!((end.radius() - 0.25).abs() <= 1e-6);
}

#[test]
fn circles_are_invariant_without_noise() {
    let path = BrownianPath::zero(1e-3, 1000).unwrap();
    for alpha in [0.2, 0.5, 0.8, 1.0] {
        let field = holder_velocity(alpha, 1.0).unwrap();
        for r in [0.05, 0.3, 0.9, 1.4] {
            let x0 = Vec3::new(r * 0.6, r * 0.8, 0.1);
            let flow = integrate_flow(&field, x0, &path, 0.0).unwrap();
            for x in &flow.trajectory {
                assert!((x.radius() - r).abs() <= 1e-6, "alpha {alpha} r {r}: {}", x.radius());
                assert_eq!(x.z, 0.1);
            }
        }
    }
}

#[test]
fn repeated_integration_is_bit_identical() {
    let field = holder_velocity(0.5, 1.0).unwrap();
    let path = sample_brownian(11, 1e-3, 500).unwrap();
    let x0 = Vec3::new(0.3, 0.1, 0.0);
    let a = integrate_flow_with_jacobian(&field, x0, &path, 0.1, JacobianMethod::Variational).unwrap();
    let b = integrate_flow_with_jacobian(&field, x0, &path, 0.1, JacobianMethod::Variational).unwrap();
    assert_eq!(a, b);
}

#[test]
fn snapshots_match_full_trajectory() {
    let field = holder_velocity(0.5, 1.0).unwrap();
    let path = sample_brownian(5, 1e-3, 400).unwrap();
    let x0 = Vec3::new(0.4, 0.0, 0.0);
    let flow = integrate_flow(&field, x0, &path, 0.1).unwrap();
    let snaps = flow_snapshots(&field, x0, &path, 0.1, &[0, 100, 400]).unwrap();
    assert_eq!(snaps, vec![flow.trajectory[0], flow.trajectory[100], flow.trajectory[400]]);
    assert_eq!(flow.position_at(0.1).unwrap(), flow.trajectory[100]);
    assert!(flow.position_at(0.1005).is_err());
    assert!(flow_snapshots(&field, x0, &path, 0.1, &[401]).is_err());
}

struct Exploding;

impl crate::fields::VelocityField for Exploding {
    fn velocity(&self, _t: f64, p: Vec3) -> Vec3 {
        p * 1e200
    }
    fn jacobian(&self, _t: f64, _p: Vec3) -> crate::error::Result<Mat3> {
        Ok(Mat3::IDENTITY * 1e200)
    }
    fn holder_exponent(&self) -> f64 {
        1.0
    }
    fn bound(&self) -> f64 {
        f64::INFINITY
    }
    fn label(&self) -> String {
        "exploding".into()
    }
}

#[test]
fn overflow_reports_non_finite() {
    let path = BrownianPath::zero(0.1, 10).unwrap();
    let err = integrate_flow(&Exploding, Vec3::E1, &path, 0.0).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err:?}");
    assert!(integrate_flow(&ZeroField, Vec3::new(f64::NAN, 0.0, 0.0), &path, 0.0).is_err());
}

#[test]
fn inverse_of_rotation_round_trips() {
    let path = BrownianPath::zero(1e-3, 1000).unwrap();
    let y = Vec3::new(0.0, 0.7, 0.2);
    let x = integrate_inverse_flow(&rigid(), y, &path, 0.0, 1.0, &InverseOptions::default()).unwrap();
    let expected = Mat3::rotation_z(-1.0) * y;
    assert!((x - expected).norm() <= 1e-6);
    assert!(inverse_round_trip(&rigid(), y, &path, 0.0, 1.0).unwrap() <= 1e-6);
}

#[test]
fn inverse_of_pure_noise_subtracts_the_path() {
    let path = sample_brownian(9, 1e-3, 1000).unwrap();
    let y = Vec3::new(0.5, 0.5, 0.5);
    let x = integrate_inverse_flow(&ZeroField, y, &path, 1.0, 0.6, &InverseOptions::default()).unwrap();
    assert!((x - (y - path.value_at(600))).max_abs() <= 1e-12);
}

#[test]
fn inverse_round_trip_is_first_order() {
    let field = holder_velocity(0.5, 1.0).unwrap();
    let dt = 1e-3;
    let (mut coarse, mut fine) = (0.0_f64, 0.0_f64);
    for seed in 0..10 {
        let fine_path = sample_brownian(seed, dt / 2.0, 2000).unwrap();
        let coarse_path = coarsen(&fine_path, 2);
        for y in [Vec3::new(0.5, 0.0, 0.0), Vec3::new(-0.2, 0.3, 0.1)] {
            coarse = coarse.max(inverse_round_trip(&field, y, &coarse_path, 0.1, 1.0).unwrap());
            fine = fine.max(inverse_round_trip(&field, y, &fine_path, 0.1, 1.0).unwrap());
        }
    }
    // Fitted constant at dt = 1e-3 is about 1.35.
    eprintln!("inverse round trip: C = {:.3} (dt = {dt}), {:.3} (dt = {})", coarse / dt, fine / (dt / 2.0), dt / 2.0);
    assert!(coarse <= 3.0 * dt, "residual {coarse}");
    assert!(coarse / fine >= 1.6, "ratio {}", coarse / fine);
}

#[test]
fn inverse_verification_and_newton() {
    let field = holder_velocity(0.5, 1.0).unwrap();
    let path = sample_brownian(2, 1e-3, 1000).unwrap();
    let y = Vec3::new(0.3, 0.2, 0.0);
    let strict = InverseOptions {
        verify: true,
        tolerance: 1e-14,
        ..InverseOptions::default()
    };
    let err = integrate_inverse_flow(&field, y, &path, 0.1, 1.0, &strict).unwrap_err();
    assert!(matches!(err, Error::InverseVerificationFailed { .. }));

    let polished = InverseOptions {
        verify: true,
        tolerance: 1e-9,
        newton_steps: 2,
        ..InverseOptions::default()
    };
    let x = integrate_inverse_flow(&field, y, &path, 0.1, 1.0, &polished).unwrap();
    assert!((flow_map(&field, x, &path, 0.1, 1000).unwrap() - y).norm() <= 1e-9);
    assert!(integrate_inverse_flow(&field, y, &path, 0.1, 1.2, &polished).is_err());
}

#[test]
fn jacobian_of_zero_field_is_identity() {
    let path = sample_brownian(4, 1e-2, 100).unwrap();
    for method in [JacobianMethod::Variational, JacobianMethod::finite_difference()] {
        let jacs = flow_jacobian(&ZeroField, Vec3::new(0.1, 0.2, 0.3), &path, 1.0, method).unwrap();
        assert_eq!(jacs.len(), 101);
        for j in jacs {
            assert!(mat_err(j, Mat3::IDENTITY) <= 1e-9);
        }
    }
}

#[test]
fn jacobian_of_rigid_rotation() {
    let path = BrownianPath::zero(1e-3, 700).unwrap();
    for method in [JacobianMethod::Variational, JacobianMethod::finite_difference()] {
        let flow = integrate_flow_with_jacobian(&rigid(), Vec3::new(0.5, 0.1, 0.0), &path, 0.0, method).unwrap();
        let j = flow.jacobian_at(0.7).unwrap();
        assert!(mat_err(j, Mat3::rotation_z(0.7)) <= 1e-6, "{method:?}: {j:?}");
    }
}

#[test]
fn jacobian_methods_agree() {
    let field = holder_velocity(0.5, 1.0).unwrap();
    let path = sample_brownian(17, 1e-4, 10_000).unwrap();
    let x0 = Vec3::new(0.5, 0.0, 0.0);
    let var = flow_jacobian(&field, x0, &path, 0.1, JacobianMethod::Variational).unwrap();
    let fd = flow_jacobian(&field, x0, &path, 0.1, JacobianMethod::FiniteDifference { h: 1e-5 }).unwrap();
    let worst = var.iter().zip(&fd).map(|(a, b)| mat_err(*a, *b)).fold(0.0, f64::max);
    assert!(worst <= 1e-4, "max deviation {worst}");
}

#[test]
fn variational_refuses_the_axis() {
    let field = holder_velocity(0.5, 1.0).unwrap();
    let path = BrownianPath::zero(1e-3, 10).unwrap();
    let err = flow_jacobian(&field, Vec3::new(1e-8, 0.0, 0.0), &path, 0.0, JacobianMethod::Variational).unwrap_err();
    assert!(matches!(err, Error::NearAxis { .. }), "{err:?}");
    assert!(flow_jacobian(&field, Vec3::E1, &path, 0.0, JacobianMethod::FiniteDifference { h: 0.0 }).is_err());
}

#[test]
fn inverse_jacobian_of_rotation_and_zero_field() {
    let path = BrownianPath::zero(1e-3, 700).unwrap();
    let flow = integrate_flow(&rigid(), Vec3::new(0.4, -0.2, 0.0), &path, 0.0).unwrap();
    let inv = inverse_jacobian_evolve(&rigid(), &flow).unwrap();
    assert!(mat_err(inv[700], Mat3::rotation_z(-0.7)) <= 1e-6);

    let noisy = sample_brownian(1, 1e-3, 100).unwrap();
    let flow = integrate_flow(&ZeroField, Vec3::E3, &noisy, 1.0).unwrap();
    for m in inverse_jacobian_evolve(&ZeroField, &flow).unwrap() {
        assert_eq!(m, Mat3::IDENTITY);
    }
}

#[test]
fn inverse_jacobian_inverts_forward_jacobian() {
    let field = holder_velocity(0.5, 1.0).unwrap();
    let path = sample_brownian(23, 1e-4, 10_000).unwrap();
    let flow = integrate_flow_with_jacobian(&field, Vec3::new(0.3, 0.2, 0.0), &path, 0.1, JacobianMethod::Variational)
        .unwrap();
    let inv = inverse_jacobian_evolve(&field, &flow).unwrap();
    let jacs = flow.jacobians.as_ref().unwrap();
    let worst = inv.iter().zip(jacs).map(|(m, j)| mat_err(*m * *j, Mat3::IDENTITY)).fold(0.0, f64::max);
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn backward_jacobian_inverts_forward_jacobian() {
    let field = holder_velocity(0.5, 1.0).unwrap();
    let path = BrownianPath::zero(1e-3, 1000).unwrap();
    let y = Vec3::new(0.2, 0.4, 0.0);
    for method in [JacobianMethod::Variational, JacobianMethod::finite_difference()] {
        let (x, back) = backward_map_with_jacobian(&field, y, &path, 0.0, 1000, method).unwrap();
        let fwd = flow_jacobian(&field, x, &path, 0.0, JacobianMethod::Variational).unwrap();
        assert!(mat_err(back * fwd[1000], Mat3::IDENTITY) <= 1e-5, "{method:?}");
    }
}

#[test]
fn determinant_stays_near_one() {
    let field = holder_velocity(0.5, 1.0).unwrap();
    for (seed, sigma) in [(0, 0.0), (1, 0.1), (2, 0.1)] {
        let path = sample_brownian(seed, 1e-4, 10_000).unwrap();
        for r in [0.1, 0.6, 1.5] {
            let x0 = Vec3::new(0.0, r, 0.0);
            for method in [JacobianMethod::Variational, JacobianMethod::finite_difference()] {
                let flow = integrate_flow_with_jacobian(&field, x0, &path, sigma, method).unwrap();
                let dev = flow.max_det_deviation().unwrap();
                assert!(dev <= 1e-3, "sigma {sigma} r {r} {method:?}: {dev}");
            }
        }
    }
}

fn coarsen(path: &BrownianPath, factor: usize) -> BrownianPath {
    path.coarsen(factor).unwrap()
}

#[test]
fn euler_maruyama_strong_order_one() {
    let field = rigid();
    let x0 = Vec3::new(0.5, 0.0, 0.0);
    let (dt, sub) = (0.02, 32);
    let n_fine = (1.0 / dt) as usize * sub;
    let (mut e1, mut e2) = (0.0, 0.0);
    for seed in 0..100 {
        let fine = sample_brownian(seed, dt / sub as f64, n_fine).unwrap();
        let reference = flow_map(&field, x0, &fine, 0.1, n_fine).unwrap();
        let coarse = coarsen(&fine, sub);
        let half = coarsen(&fine, sub / 2);
        e1 += (flow_map(&field, x0, &coarse, 0.1, coarse.n_steps()).unwrap() - reference).norm();
        e2 += (flow_map(&field, x0, &half, 0.1, half.n_steps()).unwrap() - reference).norm();
    }
    let ratio = e1 / e2;
    assert!(ratio >= 1.8, "error ratio {ratio}");
}
