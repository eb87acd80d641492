mod common;

use proptest::prelude::*;
use stretchlab::geometry::{
    det3, from_cylindrical, to_cylindrical, vector_from_cylindrical, vector_to_cylindrical, CylPoint,
};
use stretchlab::{adjugate, Mat3, Vec3};

fn entry() -> impl Strategy<Value = f64> {
    -1.0..1.0f64
}

fn matrix() -> impl Strategy<Value = Mat3> {
    prop::array::uniform3(prop::array::uniform3(entry())).prop_map(Mat3::new)
}

fn vector() -> impl Strategy<Value = Vec3> {
    (entry(), entry(), entry()).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

/// Off-axis point: `r ∈ [1e-3, 10]`, any angle and height.
fn off_axis() -> impl Strategy<Value = Vec3> {
    (1e-3..10.0f64, -std::f64::consts::PI..std::f64::consts::PI, -10.0..10.0f64)
        .prop_map(|(r, th, z)| CylPoint::new(r, th, z).to_cartesian())
}

proptest! {
    #![proptest_config(common::config(1000))]

    #[test]
    fn adjugate_is_det_times_inverse(a in matrix()) {
        let lhs = a * adjugate(&a);
        let rhs = Mat3::IDENTITY * det3(&a);
        prop_assert!((lhs - rhs).max_abs() <= 1e-12, "{:?}", lhs - rhs);
        let lhs = adjugate(&a) * a;
        prop_assert!((lhs - rhs).max_abs() <= 1e-12);
    }

    #[test]
    fn adjugate_reverses_products(a in matrix(), b in matrix()) {
        // adj(AB) = adj(B) adj(A)
        let lhs = adjugate(&(a * b));
        let rhs = adjugate(&b) * adjugate(&a);
        prop_assert!((lhs - rhs).max_abs() <= 1e-12);
    }

    #[test]
    fn point_round_trip(p in off_axis()) {
        let back = from_cylindrical(to_cylindrical(p));
        prop_assert!((back - p).max_abs() <= 1e-12 * p.norm().max(1.0), "{p:?} -> {back:?}");
    }

    #[test]
    fn vector_round_trip(p in off_axis(), v in vector()) {
        let c = vector_to_cylindrical(p, v).unwrap();
        let back = vector_from_cylindrical(to_cylindrical(p), c).unwrap();
        prop_assert!((back - v).max_abs() <= 1e-12);
    }

    #[test]
    fn basis_change_preserves_norm(p in off_axis(), v in vector()) {
        let c = vector_to_cylindrical(p, v).unwrap();
        prop_assert!((c.norm() - v.norm()).abs() <= 1e-12);
    }
}
