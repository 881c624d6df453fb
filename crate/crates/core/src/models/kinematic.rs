use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::polytope::PolytopicModel;
use super::scheduling::{Interval, SchedulingBounds, SchedulingPoint};
use super::wrap_angle;

/// Body-frame tracking error `[x_e, y_e, theta_e]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicErrorState {
    pub x_e: f64,
    pub y_e: f64,
    pub theta_e: f64,
}

impl KinematicErrorState {
    pub fn new(x_e: f64, y_e: f64, theta_e: f64) -> Self {
        Self { x_e, y_e, theta_e: wrap_angle(theta_e) }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.x_e, self.y_e, self.theta_e])
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.x_e.is_finite() && self.y_e.is_finite() && self.theta_e.is_finite()
    }
}

/// Speed/yaw-rate command `[v, omega]` produced by the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicInput {
    pub v: f64,
    pub omega: f64,
}

impl KinematicInput {
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.v, self.omega])
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1])
    }
}

/// `sin(x)/x`, with a Taylor expansion near zero.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Scheduling box `(omega, v_d, theta_e)`.
pub fn default_kinematic_bounds() -> SchedulingBounds {
    SchedulingBounds(vec![Interval::new(-1.42, 1.42), Interval::new(0.1, 20.0), Interval::new(-0.05, 0.05)])
}

/// Euler-discretized error dynamics at scheduling point `(omega, v_d, theta_e)`.
///
/// The model reads `x+ = A x + B u - B r` with `r = [v_d cos(theta_e), omega_d]`.
pub fn kinematic_matrices_at(point: &SchedulingPoint, tc: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (w, vd, th) = (point.get(0), point.get(1), point.get(2));
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(3, 3, &[
        1.0,     w * tc, 0.0,
        -w * tc, 1.0,    vd * sinc(th) * tc,
        0.0,     0.0,    1.0,
    ]);
    (a, kinematic_input_matrix(tc))
}

fn kinematic_input_matrix(tc: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 2, &[-tc, 0.0, 0.0, 0.0, 0.0, -tc])
}

pub fn kinematic_polytope(bounds: &SchedulingBounds, tc: f64) -> PolytopicModel {
    let n = bounds.vertex_count();
    let vertex_a = (0..n).map(|i| kinematic_matrices_at(&bounds.vertex(i), tc).0).collect();
    let vertex_b = vec![kinematic_input_matrix(tc); n];
    PolytopicModel::new(vertex_a, vertex_b, None, tc, bounds.clone())
        .expect("kinematic vertices are consistent by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sinc_limit_and_continuity() {
        assert_eq!(sinc(0.0), 1.0);
        let below = sinc(0.99e-4);
        let above = sinc(1.01e-4);
        assert!((below - above).abs() < 1e-9);
        assert!((sinc(0.05) - 0.05f64.sin() / 0.05).abs() < 1e-16);
    }

    #[test]
    fn zero_rate_zero_heading() {
        let (a, _) = kinematic_matrices_at(&SchedulingPoint::from([0.0, 7.0, 0.0]), 0.1);
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.7, 0.0, 0.0, 1.0]);
        assert!((a - want).abs().max() < 1e-15);
    }

    #[test]
    fn extreme_point_entries() {
        let (a, b) = kinematic_matrices_at(&SchedulingPoint::from([1.42, 20.0, 0.05]), 0.1);
        assert!((a[(0, 1)] - 0.142).abs() < 1e-12);
        assert!((a[(1, 0)] + 0.142).abs() < 1e-12);
        // 20 * sin(0.05)/0.05 * 0.1
        assert!((a[(1, 2)] - 1.999_166_7).abs() < 1e-6);
        let want_b = DMatrix::from_row_slice(3, 2, &[-0.1, 0.0, 0.0, 0.0, 0.0, -0.1]);
        assert_eq!(b, want_b);
    }

    #[test]
    fn polytope_vertices_match_pointwise() {
        let bounds = default_kinematic_bounds();
        let poly = kinematic_polytope(&bounds, 0.1);
        assert_eq!(poly.vertex_count(), 8);
        assert!(poly.input_matrix_is_constant());
        for i in 0..8 {
            let p = bounds.vertex(i);
            let (a, b) = kinematic_matrices_at(&p, 0.1);
            let (ab, bb) = poly.blend_at(&p);
            assert_eq!(a, ab);
            assert_eq!(b, bb);
        }
    }

    #[test]
    fn midpoint_deviation_confined_to_coupling_entry() {
        let bounds = default_kinematic_bounds();
        let poly = kinematic_polytope(&bounds, 0.1);
        let mid = bounds.midpoint();
        let (a, _) = kinematic_matrices_at(&mid, 0.1);
        let (ab, _) = poly.blend_at(&mid);
        let d = &ab - &a;
        for i in 0..3 {
            for j in 0..3 {
                if (i, j) != (1, 2) {
                    assert!(d[(i, j)].abs() < 1e-12);
                }
            }
        }
        // hull of v_d*sinc at theta_e = 0 uses sinc(0.05) instead of 1
        assert!(d[(1, 2)].abs() < 1.05 * 0.1 * (1.0 - sinc(0.05)) * 10.05);
    }

    proptest! {
        #[test]
        fn blended_matches_pointwise_off_coupling(
            w in -1.42f64..1.42, v in 0.1f64..20.0, th in -0.05f64..0.05
        ) {
            let bounds = default_kinematic_bounds();
            let poly = kinematic_polytope(&bounds, 0.1);
            let p = SchedulingPoint::from([w, v, th]);
            let (a, _) = kinematic_matrices_at(&p, 0.1);
            let (ab, _) = poly.blend_at(&p);
            for i in 0..3 {
                for j in 0..3 {
                    if (i, j) != (1, 2) {
                        prop_assert!((a[(i, j)] - ab[(i, j)]).abs() < 1e-12);
                    }
                }
            }
            // sector bound: the blend stays within 0.05% of the pointwise coupling
            prop_assert!((a[(1, 2)] - ab[(1, 2)]).abs() <= 5e-4 * a[(1, 2)].abs() + 1e-12);
        }
    }
}
