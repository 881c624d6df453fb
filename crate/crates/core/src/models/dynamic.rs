use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::params::VehicleParams;
use super::polytope::PolytopicModel;
use super::scheduling::{Interval, SchedulingBounds, SchedulingPoint};

/// Lowest speed at which the `1/v` terms are evaluated.
pub const V_FLOOR: f64 = 0.1;

/// Scheduling box `(delta, v, alpha)`.
pub fn default_dynamic_bounds() -> SchedulingBounds {
    SchedulingBounds(vec![Interval::new(-1.42, 1.42), Interval::new(V_FLOOR, 20.0), Interval::new(-0.1, 0.1)])
}

/// Discrete bicycle-model matrices at one scheduling point.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DVector<f64>,
    /// Set when `v` was raised to [`V_FLOOR`] before evaluation.
    pub speed_clamped: bool,
}

/// How online code evaluates the dynamic model at a non-vertex point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicEvaluation {
    /// Quasi-LPV matrices evaluated directly at the point.
    #[default]
    Pointwise,
    /// Convex blend of the vertex systems with the membership weights.
    VertexBlend,
}

/// `(A_d, B_d, E_d)` at `(delta, v, alpha)`, state `[v, alpha, omega]`, input `[F_xR, delta]`.
pub fn dynamic_matrices_at(point: &SchedulingPoint, p: &VehicleParams, td: f64) -> DynamicMatrices {
    let delta = point.get(0);
    let raw_v = point.get(1);
    let alpha = point.get(2);
    let speed_clamped = !(raw_v >= V_FLOOR);
    let v = if speed_clamped {
        debug!("dynamic model: speed {raw_v} raised to {V_FLOOR}");
        V_FLOOR
    } else {
        raw_v
    };

    let (m, i, cx, a, b) = (p.mass, p.inertia, p.cornering_stiffness, p.a, p.b);
    let (sd, cd) = delta.sin_cos();
    let (sa, ca) = alpha.sin_cos();

    let a11 = -(p.drag_factor() * v * v + p.nominal_friction_force()) / (m * v);
    let a12 = cx * (sd * ca - sa * cd - sa) / m;
    let a13 = cx * (a * (sd * ca - sa * cd) + b * sa) / (m * v);
    let a22 = -cx * (ca * cd + sa * sd + ca) / (m * v);
    let a23 = (-cx * a * (cd * ca + sa * sd) + cx * b * ca) / (m * v * v) - 1.0;
    let a32 = cx * (b - a * cd) / i;
    let a33 = -cx * (b * b + a * a * cd) / (i * v);

    let b11 = ca / m;
    let b12 = cx * (-sd * ca + sa * cd) / m;
    let b21 = -sa / (m * v);
    let b22 = cx * (ca * cd + sa * sd) / (m * v);
    let b32 = cx * a * cd / i;

    #[rustfmt::skip]
    let a_d = DMatrix::from_row_slice(3, 3, &[
        1.0 + a11 * td, a12 * td,       a13 * td,
        0.0,            1.0 + a22 * td, a23 * td,
        0.0,            a32 * td,       1.0 + a33 * td,
    ]);
    #[rustfmt::skip]
    let b_d = DMatrix::from_row_slice(3, 2, &[
        b11 * td, b12 * td,
        b21 * td, b22 * td,
        0.0,      b32 * td,
    ]);
    let e_d = DVector::from_vec(vec![-td / m, 0.0, 0.0]);
    DynamicMatrices { a: a_d, b: b_d, e: e_d, speed_clamped }
}

pub fn dynamic_polytope(bounds: &SchedulingBounds, p: &VehicleParams, td: f64) -> PolytopicModel {
    let n = bounds.vertex_count();
    let mats: Vec<_> = (0..n).map(|i| dynamic_matrices_at(&bounds.vertex(i), p, td)).collect();
    let e = mats[0].e.clone();
    PolytopicModel::new(
        mats.iter().map(|d| d.a.clone()).collect(),
        mats.into_iter().map(|d| d.b).collect(),
        Some(e),
        td,
        bounds.clone(),
    )
    .expect("dynamic vertices are consistent by construction")
}

/// The dynamic TS model bundled with the evaluation rule used online.
#[derive(Debug, Clone)]
pub struct DynamicModel {
    pub params: VehicleParams,
    pub polytope: PolytopicModel,
    pub evaluation: DynamicEvaluation,
}

impl DynamicModel {
    pub fn new(
        params: VehicleParams,
        bounds: &SchedulingBounds,
        td: f64,
        evaluation: DynamicEvaluation,
    ) -> Self {
        Self { params, polytope: dynamic_polytope(bounds, &params, td), evaluation }
    }

    pub fn td(&self) -> f64 {
        self.polytope.sample_time
    }

    pub fn e(&self) -> &DVector<f64> {
        self.polytope.e.as_ref().expect("dynamic polytope carries E")
    }

    /// `(A, B)` at `(delta, v, alpha)` under the configured evaluation rule.
    pub fn matrices(&self, point: &SchedulingPoint) -> (DMatrix<f64>, DMatrix<f64>) {
        match self.evaluation {
            DynamicEvaluation::Pointwise => {
                let d = dynamic_matrices_at(point, &self.params, self.td());
                (d.a, d.b)
            }
            DynamicEvaluation::VertexBlend => self.polytope.blend_at(point),
        }
    }
}
