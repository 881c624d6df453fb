use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::scheduling::{MembershipWeights, SchedulingBounds, SchedulingPoint};
use crate::error::{Error, Result};

/// Vertex systems of a quasi-LPV model: `x+ = sum_i mu_i (A_i x + B_i u) + E d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopicModel {
    #[serde(with = "crate::serde_mat::matrices")]
    pub vertex_a: Vec<DMatrix<f64>>,
    #[serde(with = "crate::serde_mat::matrices")]
    pub vertex_b: Vec<DMatrix<f64>>,
    #[serde(default, with = "opt_vector")]
    pub e: Option<DVector<f64>>,
    pub sample_time: f64,
    pub bounds: SchedulingBounds,
}

mod opt_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<DVector<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|v| v.as_slice().to_vec()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DVector<f64>>, D::Error> {
        Ok(Option::<Vec<f64>>::deserialize(d)?.map(DVector::from_vec))
    }
}

impl PolytopicModel {
    pub fn new(
        vertex_a: Vec<DMatrix<f64>>,
        vertex_b: Vec<DMatrix<f64>>,
        e: Option<DVector<f64>>,
        sample_time: f64,
        bounds: SchedulingBounds,
    ) -> Result<Self> {
        let m = Self { vertex_a, vertex_b, e, sample_time, bounds };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        let nv = self.bounds.vertex_count();
        if self.vertex_a.len() != nv || self.vertex_b.len() != nv {
            return Err(Error::Config(format!(
                "polytope needs {nv} vertices, got {} A and {} B",
                self.vertex_a.len(),
                self.vertex_b.len()
            )));
        }
        let n = self.vertex_a[0].nrows();
        let m = self.vertex_b[0].ncols();
        for (a, b) in self.vertex_a.iter().zip(&self.vertex_b) {
            if a.shape() != (n, n) || b.shape() != (n, m) {
                return Err(Error::Config("vertex matrix dimensions disagree".into()));
            }
        }
        if let Some(e) = &self.e {
            if e.len() != n {
                return Err(Error::Config("disturbance column has wrong length".into()));
            }
        }
        if !(self.sample_time.is_finite() && self.sample_time > 0.0) {
            return Err(Error::Config("sample time must be > 0".into()));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.vertex_a[0].nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.vertex_b[0].ncols()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_a.len()
    }

    pub fn weights(&self, point: &SchedulingPoint) -> MembershipWeights {
        self.bounds.weights(point)
    }

    pub fn blend_a(&self, w: &MembershipWeights) -> DMatrix<f64> {
        w.blend(&self.vertex_a)
    }

    pub fn blend_b(&self, w: &MembershipWeights) -> DMatrix<f64> {
        if self.input_matrix_is_constant() {
            self.vertex_b[0].clone()
        } else {
            w.blend(&self.vertex_b)
        }
    }

    /// Blended `(A, B)` at a scheduling point.
    pub fn blend_at(&self, point: &SchedulingPoint) -> (DMatrix<f64>, DMatrix<f64>) {
        let w = self.weights(point);
        (self.blend_a(&w), self.blend_b(&w))
    }

    /// True when every vertex shares the same `B` bit for bit.
    pub fn input_matrix_is_constant(&self) -> bool {
        self.vertex_b.iter().all(|b| b == &self.vertex_b[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Interval;

    fn toy() -> PolytopicModel {
        let bounds = SchedulingBounds::new(vec![Interval::new(0.0, 1.0)]).unwrap();
        PolytopicModel::new(
            vec![DMatrix::from_element(1, 1, 0.2), DMatrix::from_element(1, 1, 0.8)],
            vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 3.0)],
            Some(DVector::from_element(1, -1.0)),
            0.1,
            bounds,
        )
        .unwrap()
    }

    #[test]
    fn blend_is_linear_in_the_scheduling_variable() {
        let m = toy();
        let (a, b) = m.blend_at(&SchedulingPoint::new(vec![0.25]));
        assert!((a[(0, 0)] - 0.35).abs() < 1e-15);
        assert!((b[(0, 0)] - 1.5).abs() < 1e-15);
        assert!(!m.input_matrix_is_constant());
    }

    #[test]
    fn rejects_wrong_vertex_count() {
        let mut m = toy();
        m.vertex_a.pop();
        assert!(m.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = toy();
        let s = serde_json::to_string(&m).unwrap();
        let back: PolytopicModel = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
    }
}
