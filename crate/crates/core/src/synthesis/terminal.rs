use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::gains::{invert, GainTable};
use crate::error::{Error, Result};
use crate::models::PolytopicModel;
use crate::opt::{
    solve_lmi, AffineMatrix, DecisionVars, LmiConstraint, LmiObjective, LmiProblem, LmiSettings,
};

/// Ellipsoid `{x : x' S x <= 1}` invariant under the vertex gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSet {
    #[serde(with = "crate::serde_mat::matrix")]
    pub s: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub z: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::vector")]
    pub u_bound: DVector<f64>,
}

impl TerminalSet {
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.level(x) <= 1.0 + tol
    }

    /// `x' S x`.
    pub fn level(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.s * x))
    }

    /// Same shape, scaled radius: `{x' S x <= k^2}`.
    pub fn inflated(&self, k: f64) -> Self {
        Self { s: &self.s / (k * k), z: &self.z * (k * k), u_bound: self.u_bound.clone() }
    }
}

/// Largest-volume invariant ellipsoid: maximize `log det Z` subject to
/// `[[Z, Z Acl_i'], [Acl_i Z, Z]] > 0` and `(K_i Z K_i')_cc < u_c^2` per input channel.
pub fn synthesize_terminal_set(
    model: &PolytopicModel,
    gains: &GainTable,
    u_bound: &DVector<f64>,
    settings: &LmiSettings,
) -> Result<TerminalSet> {
    let n = model.n_states();
    if u_bound.len() != model.n_inputs() {
        return Err(Error::Config("input bound length does not match the model".into()));
    }
    if u_bound.iter().any(|u| !u.is_finite() || *u < 0.0) {
        return Err(Error::Config("input bounds must be finite and non-negative".into()));
    }
    let mut vars = DecisionVars::new();
    let z = vars.symmetric(n);
    let za = z.affine();
    let mut constraints = Vec::new();
    for (i, acl) in gains.closed_loop(model).iter().enumerate() {
        let azt = za.right_mul(&acl.transpose());
        let f = AffineMatrix::block(&[vec![za.clone(), azt.clone()], vec![azt.transpose(), za.clone()]]);
        constraints.push(LmiConstraint::positive(format!("invariance vertex {i}"), f));
    }
    for (i, k) in gains.gains.iter().enumerate() {
        for c in 0..k.nrows() {
            let kc = DMatrix::from_iterator(1, k.ncols(), k.row(c).iter().copied());
            let quad = za.left_mul(&kc).right_mul(&kc.transpose());
            let f = AffineMatrix::constant(DMatrix::from_element(1, 1, u_bound[c] * u_bound[c])).sub(&quad);
            constraints.push(LmiConstraint::positive(format!("input channel {c} at vertex {i}"), f));
        }
    }
    let problem =
        LmiProblem { n_vars: vars.count(), constraints, objective: LmiObjective::MaximizeLogDet(za) };
    let sol = solve_lmi(&problem, settings).map_err(|e| match e {
        Error::Infeasible(msg) => {
            Error::Infeasible(format!("terminal set with input bound {:?}: {msg}", u_bound.as_slice()))
        }
        other => other,
    })?;
    let zv = z.value(&sol.x);
    let s = invert(&zv, "terminal matrix Z")?;
    let s = (&s + s.transpose()) * 0.5;
    Ok(TerminalSet { s, z: zv, u_bound: u_bound.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{default_kinematic_bounds, kinematic_polytope, Interval, SchedulingBounds};
    use crate::synthesis::gains::{diag, synthesize_vertex_gains};

    fn scalar_table(k: f64) -> (PolytopicModel, GainTable) {
        let bounds = SchedulingBounds::new(vec![Interval::new(0.0, 1.0)]).unwrap();
        // a + b k = 0.5 with b = 1
        let a = DMatrix::from_element(1, 1, 0.5 - k);
        let b = DMatrix::from_element(1, 1, 1.0);
        let model = PolytopicModel::new(vec![a.clone(), a], vec![b.clone(), b], None, 0.1, bounds).unwrap();
        let kk = DMatrix::from_element(1, 1, k);
        let table = GainTable {
            gains: vec![kk.clone(), kk],
            y: DMatrix::identity(1, 1),
            w: vec![],
            q: diag(&[1.0]),
            r: diag(&[1.0]),
            margin: 0.0,
        };
        (model, table)
    }

    #[test]
    fn scalar_radius_matches_input_bound() {
        let (model, table) = scalar_table(-2.0);
        let t =
            synthesize_terminal_set(&model, &table, &DVector::from_element(1, 3.0), &LmiSettings::default())
                .unwrap();
        let radius = 1.0 / t.s[(0, 0)].sqrt();
        assert!((radius - 1.5).abs() < 1e-6, "radius {radius}");
    }

    #[test]
    fn zero_bound_is_infeasible() {
        let (model, table) = scalar_table(-2.0);
        let r =
            synthesize_terminal_set(&model, &table, &DVector::from_element(1, 0.0), &LmiSettings::default());
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn kinematic_terminal_set_shrinks_with_bound() {
        let model = kinematic_polytope(&default_kinematic_bounds(), 0.1);
        let s = LmiSettings::default();
        let g = synthesize_vertex_gains(
            &model,
            &diag(&[1.0, 1.5, 3.0]),
            &diag(&[1.0, 3.0]),
            crate::synthesis::GainObjective::default(),
            &s,
        )
        .unwrap();
        let big = synthesize_terminal_set(&model, &g, &DVector::from_vec(vec![18.0, 1.4]), &s).unwrap();
        let small = synthesize_terminal_set(&model, &g, &DVector::from_vec(vec![9.0, 0.7]), &s).unwrap();
        assert!(big.z.determinant() > small.z.determinant());
        assert!(big.s[(0, 1)].abs() < 1e-6 * big.s.amax());
        assert!(big.s[(0, 2)].abs() < 1e-6 * big.s.amax());
    }
}
