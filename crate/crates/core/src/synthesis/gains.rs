use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{MembershipWeights, PolytopicModel, SchedulingPoint};
use crate::opt::{
    solve_lmi, AffineMatrix, DecisionVars, LmiConstraint, LmiObjective, LmiProblem, LmiSettings,
};

/// Vertex state-feedback gains `u = K_i x` with the LMI certificate that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTable {
    #[serde(with = "crate::serde_mat::matrices")]
    pub gains: Vec<DMatrix<f64>>,
    /// Common Lyapunov matrix, `Y^-1` bounds the closed-loop cost-to-go.
    #[serde(with = "crate::serde_mat::matrix")]
    pub y: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::matrices")]
    pub w: Vec<DMatrix<f64>>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub q: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub r: DMatrix<f64>,
    /// Largest `t` with `Y >= t Q^-1` that the solver reached.
    pub margin: f64,
}

impl GainTable {
    pub fn vertex_count(&self) -> usize {
        self.gains.len()
    }

    pub fn blend(&self, w: &MembershipWeights) -> DMatrix<f64> {
        w.blend(&self.gains)
    }

    /// Gain at a scheduling point of `model`'s box, saturated into it.
    pub fn at(&self, model: &PolytopicModel, point: &SchedulingPoint) -> DMatrix<f64> {
        self.blend(&model.weights(point))
    }

    /// Closed-loop vertex matrices `A_i + B_i K_i`.
    pub fn closed_loop(&self, model: &PolytopicModel) -> Vec<DMatrix<f64>> {
        model.vertex_a.iter().zip(&model.vertex_b).zip(&self.gains).map(|((a, b), k)| a + b * k).collect()
    }
}

/// Lower Cholesky factor of a symmetric positive definite weight.
pub(crate) fn weight_factor(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Cholesky::new(m.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::Config(format!("{what} must be symmetric positive definite")))
}

pub(crate) fn invert(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone().try_inverse().ok_or_else(|| Error::Config(format!("{what} is singular")))
}

pub fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

/// `1 / lambda_max(P)` for the Riccati solution of the vertex-averaged model in
/// weight-normalised coordinates; 1 when the iteration does not settle.
fn riccati_scale(
    vertex_a: &[DMatrix<f64>],
    lq: &DMatrix<f64>,
    lq_inv_t: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> f64 {
    let n = lq.nrows();
    let mean = vertex_a.iter().fold(DMatrix::zeros(n, n), |acc, a| acc + a) / vertex_a.len() as f64;
    let a = lq.transpose() * mean * lq_inv_t;
    let eye_m = DMatrix::identity(b.ncols(), b.ncols());
    let mut p = DMatrix::identity(n, n);
    for _ in 0..200_000 {
        let pb = &p * b;
        let Some(g) = (&eye_m + b.transpose() * &pb).try_inverse() else {
            return 1.0;
        };
        let atp = a.transpose() * &p;
        let next = DMatrix::identity(n, n) + &atp * &a - &atp * b * g * pb.transpose() * &a;
        let delta = (&next - &p).amax();
        p = (&next + next.transpose()) * 0.5;
        if !p.iter().all(|v| v.is_finite()) {
            return 1.0;
        }
        if delta <= 1e-10 * p.amax() {
            let lmax = nalgebra::SymmetricEigen::new(p).eigenvalues.max();
            return if lmax.is_finite() && lmax > 0.0 { 1.0 / lmax } else { 1.0 };
        }
    }
    1.0
}

/// `X` carries `X_SCALE^2 Y^-1` so it stays inside the solver's box when `Y` is poorly conditioned.
const X_SCALE: f64 = 1e-2;

/// What the vertex-gain LMI optimizes among the feasible certificates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainObjective {
    /// Maximize `t` with `Y >= t Q^-1`: the best worst-case ratio of cost-to-go to stage cost.
    #[default]
    WorstCaseRatio,
    /// Minimize `trace(X)` with `X >= Y^-1` in weight-normalised coordinates: the
    /// average cost-to-go bound. Reduces to the Riccati gain for a single vertex.
    TraceBound,
}

/// Guaranteed-cost vertex LQR with a common `Y`.
///
/// For every vertex,
///
/// ```text
/// [ Y        (A_i Y + B W_i)'  Y      W_i'  ]
/// [ A_i Y+BW_i   Y             0      0     ]  >= 0
/// [ Y            0             Q^-1   0     ]
/// [ W_i          0             0      R^-1  ]
/// ```
///
/// and `K_i = W_i Y^-1`. The problem is solved in coordinates where both weights are
/// identities; `objective` picks the certificate.
pub fn synthesize_vertex_gains(
    model: &PolytopicModel,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    objective: GainObjective,
    settings: &LmiSettings,
) -> Result<GainTable> {
    let n = model.n_states();
    let m = model.n_inputs();
    if !model.input_matrix_is_constant() {
        return Err(Error::Config(
            "vertex gain synthesis needs a constant input matrix; augment the model first".into(),
        ));
    }
    if q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Config(format!(
            "weight shapes {:?}/{:?} do not match a {n}-state, {m}-input model",
            q.shape(),
            r.shape()
        )));
    }
    // x = L_q^-T xs, u = L_r^-T us
    let lq = weight_factor(q, "state weight")?;
    let lr = weight_factor(r, "input weight")?;
    let lq_inv_t = invert(&lq.transpose(), "state weight factor")?;
    let lr_inv_t = invert(&lr.transpose(), "input weight factor")?;
    let b_s = lq.transpose() * &model.vertex_b[0] * &lr_inv_t;

    // Y = gamma * Yh leaves the feasible gains unchanged and keeps Yh near unit size.
    let gamma = riccati_scale(&model.vertex_a, &lq, &lq_inv_t, &b_s);
    let inv_gamma = 1.0 / gamma;

    let mut vars = DecisionVars::new();
    let y = vars.symmetric(n);
    let ws: Vec<_> = (0..model.vertex_count()).map(|_| vars.full(m, n)).collect();
    let tau = vars.scalar();
    let ya = y.affine();

    let mut constraints = Vec::with_capacity(model.vertex_count() + 1);
    for (i, a) in model.vertex_a.iter().enumerate() {
        let a_s = lq.transpose() * a * &lq_inv_t;
        let wa = ws[i].affine();
        let acl = ya.left_mul(&a_s).add(&wa.left_mul(&b_s));
        let z = |r, c| AffineMatrix::zeros(r, c);
        let f = AffineMatrix::block(&[
            vec![ya.clone(), acl.transpose(), ya.clone(), wa.transpose()],
            vec![acl.clone(), ya.clone(), z(n, n), z(n, m)],
            vec![ya.clone(), z(n, n), AffineMatrix::identity(n).scale(inv_gamma), z(n, m)],
            vec![wa.clone(), z(m, n), z(m, n), AffineMatrix::identity(m).scale(inv_gamma)],
        ]);
        constraints.push(LmiConstraint::positive(format!("guaranteed-cost vertex {i}"), f));
    }
    constraints.push(LmiConstraint::positive(
        "Y >= t Q^-1",
        ya.sub(&AffineMatrix::scaled_var(tau, DMatrix::identity(n, n))),
    ));
    let x_bound = (objective == GainObjective::TraceBound).then(|| vars.symmetric(n));
    let mut c = DVector::zeros(vars.count());
    match &x_bound {
        None => c[tau] = -1.0,
        Some(x) => {
            constraints.push(LmiConstraint::positive(
                "X >= Y^-1",
                AffineMatrix::block(&[
                    vec![x.affine(), AffineMatrix::identity(n).scale(X_SCALE)],
                    vec![AffineMatrix::identity(n).scale(X_SCALE), ya.clone()],
                ]),
            ));
            for i in 0..n {
                c[x.id(i, i)] = 1.0;
            }
        }
    }
    let problem = LmiProblem { n_vars: vars.count(), constraints, objective: LmiObjective::Minimize(c) };
    let sol = solve_lmi(&problem, settings).map_err(|e| match e {
        Error::Infeasible(msg) => Error::Infeasible(format!(
            "vertex gain LMI (Q diag {:?}, R diag {:?}, bounds {:?}): {msg}",
            q.diagonal().as_slice(),
            r.diagonal().as_slice(),
            model.bounds.0
        )),
        other => other,
    })?;

    let y_s = y.value(&sol.x) * gamma;
    let y_s_inv = invert(&y_s, "Lyapunov matrix")?;
    // Y = D Ys D', W_i = E Ws_i D', K_i = E Ws_i Ys^-1 D^-1 with D = L_q^-T, E = L_r^-T
    let y_phys = &lq_inv_t * &y_s * lq_inv_t.transpose();
    let mut gains = Vec::with_capacity(ws.len());
    let mut w_phys = Vec::with_capacity(ws.len());
    for wv in &ws {
        let w_s = wv.value(&sol.x) * gamma;
        gains.push(&lr_inv_t * &w_s * &y_s_inv * lq.transpose());
        w_phys.push(&lr_inv_t * &w_s * lq_inv_t.transpose());
    }
    if gains.iter().any(|k| k.iter().any(|v| !v.is_finite())) {
        return Err(Error::Certification("non-finite vertex gain".into()));
    }
    Ok(GainTable { gains, y: y_phys, w: w_phys, q: q.clone(), r: r.clone(), margin: sol.x[tau] * gamma })
}
