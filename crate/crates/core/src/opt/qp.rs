//! Dense primal-dual interior-point QP solver.
//!
//! Problem form:
//!
//! ```text
//! minimize    0.5 x'Hx + f'x
//! subject to  A_eq x = b_eq
//!             lb <= A_in x <= ub
//!             var_lb <= x <= var_ub
//! ```
//!
//! Infinite bounds are ignored and rows whose two bounds coincide become equalities.
//! Multipliers are signed per row: positive when the upper side is active, negative
//! for the lower side, so that `H x + f + A_eq' y_eq + A_in' y_in + y_box = 0`.

use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    pub var_lb: DVector<f64>,
    pub var_ub: DVector<f64>,
}

impl QuadraticProgram {
    /// Unconstrained problem; add constraints with the `with_*` builders.
    pub fn new(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let n = f.len();
        Self {
            h,
            f,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            lb: DVector::zeros(0),
            ub: DVector::zeros(0),
            var_lb: DVector::from_element(n, f64::NEG_INFINITY),
            var_ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn with_inequalities(mut self, a_in: DMatrix<f64>, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.a_in = a_in;
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn with_bounds(mut self, var_lb: DVector<f64>, var_ub: DVector<f64>) -> Self {
        self.var_lb = var_lb;
        self.var_ub = var_ub;
        self
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    /// Shape, symmetry and positive-semidefiniteness checks.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let bad = |m: &str| Err(Error::Problem(m.to_string()));
        if self.h.shape() != (n, n) {
            return bad("H must be n x n");
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return bad("equality block dimensions disagree");
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.lb.len() || self.lb.len() != self.ub.len() {
            return bad("inequality block dimensions disagree");
        }
        if self.var_lb.len() != n || self.var_ub.len() != n {
            return bad("variable bound length disagrees");
        }
        if self.h.iter().chain(self.f.iter()).any(|v| !v.is_finite()) {
            return bad("cost contains non-finite entries");
        }
        if self.a_eq.iter().chain(self.b_eq.iter()).chain(self.a_in.iter()).any(|v| !v.is_finite()) {
            return bad("constraint matrix contains non-finite entries");
        }
        let bounds = self.lb.iter().zip(self.ub.iter()).chain(self.var_lb.iter().zip(self.var_ub.iter()));
        for (l, u) in bounds {
            if l.is_nan() || u.is_nan() || l > u {
                return bad("inconsistent bounds (lb > ub)");
            }
        }
        let scale = 1.0 + self.h.amax();
        if (&self.h - self.h.transpose()).amax() > 1e-9 * scale {
            return bad("H is not symmetric");
        }
        let shifted = &self.h + DMatrix::identity(n, n) * (1e-9 * scale);
        if Cholesky::new(shifted).is_none() {
            return bad("H is not positive semidefinite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 80 }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub y_in: DVector<f64>,
    pub y_box: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub solve_time: Duration,
}

/// One side of a two-sided constraint written as `sign * (row or x_j) <= h`.
#[derive(Debug, Clone, Copy)]
struct Side {
    target: Target,
    sign: f64,
    h: f64,
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Row(usize),
    Var(usize),
}

struct Layout {
    sides: Vec<Side>,
    /// `(A, b)` of all equalities, including pinned rows and pinned variables.
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Origin of each equality row, used to map multipliers back.
    eq_origin: Vec<Target>,
    n_user_eq: usize,
}

fn layout(qp: &QuadraticProgram) -> Layout {
    let n = qp.n();
    let mut sides = Vec::new();
    let mut extra_rows: Vec<(Target, f64)> = Vec::new();
    for i in 0..qp.lb.len() {
        let (l, u) = (qp.lb[i], qp.ub[i]);
        if l == u {
            extra_rows.push((Target::Row(i), u));
            continue;
        }
        if u.is_finite() {
            sides.push(Side { target: Target::Row(i), sign: 1.0, h: u });
        }
        if l.is_finite() {
            sides.push(Side { target: Target::Row(i), sign: -1.0, h: -l });
        }
    }
    for j in 0..n {
        let (l, u) = (qp.var_lb[j], qp.var_ub[j]);
        if l == u {
            extra_rows.push((Target::Var(j), u));
            continue;
        }
        if u.is_finite() {
            sides.push(Side { target: Target::Var(j), sign: 1.0, h: u });
        }
        if l.is_finite() {
            sides.push(Side { target: Target::Var(j), sign: -1.0, h: -l });
        }
    }
    let p0 = qp.a_eq.nrows();
    let p = p0 + extra_rows.len();
    let mut a = DMatrix::zeros(p, n);
    let mut b = DVector::zeros(p);
    a.rows_mut(0, p0).copy_from(&qp.a_eq);
    b.rows_mut(0, p0).copy_from(&qp.b_eq);
    let mut eq_origin = Vec::with_capacity(extra_rows.len());
    for (k, (t, v)) in extra_rows.into_iter().enumerate() {
        match t {
            Target::Row(i) => a.row_mut(p0 + k).copy_from(&qp.a_in.row(i)),
            Target::Var(j) => a[(p0 + k, j)] = 1.0,
        }
        b[p0 + k] = v;
        eq_origin.push(t);
    }
    Layout { sides, a, b, eq_origin, n_user_eq: p0 }
}

struct Ops<'a> {
    qp: &'a QuadraticProgram,
    sides: &'a [Side],
}

impl Ops<'_> {
    /// `G x` for every side.
    fn g_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let ax = &self.qp.a_in * x;
        DVector::from_iterator(
            self.sides.len(),
            self.sides.iter().map(|s| {
                s.sign
                    * match s.target {
                        Target::Row(i) => ax[i],
                        Target::Var(j) => x[j],
                    }
            }),
        )
    }

    /// `G' v`.
    fn gt_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.qp.n();
        let mut per_row = DVector::zeros(self.qp.a_in.nrows());
        let mut out = DVector::zeros(n);
        for (s, &vi) in self.sides.iter().zip(v.iter()) {
            match s.target {
                Target::Row(i) => per_row[i] += s.sign * vi,
                Target::Var(j) => out[j] += s.sign * vi,
            }
        }
        if !per_row.is_empty() {
            out.gemv_tr(1.0, &self.qp.a_in, &per_row, 1.0);
        }
        out
    }

    /// `H + G' diag(w) G`.
    fn reduced_hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut k = self.qp.h.clone();
        let mut row_w = DVector::zeros(self.qp.a_in.nrows());
        for (s, &wi) in self.sides.iter().zip(w.iter()) {
            match s.target {
                Target::Row(i) => row_w[i] += wi,
                Target::Var(j) => k[(j, j)] += wi,
            }
        }
        if !row_w.is_empty() {
            let mut scaled = self.qp.a_in.clone();
            for (i, mut r) in scaled.row_iter_mut().enumerate() {
                r *= row_w[i];
            }
            k.gemm_tr(1.0, &self.qp.a_in, &scaled, 1.0);
        }
        k
    }

    /// Signed multipliers on the user's rows and variables from side duals.
    fn split_duals(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut y_in = DVector::zeros(self.qp.a_in.nrows());
        let mut y_box = DVector::zeros(self.qp.n());
        for (s, &zi) in self.sides.iter().zip(z.iter()) {
            match s.target {
                Target::Row(i) => y_in[i] += s.sign * zi,
                Target::Var(j) => y_box[j] += s.sign * zi,
            }
        }
        (y_in, y_box)
    }
}

enum Factor {
    Chol(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>, usize),
}

impl Factor {
    fn new(k: DMatrix<f64>, a: &DMatrix<f64>) -> Option<Self> {
        let n = k.nrows();
        let p = a.nrows();
        if p == 0 {
            let reg = 1e-13 * (1.0 + k.amax());
            let mut k = k;
            for i in 0..n {
                k[(i, i)] += reg;
            }
            return Cholesky::new(k).map(Factor::Chol);
        }
        let mut m = DMatrix::zeros(n + p, n + p);
        m.view_mut((0, 0), (n, n)).copy_from(&k);
        m.view_mut((n, 0), (p, n)).copy_from(a);
        m.view_mut((0, n), (n, p)).copy_from(&a.transpose());
        let reg = 1e-13 * (1.0 + k.amax());
        for i in 0..p {
            m[(n + i, n + i)] = -reg;
        }
        let lu = m.lu();
        lu.is_invertible().then_some(Factor::Lu(lu, n))
    }

    /// Solves for `(dx, dy)` given the two right-hand-side blocks.
    fn solve(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        match self {
            Factor::Chol(c) => Some((c.solve(r1), DVector::zeros(0))),
            Factor::Lu(lu, n) => {
                let mut rhs = DVector::zeros(n + r2.len());
                rhs.rows_mut(0, *n).copy_from(r1);
                rhs.rows_mut(*n, r2.len()).copy_from(r2);
                let s = lu.solve(&rhs)?;
                Some((s.rows(0, *n).into_owned(), s.rows(*n, r2.len()).into_owned()))
            }
        }
    }
}

/// Solves a convex QP. Malformed problems return `Err`; numerical outcomes are reported via [`QpStatus`].
/// Newton direction `(dx, dy, ds, dz)`.
type Step = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

pub fn solve_qp(
    qp: &QuadraticProgram,
    warm_start: Option<&DVector<f64>>,
    settings: &QpSettings,
) -> Result<QpSolution> {
    let started = Instant::now();
    qp.validate()?;
    if let Some(w) = warm_start {
        if w.len() != qp.n() {
            return Err(Error::Problem("warm start has wrong length".into()));
        }
    }
    let lay = layout(qp);
    let ops = Ops { qp, sides: &lay.sides };

    let finish = |x: DVector<f64>, y_eq_all: DVector<f64>, z: DVector<f64>, status, iterations| {
        let (mut y_in, mut y_box) = ops.split_duals(&z);
        let y_eq = y_eq_all.rows(0, lay.n_user_eq).into_owned();
        for (k, t) in lay.eq_origin.iter().enumerate() {
            let y = y_eq_all[lay.n_user_eq + k];
            match *t {
                Target::Row(i) => y_in[i] += y,
                Target::Var(j) => y_box[j] += y,
            }
        }
        QpSolution {
            objective: qp.objective(&x),
            x,
            y_eq,
            y_in,
            y_box,
            status,
            iterations,
            solve_time: started.elapsed(),
        }
    };

    // Equality-constrained optimum; accepted outright when it satisfies every inequality.
    if let Some(fac) = Factor::new(qp.h.clone(), &lay.a) {
        if let Some((x, y)) = fac.solve(&(-&qp.f), &lay.b) {
            let gx = ops.g_mul(&x);
            let inside = lay.sides.iter().zip(gx.iter()).all(|(s, g)| *g <= s.h);
            let eq_ok = lay.a.nrows() == 0 || (&lay.a * &x - &lay.b).amax() <= 1e-9 * (1.0 + lay.b.amax());
            if inside && eq_ok && x.iter().all(|v| v.is_finite()) {
                let z = DVector::zeros(lay.sides.len());
                return Ok(finish(x, y, z, QpStatus::Optimal, 0));
            }
        }
    }

    let n = qp.n();
    let m = lay.sides.len();
    let p = lay.a.nrows();
    let h_vec = DVector::from_iterator(m, lay.sides.iter().map(|s| s.h));

    let mut x = warm_start.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut y = DVector::zeros(p);
    let gx = ops.g_mul(&x);
    let mut s = DVector::from_iterator(m, (0..m).map(|i| (h_vec[i] - gx[i]).max(1.0)));
    let mut z = DVector::from_element(m, 1.0);

    let eps = (settings.tol * 1e-3).max(1e-13);
    let scale_p = 1.0 + h_vec.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(lay.b.amax());
    let scale_d = 1.0 + qp.f.amax();
    let mut status = QpStatus::MaxIter;
    let mut iters = 0;

    for it in 0..settings.max_iter {
        iters = it + 1;
        let gx = ops.g_mul(&x);
        let hx = &qp.h * &x;
        let mut r_d = &hx + &qp.f + ops.gt_mul(&z);
        if p > 0 {
            r_d.gemv_tr(1.0, &lay.a, &y, 1.0);
        }
        let r_p = if p > 0 { &lay.a * &x - &lay.b } else { DVector::zeros(0) };
        let r_g = &gx + &s - &h_vec;
        let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };

        let rd_n = r_d.amax() / (scale_d + hx.amax());
        let rp_n = r_p.amax().max(r_g.amax()) / scale_p;
        if rd_n <= eps && rp_n <= eps && mu <= eps * 0.1 * (1.0 + qp.objective(&x).abs()) {
            status = QpStatus::Optimal;
            break;
        }
        if z.amax() > 1e13 * (1.0 + scale_d) {
            status = QpStatus::Infeasible;
            break;
        }

        let w = DVector::from_iterator(m, (0..m).map(|i| z[i] / s[i]));
        let Some(fac) = Factor::new(ops.reduced_hessian(&w), &lay.a) else {
            status = QpStatus::MaxIter;
            break;
        };

        // r_sz is the complementarity residual target; returns (dx, dy, ds, dz).
        let direction = |r_sz: &DVector<f64>| -> Option<Step> {
            // dz = S^-1 (-r_sz + Z r_g) + W G dx
            let t = DVector::from_iterator(m, (0..m).map(|i| (-r_sz[i] + z[i] * r_g[i]) / s[i]));
            let rhs1 = -&r_d - ops.gt_mul(&t);
            let rhs2 = -&r_p;
            let (dx, dy) = fac.solve(&rhs1, &rhs2)?;
            let gdx = ops.g_mul(&dx);
            let ds = -&r_g - &gdx;
            let dz = DVector::from_iterator(m, (0..m).map(|i| t[i] + w[i] * gdx[i]));
            Some((dx, dy, ds, dz))
        };
        let max_step = |ds: &DVector<f64>, dz: &DVector<f64>| {
            let mut a = 1.0f64;
            for i in 0..m {
                if ds[i] < 0.0 {
                    a = a.min(-s[i] / ds[i]);
                }
                if dz[i] < 0.0 {
                    a = a.min(-z[i] / dz[i]);
                }
            }
            a
        };

        let r_aff = s.component_mul(&z);
        let Some((_, _, ds_a, dz_a)) = direction(&r_aff) else {
            break;
        };
        let a_aff = max_step(&ds_a, &dz_a);
        let sigma = if m > 0 {
            let mu_aff = (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / m as f64;
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };
        let r_cor = DVector::from_iterator(m, (0..m).map(|i| r_aff[i] + ds_a[i] * dz_a[i] - sigma * mu));
        let Some((dx, dy, ds, dz)) = direction(&r_cor) else {
            break;
        };
        let alpha = (0.99 * max_step(&ds, &dz)).min(1.0);

        // Near the optimum the reduced Hessian is ill-conditioned and the residuals
        // plateau; stop once steps no longer move the iterate.
        let moved = (&dx * alpha).amax() > 1e-14 * (1.0 + x.amax());
        let finite = [&dx, &dy, &ds, &dz].iter().all(|d| d.iter().all(|v| v.is_finite()));
        if !finite || !moved {
            if rd_n <= settings.tol && rp_n <= settings.tol && mu <= settings.tol {
                status = QpStatus::Optimal;
            }
            break;
        }
        x += &dx * alpha;
        y += &dy * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
    }

    if status == QpStatus::MaxIter {
        let r_g = ops.g_mul(&x) + &s - &h_vec;
        let r_p = if p > 0 { (&lay.a * &x - &lay.b).amax() } else { 0.0 };
        if r_g.amax().max(r_p) / scale_p > 1e-4 {
            status = QpStatus::Infeasible;
        }
    }
    Ok(finish(x, y, z, status, iters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opt::kkt::kkt_residuals;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn unconstrained_identity() {
        let qp = QuadraticProgram::new(DMatrix::identity(3, 3), dv(&[1.0, -2.0, 3.0]));
        let sol = solve_qp(&qp, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x - dv(&[-1.0, 2.0, -3.0])).amax() < 1e-12);
    }

    #[test]
    fn lower_bounds_active() {
        // min |x|^2 s.t. x >= 1
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
            .with_bounds(dv(&[1.0, 1.0]), DVector::from_element(2, f64::INFINITY));
        let sol = solve_qp(&qp, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((&sol.x - dv(&[1.0, 1.0])).amax() < 1e-8);
        assert!(sol.y_box.iter().all(|&y| y < 0.0));
        assert!(kkt_residuals(&qp, &sol).passes(1e-6));
    }

    #[test]
    fn one_step_scalar_mpc() {
        // x1 = x0 + u, cost x1^2 + u^2 with x0 = 3 gives u = -x0/2
        let x0 = 3.0;
        let qp = QuadraticProgram::new(DMatrix::from_element(1, 1, 4.0), dv(&[2.0 * x0]));
        let sol = solve_qp(&qp, None, &QpSettings::default()).unwrap();
        assert!((sol.x[0] + x0 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn general_rows_and_equalities() {
        // min (x0-2)^2 + (x1-2)^2 + x2^2, x0 + x1 <= 2, x2 = 0.5, -1 <= x0 - x1 <= 1
        let h = DMatrix::identity(3, 3) * 2.0;
        let f = dv(&[-4.0, -4.0, 0.0]);
        let a_in = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 1.0, -1.0, 0.0]);
        let qp = QuadraticProgram::new(h, f)
            .with_inequalities(a_in, dv(&[f64::NEG_INFINITY, -1.0]), dv(&[2.0, 1.0]))
            .with_equalities(DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]), dv(&[0.5]));
        let sol = solve_qp(&qp, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((&sol.x - dv(&[1.0, 1.0, 0.5])).amax() < 1e-7);
        assert!((sol.y_in[0] - 2.0).abs() < 1e-6);
        assert!(kkt_residuals(&qp, &sol).passes(1e-6));
    }

    #[test]
    fn pinned_bounds_become_equalities() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2), dv(&[1.0, 1.0]))
            .with_bounds(dv(&[0.3, -5.0]), dv(&[0.3, 5.0]));
        let sol = solve_qp(&qp, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 0.3).abs() < 1e-12);
        assert!((sol.x[1] + 1.0).abs() < 1e-9);
        assert!(kkt_residuals(&qp, &sol).passes(1e-6));
    }

    #[test]
    fn infeasible_detected() {
        // x >= 1 and x <= -1 through two rows
        let a_in = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let qp = QuadraticProgram::new(DMatrix::identity(1, 1), dv(&[0.0])).with_inequalities(
            a_in,
            dv(&[1.0, f64::NEG_INFINITY]),
            dv(&[f64::INFINITY, -1.0]),
        );
        let sol = solve_qp(&qp, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let qp = QuadraticProgram::new(h, DVector::zeros(2));
        assert!(matches!(solve_qp(&qp, None, &QpSettings::default()), Err(Error::Problem(_))));
    }

    #[test]
    fn warm_start_gives_same_answer() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let qp = QuadraticProgram::new(h, dv(&[-1.0, -1.0])).with_bounds(dv(&[-0.1, -0.1]), dv(&[0.1, 0.2]));
        let cold = solve_qp(&qp, None, &QpSettings::default()).unwrap();
        let warm = solve_qp(&qp, Some(&cold.x), &QpSettings::default()).unwrap();
        assert!((cold.x - warm.x).amax() < 1e-7);
    }
}
