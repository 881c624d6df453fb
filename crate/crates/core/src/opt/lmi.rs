//! Small dense SDP solver for offline LMI synthesis.
//!
//! Constraints are affine symmetric matrices `F(x) = F_0 + sum_k x_k F_k` that must be
//! positive definite. A phase-I problem finds a strictly feasible point, then a
//! log-barrier path-following method optimizes a linear or log-det objective. A box
//! `|x_k| <= R` keeps both phases bounded.

use std::collections::BTreeMap;

use log::debug;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Matrix whose entries are affine in the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    pub constant: DMatrix<f64>,
    pub terms: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineMatrix {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self { constant: m, terms: BTreeMap::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    /// `x_id * m`.
    pub fn scaled_var(id: usize, m: DMatrix<f64>) -> Self {
        let mut terms = BTreeMap::new();
        let shape = m.shape();
        terms.insert(id, m);
        Self { constant: DMatrix::zeros(shape.0, shape.1), terms }
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn transpose(&self) -> Self {
        Self {
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(|(k, m)| (*k, m.transpose())).collect(),
        }
    }

    /// `L * self`.
    pub fn left_mul(&self, l: &DMatrix<f64>) -> Self {
        Self { constant: l * &self.constant, terms: self.terms.iter().map(|(k, m)| (*k, l * m)).collect() }
    }

    /// `self * R`.
    pub fn right_mul(&self, r: &DMatrix<f64>) -> Self {
        Self { constant: &self.constant * r, terms: self.terms.iter().map(|(k, m)| (*k, m * r)).collect() }
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { constant: &self.constant * a, terms: self.terms.iter().map(|(k, m)| (*k, m * a)).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.constant.shape(), other.constant.shape(), "affine shape mismatch");
        let mut out = self.clone();
        out.constant += &other.constant;
        for (k, m) in &other.terms {
            out.terms.entry(*k).and_modify(|e| *e += m).or_insert_with(|| m.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Assembles a block matrix; every block in a block-row shares its row count.
    pub fn block(rows: &[Vec<AffineMatrix>]) -> Self {
        let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
        let widths: Vec<usize> = rows[0].iter().map(AffineMatrix::ncols).collect();
        let (h, w) = (heights.iter().sum(), widths.iter().sum());
        let mut out = Self::zeros(h, w);
        let mut r0 = 0;
        for (bi, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), widths.len(), "ragged block row");
            let mut c0 = 0;
            for (bj, blk) in row.iter().enumerate() {
                assert_eq!(blk.nrows(), heights[bi], "block height mismatch");
                assert_eq!(blk.ncols(), widths[bj], "block width mismatch");
                out.constant.view_mut((r0, c0), blk.constant.shape()).copy_from(&blk.constant);
                for (k, m) in &blk.terms {
                    let e = out.terms.entry(*k).or_insert_with(|| DMatrix::zeros(h, w));
                    e.view_mut((r0, c0), m.shape()).copy_from(m);
                }
                c0 += widths[bj];
            }
            r0 += heights[bi];
        }
        out
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (k, m) in &self.terms {
            if x[*k] != 0.0 {
                {
                    let w = x[*k];
                    out.zip_apply(m, |a, b| *a += w * b);
                }
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        let sym = |m: &DMatrix<f64>| {
            m.nrows() == m.ncols() && (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax())
        };
        sym(&self.constant) && self.terms.values().all(sym)
    }
}

/// A matrix of decision variables, possibly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixVar {
    pub rows: usize,
    pub cols: usize,
    /// Variable id of entry `(i, j)`, stored row-major.
    ids: Vec<usize>,
}

impl MatrixVar {
    pub fn id(&self, i: usize, j: usize) -> usize {
        self.ids[i * self.cols + j]
    }

    pub fn affine(&self) -> AffineMatrix {
        let mut out = AffineMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let id = self.id(i, j);
                out.terms.entry(id).or_insert_with(|| DMatrix::zeros(self.rows, self.cols))[(i, j)] = 1.0;
            }
        }
        out
    }

    pub fn value(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| x[self.id(i, j)])
    }
}

/// Allocator of scalar decision variables.
#[derive(Debug, Clone, Default)]
pub struct DecisionVars {
    count: usize,
}

impl DecisionVars {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn scalar(&mut self) -> usize {
        self.count += 1;
        self.count - 1
    }

    pub fn symmetric(&mut self, n: usize) -> MatrixVar {
        let mut ids = vec![0; n * n];
        for i in 0..n {
            for j in i..n {
                let id = self.scalar();
                ids[i * n + j] = id;
                ids[j * n + i] = id;
            }
        }
        MatrixVar { rows: n, cols: n, ids }
    }

    pub fn full(&mut self, rows: usize, cols: usize) -> MatrixVar {
        let ids = (0..rows * cols).map(|_| self.scalar()).collect();
        MatrixVar { rows, cols, ids }
    }
}

/// Named strict LMI `F(x) > 0`.
#[derive(Debug, Clone)]
pub struct LmiConstraint {
    pub name: String,
    pub f: AffineMatrix,
}

impl LmiConstraint {
    pub fn positive(name: impl Into<String>, f: AffineMatrix) -> Self {
        Self { name: name.into(), f }
    }

    /// `F(x) < 0`.
    pub fn negative(name: impl Into<String>, f: AffineMatrix) -> Self {
        Self { name: name.into(), f: f.scale(-1.0) }
    }
}

#[derive(Debug, Clone)]
pub enum LmiObjective {
    Feasibility,
    /// Minimize `c'x`.
    Minimize(DVector<f64>),
    /// Maximize `log det G(x)`.
    MaximizeLogDet(AffineMatrix),
}

#[derive(Debug, Clone)]
pub struct LmiProblem {
    pub n_vars: usize,
    pub constraints: Vec<LmiConstraint>,
    pub objective: LmiObjective,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmiSettings {
    /// Minimum-eigenvalue tolerance of the post-solve check.
    pub feas_tol: f64,
    /// Target duality-gap bound.
    pub gap_tol: f64,
    pub box_radius: f64,
    pub mu: f64,
    pub max_newton: usize,
}

impl Default for LmiSettings {
    fn default() -> Self {
        Self { feas_tol: 1e-8, gap_tol: 1e-8, box_radius: 1e4, mu: 10.0, max_newton: 5000 }
    }
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub x: DVector<f64>,
    /// Smallest eigenvalue of each constraint, in problem order.
    pub min_eigs: Vec<f64>,
    pub objective: f64,
    /// Gap bound reached when the path-following stopped.
    pub gap: f64,
    pub newton_steps: usize,
}

struct Block {
    dim: usize,
    c: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

impl Block {
    fn from_affine(a: &AffineMatrix) -> Self {
        Self {
            dim: a.nrows(),
            c: a.constant.clone(),
            terms: a.terms.iter().map(|(k, m)| (*k, m.clone())).collect(),
        }
    }

    fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.c.clone();
        for (k, m) in &self.terms {
            if x[*k] != 0.0 {
                {
                    let w = x[*k];
                    out.zip_apply(m, |a, b| *a += w * b);
                }
            }
        }
        out
    }

    fn chol(&self, x: &DVector<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
        Cholesky::new(self.eval(x))
    }

    /// Adds `-w log det F` contributions to gradient and Hessian; returns the barrier value.
    fn accumulate(
        &self,
        x: &DVector<f64>,
        w: f64,
        g: &mut DVector<f64>,
        h: &mut DMatrix<f64>,
    ) -> Option<f64> {
        let ch = self.chol(x)?;
        let logdet: f64 = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let finv = ch.inverse();
        let ms: Vec<(usize, DMatrix<f64>)> = self.terms.iter().map(|(k, fk)| (*k, &finv * fk)).collect();
        let mts: Vec<DMatrix<f64>> = ms.iter().map(|(_, m)| m.transpose()).collect();
        for (a, (ka, ma)) in ms.iter().enumerate() {
            g[*ka] -= w * ma.trace();
            for (b, (kb, _)) in ms.iter().enumerate().skip(a) {
                let v = w * ma.dot(&mts[b]);
                h[(*ka, *kb)] += v;
                if a != b {
                    h[(*kb, *ka)] += v;
                }
            }
        }
        Some(-w * logdet)
    }

    fn value(&self, x: &DVector<f64>, w: f64) -> Option<f64> {
        let ch = self.chol(x)?;
        Some(-w * 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    fn min_eig(&self, x: &DVector<f64>) -> f64 {
        SymmetricEigen::new(self.eval(x)).eigenvalues.min()
    }
}

/// `t * (c'x - log det G) - sum log det F_j - sum log(R^2 - x_k^2)`.
struct Barrier<'a> {
    blocks: &'a [Block],
    c: &'a DVector<f64>,
    logdet: Option<&'a Block>,
    radius: f64,
    n: usize,
}

impl Barrier<'_> {
    fn order(&self) -> f64 {
        (self.blocks.iter().map(|b| b.dim).sum::<usize>() + 2 * self.n + self.logdet.map_or(0, |b| b.dim))
            as f64
    }

    fn value(&self, x: &DVector<f64>, t: f64) -> Option<f64> {
        let mut v = t * self.c.dot(x);
        for b in self.blocks {
            v += b.value(x, 1.0)?;
        }
        if let Some(b) = self.logdet {
            v += b.value(x, t)?;
        }
        let r2 = self.radius * self.radius;
        for xi in x.iter() {
            let d = r2 - xi * xi;
            if d <= 0.0 {
                return None;
            }
            v -= d.ln();
        }
        Some(v)
    }

    fn derivatives(&self, x: &DVector<f64>, t: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let mut g = self.c * t;
        let mut h = DMatrix::zeros(self.n, self.n);
        for b in self.blocks {
            b.accumulate(x, 1.0, &mut g, &mut h)?;
        }
        if let Some(b) = self.logdet {
            b.accumulate(x, t, &mut g, &mut h)?;
        }
        let r2 = self.radius * self.radius;
        for i in 0..self.n {
            let d = r2 - x[i] * x[i];
            g[i] += 2.0 * x[i] / d;
            h[(i, i)] += 2.0 / d + 4.0 * x[i] * x[i] / (d * d);
        }
        Some((g, h))
    }

    /// Damped Newton centering. `early` may stop it after any accepted step.
    fn center(
        &self,
        x: &mut DVector<f64>,
        t: f64,
        budget: &mut usize,
        early: &dyn Fn(&DVector<f64>) -> bool,
    ) -> CenterOutcome {
        loop {
            if *budget == 0 {
                return CenterOutcome::Budget;
            }
            *budget -= 1;
            let Some((g, h)) = self.derivatives(x, t) else {
                return CenterOutcome::Stalled;
            };
            let scale = 1.0 + h.diagonal().amax();
            let mut reg = 0.0;
            let dx = loop {
                let mut hr = h.clone();
                for i in 0..self.n {
                    hr[(i, i)] += reg;
                }
                if let Some(ch) = Cholesky::new(hr) {
                    break ch.solve(&(-&g));
                }
                reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
                if reg > scale {
                    return CenterOutcome::Stalled;
                }
            };
            let dec2 = -g.dot(&dx);
            if dec2 / 2.0 <= 1e-10 {
                return CenterOutcome::Centered;
            }
            let Some(f0) = self.value(x, t) else {
                return CenterOutcome::Stalled;
            };
            let mut step = 1.0;
            loop {
                let trial = &*x + &dx * step;
                if let Some(f1) = self.value(&trial, t) {
                    if f1 <= f0 - 0.25 * step * dec2 {
                        *x = trial;
                        break;
                    }
                }
                step *= 0.5;
                if step < 1e-14 {
                    return CenterOutcome::Stalled;
                }
            }
            if early(x) {
                return CenterOutcome::Early;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CenterOutcome {
    Centered,
    Early,
    Stalled,
    Budget,
}

/// Solves `problem`; `Err(Error::Infeasible)` when no strictly feasible point exists.
pub fn solve_lmi(problem: &LmiProblem, settings: &LmiSettings) -> Result<LmiSolution> {
    let n = problem.n_vars;
    for c in &problem.constraints {
        if !c.f.is_symmetric() {
            return Err(Error::Problem(format!("constraint '{}' is not symmetric", c.name)));
        }
        if c.f.terms.keys().any(|&k| k >= n) {
            return Err(Error::Problem(format!("constraint '{}' references unknown variable", c.name)));
        }
    }
    let blocks: Vec<Block> = problem.constraints.iter().map(|c| Block::from_affine(&c.f)).collect();
    let mut budget = settings.max_newton;

    // Phase I over (x, s): F_j(x) + s I > 0, minimize s.
    let s_id = n;
    let p1_blocks: Vec<Block> = blocks
        .iter()
        .map(|b| {
            let mut nb = Block { dim: b.dim, c: b.c.clone(), terms: b.terms.clone() };
            nb.terms.push((s_id, DMatrix::identity(b.dim, b.dim)));
            nb
        })
        .collect();
    let mut x1 = DVector::zeros(n + 1);
    let worst = blocks.iter().map(|b| b.min_eig(&x1)).fold(f64::INFINITY, f64::min);
    let mut x = if worst > 1e-6 {
        DVector::zeros(n)
    } else {
        x1[s_id] = 1.0 - worst.min(0.0);
        let mut c1 = DVector::zeros(n + 1);
        c1[s_id] = 1.0;
        let radius = settings.box_radius.max(2.0 * x1[s_id]);
        let bar = Barrier { blocks: &p1_blocks, c: &c1, logdet: None, radius, n: n + 1 };
        let m = bar.order();
        let mut t = 1.0;
        let early = |z: &DVector<f64>| z[s_id] < -1e-3;
        loop {
            let out = bar.center(&mut x1, t, &mut budget, &early);
            let s = x1[s_id];
            debug!("lmi phase I: t = {t:.1e}, s = {s:.3e}, outcome {out:?}");
            if s < 0.0 && out != CenterOutcome::Stalled {
                break;
            }
            if s - m / t > -settings.feas_tol || out == CenterOutcome::Budget || out == CenterOutcome::Stalled
            {
                let culprit = blocks
                    .iter()
                    .zip(&problem.constraints)
                    .map(|(b, c)| (b.min_eig(&x1.rows(0, n).into_owned()), &c.name))
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .map(|(_, name)| name.clone())
                    .unwrap_or_default();
                return Err(Error::Infeasible(format!(
                    "no strictly feasible point (phase-I bound {:.3e}); tightest constraint '{culprit}'",
                    s - m / t
                )));
            }
            t *= settings.mu;
        }
        x1.rows(0, n).into_owned()
    };

    // Phase II.
    let (c, logdet_block) = match &problem.objective {
        LmiObjective::Feasibility => (DVector::zeros(n), None),
        LmiObjective::Minimize(c) => {
            if c.len() != n {
                return Err(Error::Problem("objective length does not match variable count".into()));
            }
            (c.clone(), None)
        }
        LmiObjective::MaximizeLogDet(g) => {
            if !g.is_symmetric() {
                return Err(Error::Problem("log-det objective matrix is not symmetric".into()));
            }
            (DVector::zeros(n), Some(Block::from_affine(g)))
        }
    };
    if let Some(g) = &logdet_block {
        if g.chol(&x).is_none() {
            // The log-det argument must also be positive definite; treat it as a constraint first.
            let mut with_g = problem.clone();
            with_g.constraints.push(LmiConstraint::positive(
                "log-det argument",
                match &problem.objective {
                    LmiObjective::MaximizeLogDet(a) => a.clone(),
                    _ => unreachable!(),
                },
            ));
            with_g.objective = LmiObjective::Feasibility;
            x = solve_lmi(&with_g, settings)?.x;
        }
    }
    let bar =
        Barrier { blocks: &blocks, c: &c, logdet: logdet_block.as_ref(), radius: settings.box_radius, n };
    let m = bar.order();
    let never = |_: &DVector<f64>| false;
    let mut t = 1.0;
    let mut gap;
    if matches!(problem.objective, LmiObjective::Feasibility) {
        bar.center(&mut x, 0.0, &mut budget, &never);
        gap = 0.0;
    } else {
        loop {
            let out = bar.center(&mut x, t, &mut budget, &never);
            gap = m / t;
            debug!("lmi phase II: t = {t:.1e}, gap <= {gap:.2e}, outcome {out:?}");
            if gap <= settings.gap_tol || out == CenterOutcome::Budget || out == CenterOutcome::Stalled {
                break;
            }
            t *= settings.mu;
        }
    }

    let min_eigs: Vec<f64> = blocks.iter().map(|b| b.min_eig(&x)).collect();
    for (e, con) in min_eigs.iter().zip(&problem.constraints) {
        if *e < -settings.feas_tol {
            return Err(Error::Certification(format!(
                "constraint '{}' violated after solve (min eigenvalue {e:.3e})",
                con.name
            )));
        }
    }
    let objective = match (&problem.objective, &logdet_block) {
        (LmiObjective::Minimize(c), _) => c.dot(&x),
        (LmiObjective::MaximizeLogDet(_), Some(b)) => -b.value(&x, 1.0).unwrap_or(f64::NEG_INFINITY),
        _ => 0.0,
    };
    Ok(LmiSolution { x, min_eigs, objective, gap, newton_steps: settings.max_newton - budget })
}
