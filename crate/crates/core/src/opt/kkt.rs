//! KKT residuals of a QP solution, computed from the problem data alone.

use nalgebra::DVector;

use super::qp::{QpSolution, QuadraticProgram};

/// Scaled residuals; each should be near zero at an optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    /// Largest multiplier pointing at an infinite bound.
    pub dual_sign: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity).max(self.dual_sign)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// `(violation, complementarity, sign error)` of one two-sided constraint `lb <= v <= ub`.
fn side_terms(v: f64, lb: f64, ub: f64, y: f64) -> (f64, f64, f64) {
    let viol = (v - ub).max(lb - v).max(0.0) / (1.0 + lb.abs().min(ub.abs()).min(1e12));
    let (slack, sign_err) = if y > 0.0 {
        (ub - v, if ub.is_finite() { 0.0 } else { y })
    } else if y < 0.0 {
        (v - lb, if lb.is_finite() { 0.0 } else { -y })
    } else {
        (0.0, 0.0)
    };
    let comp = if slack.is_finite() { (y.abs() * slack.abs()) / (1.0 + y.abs()) } else { 0.0 };
    (viol, comp, sign_err)
}

pub fn kkt_residuals(qp: &QuadraticProgram, sol: &QpSolution) -> KktResiduals {
    let x = &sol.x;
    let hx = &qp.h * x;
    let eq_t = qp.a_eq.transpose() * &sol.y_eq;
    let in_t = qp.a_in.transpose() * &sol.y_in;
    let grad = &hx + &qp.f + &eq_t + &in_t + &sol.y_box;
    let scale = 1.0
        + [hx.amax(), qp.f.amax(), eq_t.amax(), in_t.amax(), sol.y_box.amax()]
            .into_iter()
            .fold(0.0, f64::max);
    let stationarity = grad.amax() / scale;

    let mut primal = 0.0f64;
    if qp.a_eq.nrows() > 0 {
        let r: DVector<f64> = &qp.a_eq * x - &qp.b_eq;
        primal = r.amax() / (1.0 + qp.b_eq.amax());
    }
    let mut complementarity = 0.0f64;
    let mut dual_sign = 0.0f64;
    let ax = &qp.a_in * x;
    let rows = (0..ax.len()).map(|i| (ax[i], qp.lb[i], qp.ub[i], sol.y_in[i]));
    let vars = (0..x.len()).map(|j| (x[j], qp.var_lb[j], qp.var_ub[j], sol.y_box[j]));
    for (v, lb, ub, y) in rows.chain(vars) {
        let (viol, comp, sign) = side_terms(v, lb, ub, y);
        primal = primal.max(viol);
        complementarity = complementarity.max(comp);
        dual_sign = dual_sign.max(sign);
    }
    KktResiduals { stationarity, primal, complementarity, dual_sign }
}
