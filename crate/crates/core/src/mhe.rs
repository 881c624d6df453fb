//! Moving-horizon estimation of `[v, alpha, omega]` with unknown-input decoupling, and
//! the algebraic friction-force estimate built on it.
//!
//! With `Theta = (C E)^+` the projector `I - E Theta C` removes the friction channel from
//! the model, and the measured part of the next state re-enters through `E Theta y`:
//!
//! ```text
//! x_{j+1} = (I - E Theta C) (A_j x_j + B_j u_j) + E Theta y_{j+1} + w_j
//! y_j     = C x_j + s_j
//! ```
//!
//! The window QP keeps only the states as decision variables; `w` and `s` are substituted.

use std::collections::VecDeque;
use std::time::Duration;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    DynamicEvaluation, DynamicInput, DynamicModel, DynamicState, PolytopicModel, SchedulingPoint,
};
use crate::opt::{solve_qp, QpSettings, QpStatus, QuadraticProgram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MheConfig {
    pub horizon: usize,
    /// Weight on the process residual `w`.
    pub q: Vec<f64>,
    /// Weight on the output residual `s`.
    pub r: Vec<f64>,
    /// Arrival-cost weight.
    pub p: Vec<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    /// Pole of the first-order filter applied to the friction estimate.
    pub friction_pole: f64,
    pub evaluation: DynamicEvaluation,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for MheConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            q: vec![10.0, 10.0, 2.0],
            r: vec![0.033, 0.033],
            p: vec![2.0, 2.0, 2.0],
            x_min: vec![0.0, -0.1, -1.4],
            x_max: vec![18.0, 0.1, 1.4],
            friction_pole: 0.9,
            evaluation: DynamicEvaluation::Pointwise,
            qp_tol: 1e-6,
            qp_max_iter: 80,
        }
    }
}

impl MheConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v, len) in [
            ("q", &self.q, 3),
            ("r", &self.r, 2),
            ("p", &self.p, 3),
            ("x_min", &self.x_min, 3),
            ("x_max", &self.x_max, 3),
        ] {
            if v.len() != len || v.iter().any(|x| x.is_nan()) {
                return Err(Error::Config(format!("mhe.{name} needs {len} entries")));
            }
        }
        if self.q.iter().chain(&self.r).chain(&self.p).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("mhe weights must be finite and >= 0".into()));
        }
        if self.r.iter().any(|v| *v <= 0.0) {
            return Err(Error::Config("mhe.r must be positive".into()));
        }
        if self.x_min.iter().zip(&self.x_max).any(|(a, b)| a > b) {
            return Err(Error::Config("mhe state bounds are inconsistent".into()));
        }
        if !(0.0..1.0).contains(&self.friction_pole) {
            return Err(Error::Config("mhe.friction_pole must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Decoupling data for one disturbance column.
#[derive(Debug, Clone, PartialEq)]
pub struct UioMatrices {
    pub c: DMatrix<f64>,
    pub e: DVector<f64>,
    /// `(C E)^+`, a row.
    pub theta: DMatrix<f64>,
    /// `I - E Theta C`.
    pub projector: DMatrix<f64>,
    /// `E Theta`.
    pub e_theta: DMatrix<f64>,
}

impl UioMatrices {
    pub fn new(c: DMatrix<f64>, e: DVector<f64>) -> Result<Self> {
        if c.ncols() != e.len() {
            return Err(Error::Config("output matrix and disturbance column disagree".into()));
        }
        let ce = &c * &e;
        let nrm = ce.dot(&ce);
        if !(nrm > 0.0) {
            return Err(Error::Config("C E = 0: the disturbance does not reach the outputs".into()));
        }
        let theta = DMatrix::from_row_slice(1, ce.len(), (ce.transpose() / nrm).as_slice());
        let e_theta = &e * &theta;
        let projector = DMatrix::identity(e.len(), e.len()) - &e_theta * &c;
        Ok(Self { c, e, theta, projector, e_theta })
    }

    /// Measured speed and yaw rate.
    pub fn default_output() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0])
    }

    pub fn vertex_a(&self, model: &PolytopicModel) -> Vec<DMatrix<f64>> {
        model.vertex_a.iter().map(|a| &self.projector * a).collect()
    }

    pub fn vertex_b(&self, model: &PolytopicModel) -> Vec<DMatrix<f64>> {
        model.vertex_b.iter().map(|b| &self.projector * b).collect()
    }

    /// `Theta (y - C (A x + B u))`.
    pub fn disturbance(
        &self,
        y: &DVector<f64>,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> f64 {
        (&self.theta * (y - &self.c * (a * x + b * u)))[(0, 0)]
    }
}

pub fn build_uio(model: &PolytopicModel) -> Result<UioMatrices> {
    let e = model.e.clone().ok_or_else(|| Error::Config("model has no disturbance column".into()))?;
    UioMatrices::new(UioMatrices::default_output(), e)
}

/// Window data for one solve: `y_0..=y_L`, `u_0..u_{L-1}`, one scheduling point per transition.
#[derive(Debug, Clone)]
pub struct MeasurementWindow {
    pub y: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub schedule: Vec<SchedulingPoint>,
    /// Prior for the first state of the window.
    pub prior: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct WindowSolution {
    pub states: Vec<DVector<f64>>,
    pub status: QpStatus,
    pub iterations: usize,
    pub solve_time: Duration,
}

/// Builds the window QP in `X = [x_0 .. x_L]`.
pub fn build_window_qp(
    win: &MeasurementWindow,
    cfg: &MheConfig,
    model: &DynamicModel,
    uio: &UioMatrices,
) -> Result<QuadraticProgram> {
    let l = win.y.len().checked_sub(1).ok_or_else(|| Error::Problem("empty measurement window".into()))?;
    if win.u.len() != l || win.schedule.len() != l {
        return Err(Error::Problem(format!(
            "window with {} outputs needs {l} inputs and scheduling points (got {}, {})",
            l + 1,
            win.u.len(),
            win.schedule.len()
        )));
    }
    let nx = 3;
    let nv = nx * (l + 1);
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.q));
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.r));
    let p = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.p));
    let c = &uio.c;
    let mut h = DMatrix::zeros(nv, nv);
    let mut f = DVector::zeros(nv);

    // arrival cost
    add_block(&mut h, (0, 0), &(&p * 2.0));
    add_segment(&mut f, 0, &(&p * &win.prior * -2.0));
    // output residuals y_j - C x_j
    let ctr = c.transpose() * &r;
    let ctrc = &ctr * c * 2.0;
    for j in 0..=l {
        add_block(&mut h, (j * nx, j * nx), &ctrc);
        add_segment(&mut f, j * nx, &(&ctr * &win.y[j] * -2.0));
    }
    // process residuals x_{j+1} - Ao x_j - d_j
    for j in 0..l {
        let (a, b) = model.matrices(&win.schedule[j]);
        let ao = &uio.projector * a;
        let d = &uio.projector * b * &win.u[j] + &uio.e_theta * &win.y[j + 1];
        let (i0, i1) = (j * nx, (j + 1) * nx);
        let aq = ao.transpose() * &q;
        add_block(&mut h, (i0, i0), &(&aq * &ao * 2.0));
        add_block(&mut h, (i1, i1), &(&q * 2.0));
        let cross = &aq * -2.0;
        add_block(&mut h, (i0, i1), &cross);
        add_block(&mut h, (i1, i0), &cross.transpose());
        add_segment(&mut f, i1, &(&q * &d * -2.0));
        add_segment(&mut f, i0, &(&aq * &d * 2.0));
    }
    let lo = DVector::from_iterator(nv, (0..nv).map(|k| cfg.x_min[k % nx]));
    let hi = DVector::from_iterator(nv, (0..nv).map(|k| cfg.x_max[k % nx]));
    Ok(QuadraticProgram::new((&h + h.transpose()) * 0.5, f).with_bounds(lo, hi))
}

fn add_block(h: &mut DMatrix<f64>, (i, j): (usize, usize), m: &DMatrix<f64>) {
    let mut blk = h.view_mut((i, j), m.shape());
    blk += m;
}

fn add_segment(f: &mut DVector<f64>, i: usize, v: &DVector<f64>) {
    let mut seg = f.rows_mut(i, v.len());
    seg += v;
}

pub fn solve_window(
    win: &MeasurementWindow,
    cfg: &MheConfig,
    model: &DynamicModel,
    uio: &UioMatrices,
    warm: Option<&DVector<f64>>,
) -> Result<WindowSolution> {
    let qp = build_window_qp(win, cfg, model, uio)?;
    let warm = warm.filter(|w| w.len() == qp.n());
    let sol = solve_qp(&qp, warm, &QpSettings { tol: cfg.qp_tol, max_iter: cfg.qp_max_iter })?;
    let states = (0..win.y.len()).map(|j| sol.x.rows(3 * j, 3).into_owned()).collect();
    Ok(WindowSolution { states, status: sol.status, iterations: sol.iterations, solve_time: sol.solve_time })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MheStatus {
    Optimal,
    /// QP failed; the previous estimate was propagated through the model.
    Propagated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MheOutput {
    pub estimate: DynamicState,
    /// Unfiltered `Theta (y_k - C (A x_{k-1} + B u_{k-1}))`.
    pub friction_raw: f64,
    /// Low-pass filtered friction estimate used for feedforward.
    pub friction: f64,
    pub status: MheStatus,
    pub window_len: usize,
    pub iterations: usize,
    pub solve_time: Duration,
}

/// Online estimator with its window buffer.
#[derive(Debug, Clone)]
pub struct MheEstimator {
    pub config: MheConfig,
    model: DynamicModel,
    uio: UioMatrices,
    ys: VecDeque<DVector<f64>>,
    us: VecDeque<DVector<f64>>,
    /// Estimates of the previous window, aligned with `ys` before the newest sample was pushed.
    prev: VecDeque<DVector<f64>>,
    prior: DVector<f64>,
    friction: f64,
    warm: Option<DVector<f64>>,
}

impl MheEstimator {
    /// `prior` is the arrival prior for the first sample.
    pub fn new(config: MheConfig, model: DynamicModel, prior: DynamicState) -> Result<Self> {
        config.validate()?;
        let uio = build_uio(&model.polytope)?;
        Ok(Self {
            config,
            model,
            uio,
            ys: VecDeque::new(),
            us: VecDeque::new(),
            prev: VecDeque::new(),
            prior: prior.to_vector(),
            friction: 0.0,
            warm: None,
        })
    }

    pub fn uio(&self) -> &UioMatrices {
        &self.uio
    }

    /// Adds `y_k` (and the input applied since `y_{k-1}`) and re-solves the window.
    pub fn update(&mut self, y: [f64; 2], u_prev: Option<&DynamicInput>) -> Result<MheOutput> {
        let y = DVector::from_column_slice(&y);
        if !self.ys.is_empty() {
            let u = u_prev.ok_or_else(|| Error::Problem("mhe update needs the previous input".into()))?;
            self.us.push_back(u.to_vector());
        }
        self.ys.push_back(y.clone());
        let n = self.config.horizon;
        if self.ys.len() > n + 1 {
            self.ys.pop_front();
            self.us.pop_front();
            // the previous window's estimate of the new first sample
            if self.prev.len() > 1 {
                self.prior = self.prev[1].clone();
            }
            self.prev.pop_front();
        }
        let l = self.ys.len() - 1;

        // transition j is scheduled at the previous estimate of sample j
        let schedule: Vec<SchedulingPoint> = (0..l)
            .map(|j| {
                let x = self.prev.get(j).cloned().unwrap_or_else(|| self.bootstrap(&self.ys[j]));
                SchedulingPoint::from([self.us[j][1], x[0], x[1]])
            })
            .collect();
        let win = MeasurementWindow {
            y: self.ys.iter().cloned().collect(),
            u: self.us.iter().cloned().collect(),
            schedule,
            prior: self.prior.clone(),
        };
        let warm = self.warm.take().map(|w| {
            let mut v = DVector::zeros(3 * (l + 1));
            let keep = w.len().min(v.len());
            let skip = w.len() - keep;
            v.rows_mut(0, keep).copy_from(&w.rows(skip, keep));
            v
        });
        let sol = solve_window(&win, &self.config, &self.model, &self.uio, warm.as_ref())?;

        let (states, status) =
            if sol.status == QpStatus::Optimal && sol.states.iter().flatten().all(|v| v.is_finite()) {
                (sol.states, MheStatus::Optimal)
            } else {
                warn!("mhe: window QP {:?}, propagating the previous estimate", sol.status);
                let mut states: Vec<DVector<f64>> = self.prev.iter().cloned().collect();
                while states.len() < l {
                    states.push(self.bootstrap(&win.y[states.len()]));
                }
                states.truncate(l);
                let last = match states.last() {
                    Some(x) => self.propagate(x, &win.u[l - 1], &win.schedule[l - 1], &y),
                    None => self.bootstrap(&y),
                };
                states.push(last);
                (states, MheStatus::Propagated)
            };

        let friction_raw = if l > 0 {
            let (a, b) = self.model.matrices(&win.schedule[l - 1]);
            self.uio.disturbance(&y, &a, &b, &states[l - 1], &win.u[l - 1])
        } else {
            0.0
        };
        let p = self.config.friction_pole;
        self.friction = p * self.friction + (1.0 - p) * friction_raw;

        let mut w = DVector::zeros(3 * states.len());
        for (j, x) in states.iter().enumerate() {
            w.rows_mut(3 * j, 3).copy_from(x);
        }
        self.warm = Some(w);
        let estimate = DynamicState::from_slice(states[l].as_slice());
        self.prev = states.into();
        Ok(MheOutput {
            estimate,
            friction_raw,
            friction: self.friction,
            status,
            window_len: l + 1,
            iterations: sol.iterations,
            solve_time: sol.solve_time,
        })
    }

    /// Measured speed and yaw rate with zero slip.
    fn bootstrap(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![y[0], 0.0, y[1]])
    }

    fn propagate(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        point: &SchedulingPoint,
        y: &DVector<f64>,
    ) -> DVector<f64> {
        let (a, b) = self.model.matrices(point);
        &self.uio.projector * (a * x + b * u) + &self.uio.e_theta * y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{default_dynamic_bounds, dynamic_polytope, plant_step, Pose, VehicleParams};

    fn model() -> DynamicModel {
        DynamicModel::new(
            VehicleParams::default(),
            &default_dynamic_bounds(),
            0.01,
            DynamicEvaluation::Pointwise,
        )
    }

    #[test]
    fn uio_algebra() {
        let m = model();
        let uio = build_uio(&m.polytope).unwrap();
        let ce = &uio.c * &uio.e;
        assert_eq!(ce[0], -0.01 / 683.0);
        assert_eq!(uio.theta[(0, 0)], -68300.0);
        assert_eq!(uio.theta[(0, 1)], 0.0);
        assert_eq!((&uio.theta * &ce)[(0, 0)], 1.0);
        assert_eq!(uio.projector, DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0])));
        assert!((&uio.projector * &uio.e).iter().all(|v| *v == 0.0));
        for a in uio.vertex_a(&m.polytope) {
            assert!(a.row(0).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn theta_scales_inversely_with_e() {
        let e = DVector::from_vec(vec![-0.01 / 683.0, 0.0, 0.0]);
        let a = UioMatrices::new(UioMatrices::default_output(), e.clone()).unwrap();
        let b = UioMatrices::new(UioMatrices::default_output(), e * 2.0).unwrap();
        assert!((a.theta[(0, 0)] - 2.0 * b.theta[(0, 0)]).abs() < 1e-9);
    }

    #[test]
    fn unobservable_disturbance_rejected() {
        let e = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        assert!(UioMatrices::new(UioMatrices::default_output(), e).is_err());
    }

    #[test]
    fn projector_commutes_with_blending() {
        let p = VehicleParams::default();
        let poly = dynamic_polytope(&default_dynamic_bounds(), &p, 0.01);
        let uio = build_uio(&poly).unwrap();
        let ao = uio.vertex_a(&poly);
        let w = poly.weights(&SchedulingPoint::from([0.3, 7.0, -0.02]));
        let lhs = w.blend(&ao);
        let rhs = &uio.projector * poly.blend_a(&w);
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn zero_residual_gives_zero_friction() {
        let m = model();
        let uio = build_uio(&m.polytope).unwrap();
        let (a, b) = m.matrices(&SchedulingPoint::from([0.1, 8.0, 0.01]));
        let x = DVector::from_vec(vec![8.0, 0.01, 0.1]);
        let u = DVector::from_vec(vec![3500.0, 0.1]);
        let y = &uio.c * (&a * &x + &b * &u);
        assert_eq!(uio.disturbance(&y, &a, &b, &x, &u), 0.0);
    }

    /// Noiseless plant trace with a friction profile.
    fn trace(steps: usize, friction: impl Fn(usize) -> f64) -> (Vec<DynamicState>, Vec<DynamicInput>) {
        let p = VehicleParams::default();
        let mut s = DynamicState::new(10.0, 0.0, 0.0);
        let mut pose = Pose::default();
        let (mut xs, mut us) = (vec![s], vec![]);
        for k in 0..steps {
            let t = k as f64 * 0.01;
            let u = DynamicInput::new(3400.0 + 800.0 * (0.7 * t).sin(), 0.04 * (1.3 * t).sin());
            let (np, ns) = plant_step(&pose, &s, &u, friction(k), &p, 0.01).unwrap();
            pose = np;
            s = ns;
            xs.push(s);
            us.push(u);
        }
        (xs, us)
    }

    fn run(xs: &[DynamicState], us: &[DynamicInput], horizon: usize) -> Vec<MheOutput> {
        let cfg = MheConfig { horizon, ..Default::default() };
        let mut est = MheEstimator::new(cfg, model(), xs[0]).unwrap();
        let mut out = vec![est.update([xs[0].v, xs[0].omega], None).unwrap()];
        for k in 1..xs.len() {
            out.push(est.update([xs[k].v, xs[k].omega], Some(&us[k - 1])).unwrap());
        }
        out
    }

    fn max_error(xs: &[DynamicState], out: &[MheOutput]) -> f64 {
        xs.iter().zip(out).map(|(x, o)| (x.to_vector() - o.estimate.to_vector()).amax()).fold(0.0, f64::max)
    }

    #[test]
    fn noiseless_trace_is_interpolated() {
        let (xs, us) = trace(200, |_| 0.0);
        let out = run(&xs, &us, 30);
        assert!(out.iter().all(|o| o.status == MheStatus::Optimal));
        let err = max_error(&xs, &out);
        assert!(err < 1e-6, "max error {err}");
    }

    #[test]
    fn friction_step_is_decoupled_and_estimated() {
        let (xs0, us) = trace(200, |_| 0.0);
        let (xs, _) = trace(200, |k| if k >= 50 { -3015.0 } else { 0.0 });
        let out = run(&xs, &us, 30);
        assert!(max_error(&xs, &out) < 1e-6);
        assert!(max_error(&xs0, &run(&xs0, &us, 30)) < 1e-6);
        // 0.5 s after the step the filtered estimate is within 5 %
        for o in &out[101..] {
            assert!((o.friction + 3015.0).abs() < 0.05 * 3015.0, "{}", o.friction);
        }
        assert!((out[60].friction_raw + 3015.0).abs() < 1e-3);
    }

    #[test]
    fn bounds_are_respected() {
        let m = model();
        let uio = build_uio(&m.polytope).unwrap();
        let cfg = MheConfig::default();
        // measurements inconsistent with the bounds pull the estimate against them
        let win = MeasurementWindow {
            y: vec![DVector::from_vec(vec![25.0, 3.0]); 3],
            u: vec![DVector::from_vec(vec![0.0, 0.0]); 2],
            schedule: vec![SchedulingPoint::from([0.0, 18.0, 0.1]); 2],
            prior: DVector::from_vec(vec![18.0, 0.1, 1.4]),
        };
        let sol = solve_window(&win, &cfg, &m, &uio, None).unwrap();
        for x in &sol.states {
            for i in 0..3 {
                assert!(x[i] >= cfg.x_min[i] && x[i] <= cfg.x_max[i], "{x}");
            }
        }
    }

    #[test]
    fn zero_horizon_with_heavy_prior_returns_prior() {
        let m = model();
        let uio = build_uio(&m.polytope).unwrap();
        let cfg = MheConfig { horizon: 0, p: vec![1e9; 3], ..Default::default() };
        let prior = DVector::from_vec(vec![9.0, 0.02, 0.1]);
        let win = MeasurementWindow {
            y: vec![DVector::from_vec(vec![11.0, 0.5])],
            u: vec![],
            schedule: vec![],
            prior: prior.clone(),
        };
        let sol = solve_window(&win, &cfg, &m, &uio, None).unwrap();
        assert!((&sol.states[0] - prior).amax() < 1e-6);
    }

    #[test]
    fn short_windows_bootstrap() {
        let (xs, us) = trace(10, |_| 0.0);
        let out = run(&xs, &us, 30);
        assert_eq!(out[0].window_len, 1);
        assert_eq!(out[5].window_len, 6);
    }

    #[test]
    fn friction_ignores_the_yaw_rate_channel() {
        let m = model();
        let uio = build_uio(&m.polytope).unwrap();
        let (a, b) = m.matrices(&SchedulingPoint::from([0.05, 9.0, 0.02]));
        let x = DVector::from_vec(vec![9.0, 0.02, 0.2]);
        let u = DVector::from_vec(vec![3600.0, 0.05]);
        let y = DVector::from_vec(vec![9.01, 0.21]);
        let f = uio.disturbance(&y, &a, &b, &x, &u);
        for noise in [-0.03, 0.01, 0.2] {
            let yn = &y + DVector::from_vec(vec![0.0, noise]);
            assert_eq!(uio.disturbance(&yn, &a, &b, &x, &u), f);
        }
    }

    #[test]
    fn estimation_error_does_not_depend_on_friction() {
        let (xs0, us) = trace(150, |_| 0.0);
        let (xs1, _) = trace(150, |k| 1500.0 * (0.05 * k as f64).sin() - 1000.0);
        let (o0, o1) = (run(&xs0, &us, 30), run(&xs1, &us, 30));
        for k in 0..xs0.len() {
            let e0 = xs0[k].to_vector() - o0[k].estimate.to_vector();
            let e1 = xs1[k].to_vector() - o1[k].estimate.to_vector();
            assert!((e0 - e1).amax() < 1e-6, "step {k}");
        }
    }

    #[test]
    fn shifted_window_agrees_on_the_overlap() {
        let m = model();
        let uio = build_uio(&m.polytope).unwrap();
        let cfg = MheConfig::default();
        let (xs, us) = trace(60, |k| if k > 20 { -1005.0 } else { 0.0 });
        let window = |start: usize, prior: DVector<f64>| MeasurementWindow {
            y: (start..=start + cfg.horizon).map(|k| DVector::from_vec(vec![xs[k].v, xs[k].omega])).collect(),
            u: (start..start + cfg.horizon).map(|k| us[k].to_vector()).collect(),
            schedule: (start..start + cfg.horizon)
                .map(|k| SchedulingPoint::from([us[k].delta, xs[k].v, xs[k].alpha]))
                .collect(),
            prior,
        };
        let first = solve_window(&window(10, xs[10].to_vector()), &cfg, &m, &uio, None).unwrap();
        let second = solve_window(&window(11, first.states[1].clone()), &cfg, &m, &uio, None).unwrap();
        for (a, b) in first.states[1..].iter().zip(&second.states) {
            assert!((a - b).amax() < 1e-6, "{a} vs {b}");
        }
    }
}
