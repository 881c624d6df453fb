//! Kinematic tracking MPC over the blended TS prediction model.
//!
//! The decision vector is the stacked input increments `dU = [du_0 .. du_{N-1}]`. States
//! are condensed out: with `u_i = u_{-1} + sum_{j<=i} du_j` and
//! `x_{i+1} = A(rho_i) x_i + B (u_i - r_i)`, every predicted state is affine in `dU`, so the
//! problem is a dense QP with input, rate and terminal rows only.

use std::time::Duration;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{KinematicErrorState, KinematicInput, PolytopicModel, SchedulingPoint};
use crate::opt::{kkt_residuals, solve_qp, QpSettings, QpStatus, QuadraticProgram};
use crate::planner::ReferenceSample;
use crate::synthesis::TerminalSet;

/// How the prediction model is scheduled along the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulingMode {
    /// Every step uses the scheduling point measured now.
    Frozen,
    /// Steps follow the planner's `omega_d`, `v_d` with a decaying heading error.
    #[default]
    Reference,
}

impl std::str::FromStr for SchedulingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" | "fzn" => Ok(Self::Frozen),
            "reference" | "ref" => Ok(Self::Reference),
            _ => Err(Error::Config(format!("unknown scheduling mode '{s}' (frozen|reference)"))),
        }
    }
}

impl std::fmt::Display for SchedulingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Frozen => "frozen",
            Self::Reference => "reference",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: Vec<f64>,
    /// Weight on the input increments.
    pub r: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    /// Symmetric bound on `|du|` per channel.
    pub du_max: Vec<f64>,
    /// Terminal cost `P = terminal_scale * S`.
    pub terminal_scale: f64,
    pub terminal_constraint: bool,
    /// Supporting directions per coordinate plane of the whitened ellipsoid.
    pub terminal_directions: usize,
    /// Per-step factor applied to the measured heading error in reference scheduling.
    pub theta_decay: f64,
    pub mode: SchedulingMode,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    /// Speed the safety ramp brings the vehicle down to.
    pub safety_v_min: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 40,
            q: vec![1.133, 0.067, 13.333],
            r: vec![5e-6, 5.5],
            u_min: vec![0.0, -1.4],
            u_max: vec![18.0, 1.4],
            du_max: vec![5.0, 0.3],
            terminal_scale: 1.0,
            terminal_constraint: true,
            terminal_directions: 16,
            theta_decay: 0.9,
            mode: SchedulingMode::Reference,
            qp_tol: 1e-6,
            qp_max_iter: 80,
            safety_v_min: 0.1,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("mpc.horizon must be >= 1".into()));
        }
        for (name, v, len) in [
            ("q", &self.q, 3),
            ("r", &self.r, 2),
            ("u_min", &self.u_min, 2),
            ("u_max", &self.u_max, 2),
            ("du_max", &self.du_max, 2),
        ] {
            if v.len() != len || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("mpc.{name} needs {len} finite entries")));
            }
        }
        if self.q.iter().any(|v| *v < 0.0) || self.r.iter().any(|v| *v <= 0.0) {
            return Err(Error::Config("mpc weights need Q >= 0 and R > 0".into()));
        }
        if self.u_min.iter().zip(&self.u_max).any(|(a, b)| a > b) || self.du_max.iter().any(|v| *v < 0.0) {
            return Err(Error::Config("mpc input bounds are inconsistent".into()));
        }
        if !(self.terminal_scale > 0.0) || !(0.0..=1.0).contains(&self.theta_decay) {
            return Err(Error::Config("mpc needs terminal_scale > 0 and theta_decay in [0, 1]".into()));
        }
        if self.terminal_directions < 4 {
            return Err(Error::Config("mpc.terminal_directions must be >= 4".into()));
        }
        Ok(())
    }
}

/// Scheduling points `rho_0 .. rho_{N-1}` for the horizon.
///
/// `omega_now` is the vehicle's current yaw rate; `window[i]` is the planner sample at `k + i`.
pub fn scheduling_sequence(
    mode: SchedulingMode,
    state: &KinematicErrorState,
    omega_now: f64,
    window: &[ReferenceSample],
    horizon: usize,
    theta_decay: f64,
) -> Vec<SchedulingPoint> {
    let at = |i: usize| window[i.min(window.len() - 1)];
    match mode {
        SchedulingMode::Frozen => {
            vec![SchedulingPoint::from([omega_now, at(0).v, state.theta_e]); horizon]
        }
        SchedulingMode::Reference => {
            let mut th = state.theta_e;
            (0..horizon)
                .map(|i| {
                    let p = SchedulingPoint::from([at(i).omega, at(i).v, th]);
                    th *= theta_decay;
                    p
                })
                .collect()
        }
    }
}

/// Condensed QP plus the affine maps needed to read predictions back out.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub qp: QuadraticProgram,
    /// Cost of `dU` is `qp.objective(dU) + cost_offset`.
    pub cost_offset: f64,
    /// `x_i = state_maps[i] * dU + state_offsets[i]`, `i = 0..=N`.
    pub state_maps: Vec<DMatrix<f64>>,
    pub state_offsets: Vec<DVector<f64>>,
    /// Number of trailing inequality rows that encode the terminal set.
    pub terminal_rows: usize,
}

impl MpcProblem {
    pub fn predicted_state(&self, du: &DVector<f64>, i: usize) -> DVector<f64> {
        &self.state_maps[i] * du + &self.state_offsets[i]
    }
}

/// Inner polyhedral approximation `{x : G x <= 1}` of `{x : x'Sx <= 1}`.
///
/// Directions are spread over each coordinate plane of the whitened ellipsoid plus its
/// octant diagonals; the common offset is the reciprocal of the circumradius of the
/// resulting polytope so every vertex lies on or inside the ellipsoid.
pub fn terminal_polytope(s: &DMatrix<f64>, per_plane: usize) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    if n != 3 {
        return Err(Error::Config("terminal polytope is implemented for three states".into()));
    }
    let l = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("terminal matrix S is not positive definite".into()))?
        .l();
    let mut dirs: Vec<[f64; 3]> = Vec::new();
    let mut push = |d: [f64; 3]| {
        if !dirs.iter().any(|e| (0..3).all(|k| (e[k] - d[k]).abs() < 1e-12)) {
            dirs.push(d);
        }
    };
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        for k in 0..per_plane {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / per_plane as f64;
            let mut d = [0.0; 3];
            d[a] = round_tiny(phi.cos());
            d[b] = round_tiny(phi.sin());
            push(d);
        }
    }
    let c = 1.0 / 3f64.sqrt();
    for sx in [-c, c] {
        for sy in [-c, c] {
            for sz in [-c, c] {
                push([sx, sy, sz]);
            }
        }
    }
    // circumradius by vertex enumeration
    let mut radius = 0.0f64;
    let m = dirs.len();
    for i in 0..m {
        for j in i + 1..m {
            for k in j + 1..m {
                let a = nalgebra::Matrix3::from_rows(&[
                    nalgebra::RowVector3::from(dirs[i]),
                    nalgebra::RowVector3::from(dirs[j]),
                    nalgebra::RowVector3::from(dirs[k]),
                ]);
                let Some(inv) = a.try_inverse() else { continue };
                let v = inv * nalgebra::Vector3::new(1.0, 1.0, 1.0);
                if !v.iter().all(|x| x.is_finite()) {
                    continue;
                }
                if dirs.iter().all(|d| d[0] * v[0] + d[1] * v[1] + d[2] * v[2] <= 1.0 + 1e-9) {
                    radius = radius.max(v.norm());
                }
            }
        }
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config("terminal polytope is unbounded".into()));
    }
    // z = L' x, rows (L d)' x <= 1/radius, scaled to unit right-hand side
    let mut g = DMatrix::zeros(m, 3);
    for (r, d) in dirs.iter().enumerate() {
        let row = &l * nalgebra::DVector::from_column_slice(d) * radius;
        g.set_row(r, &row.transpose());
    }
    Ok(g)
}

fn round_tiny(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        0.0
    } else {
        v
    }
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

/// Builds the condensed QP with terminal cost `x_N' P x_N` and, when given, the rows
/// `G x_N <= 1`.
#[allow(clippy::too_many_arguments)]
pub fn build_qp(
    state: &KinematicErrorState,
    last_input: &KinematicInput,
    window: &[ReferenceSample],
    schedule: &[SchedulingPoint],
    cfg: &MpcConfig,
    model: &PolytopicModel,
    terminal_cost: &DMatrix<f64>,
    terminal_planes: Option<&DMatrix<f64>>,
) -> Result<MpcProblem> {
    let nn = cfg.horizon;
    if schedule.len() != nn {
        return Err(Error::Problem(format!("schedule has {} points, horizon is {nn}", schedule.len())));
    }
    if window.is_empty() {
        return Err(Error::Problem("empty reference window".into()));
    }
    let (nx, nu) = (3, 2);
    let nv = nu * nn;
    let b = &model.vertex_b[0];
    let q = diag(&cfg.q);
    let r = diag(&cfg.r);
    let u_prev = last_input.to_vector();

    let mut maps = Vec::with_capacity(nn + 1);
    let mut offs = Vec::with_capacity(nn + 1);
    maps.push(DMatrix::zeros(nx, nv));
    offs.push(state.to_vector());
    // u_i = u_prev + sel_i dU
    let mut sel = DMatrix::<f64>::zeros(nu, nv);
    for i in 0..nn {
        for c in 0..nu {
            sel[(c, i * nu + c)] = 1.0;
        }
        let a = model.blend_a(&model.weights(&schedule[i]));
        let w = window[i.min(window.len() - 1)];
        let th = schedule[i].get(2);
        let ref_u = DVector::from_vec(vec![w.v * th.cos(), w.omega]);
        maps.push(&a * &maps[i] + b * &sel);
        offs.push(&a * &offs[i] + b * (&u_prev - ref_u));
    }

    let p = terminal_cost;
    let mut h = DMatrix::zeros(nv, nv);
    let mut f = DVector::zeros(nv);
    let mut offset = 0.0;
    for i in 0..=nn {
        let w = if i == nn { p } else { &q };
        let wm = w * &maps[i];
        h += maps[i].transpose() * &wm * 2.0;
        f += maps[i].transpose() * (w * &offs[i]) * 2.0;
        offset += offs[i].dot(&(w * &offs[i]));
    }
    for i in 0..nn {
        for c in 0..nu {
            h[(i * nu + c, i * nu + c)] += 2.0 * r[(c, c)];
        }
    }
    let h = (&h + h.transpose()) * 0.5;

    let terminal_rows = terminal_planes.map_or(0, |g| g.nrows());
    let rows = nu * nn + terminal_rows;
    let mut a_in = DMatrix::zeros(rows, nv);
    let mut lb = DVector::zeros(rows);
    let mut ub = DVector::zeros(rows);
    for i in 0..nn {
        for c in 0..nu {
            let row = i * nu + c;
            for j in 0..=i {
                a_in[(row, j * nu + c)] = 1.0;
            }
            lb[row] = cfg.u_min[c] - u_prev[c];
            ub[row] = cfg.u_max[c] - u_prev[c];
        }
    }
    if let Some(g) = terminal_planes {
        let gm = g * &maps[nn];
        let go = g * &offs[nn];
        for t in 0..terminal_rows {
            let row = nu * nn + t;
            a_in.set_row(row, &gm.row(t));
            lb[row] = f64::NEG_INFINITY;
            ub[row] = 1.0 - go[t];
        }
    }
    let du = DVector::from_iterator(nv, (0..nv).map(|k| cfg.du_max[k % nu]));
    let qp = QuadraticProgram::new(h, f).with_inequalities(a_in, lb, ub).with_bounds(-&du, du);
    Ok(MpcProblem { qp, cost_offset: offset, state_maps: maps, state_offsets: offs, terminal_rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpcStatus {
    Optimal,
    /// Iteration limit reached with a primal-feasible iterate.
    Inaccurate,
    HoldLast,
    SafetyRamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcDiagnostics {
    pub status: MpcStatus,
    pub cost: f64,
    /// Cost of keeping the previous input over the whole horizon.
    pub idle_cost: f64,
    pub iterations: usize,
    pub terminal_active: bool,
    pub warm_started: bool,
    #[serde(skip)]
    pub solve_time: Duration,
}

/// Online controller; owns its warm start.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub config: MpcConfig,
    model: PolytopicModel,
    terminal: TerminalSet,
    planes: DMatrix<f64>,
    warm: Option<DVector<f64>>,
    failures: usize,
}

impl MpcController {
    pub fn new(config: MpcConfig, model: PolytopicModel, terminal: TerminalSet) -> Result<Self> {
        config.validate()?;
        if model.n_states() != 3 || model.n_inputs() != 2 || !model.input_matrix_is_constant() {
            return Err(Error::Config("mpc needs the three-state kinematic polytope".into()));
        }
        let planes = terminal_polytope(&terminal.s, config.terminal_directions)?;
        Ok(Self { config, model, terminal, planes, warm: None, failures: 0 })
    }

    pub fn terminal(&self) -> &TerminalSet {
        &self.terminal
    }

    pub fn terminal_planes(&self) -> &DMatrix<f64> {
        &self.planes
    }

    pub fn reset(&mut self) {
        self.warm = None;
        self.failures = 0;
    }

    pub fn problem(
        &self,
        state: &KinematicErrorState,
        last_input: &KinematicInput,
        window: &[ReferenceSample],
    ) -> Result<MpcProblem> {
        self.problem_at(state, last_input, last_input.omega, window)
    }

    /// As [`Self::problem`], with the vehicle's current yaw rate for the frozen schedule.
    pub fn problem_at(
        &self,
        state: &KinematicErrorState,
        last_input: &KinematicInput,
        yaw_rate: f64,
        window: &[ReferenceSample],
    ) -> Result<MpcProblem> {
        let schedule = scheduling_sequence(
            self.config.mode,
            state,
            yaw_rate,
            window,
            self.config.horizon,
            self.config.theta_decay,
        );
        let p = &self.terminal.s * self.config.terminal_scale;
        let planes = self.config.terminal_constraint.then_some(&self.planes);
        build_qp(state, last_input, window, &schedule, &self.config, &self.model, &p, planes)
    }

    /// One control period: `u_k = u_{k-1} + du_0*`, or a fallback when the QP fails.
    /// The frozen schedule takes its yaw rate from the command in force.
    pub fn step(
        &mut self,
        state: &KinematicErrorState,
        last_input: &KinematicInput,
        window: &[ReferenceSample],
    ) -> Result<(KinematicInput, MpcDiagnostics)> {
        self.step_at(state, last_input, last_input.omega, window)
    }

    /// As [`Self::step`], with the vehicle's current yaw rate for the frozen schedule.
    pub fn step_at(
        &mut self,
        state: &KinematicErrorState,
        last_input: &KinematicInput,
        yaw_rate: f64,
        window: &[ReferenceSample],
    ) -> Result<(KinematicInput, MpcDiagnostics)> {
        let cfg = &self.config;
        let prob = self.problem_at(state, last_input, yaw_rate, window)?;
        let idle = DVector::zeros(prob.qp.n());
        let idle_cost = prob.qp.objective(&idle) + prob.cost_offset;
        let warm_started = self.warm.is_some();
        let settings = QpSettings { tol: cfg.qp_tol, max_iter: cfg.qp_max_iter };
        let sol = solve_qp(&prob.qp, self.warm.as_ref(), &settings)?;

        let accepted = match sol.status {
            QpStatus::Optimal => Some(MpcStatus::Optimal),
            QpStatus::MaxIter if kkt_residuals(&prob.qp, &sol).primal <= 1e-4 => Some(MpcStatus::Inaccurate),
            _ => None,
        };
        let nu = 2;
        if let (Some(status), true) = (accepted, sol.x.iter().all(|v| v.is_finite())) {
            self.failures = 0;
            let mut shifted = DVector::zeros(sol.x.len());
            let tail = sol.x.len() - nu;
            shifted.rows_mut(0, tail).copy_from(&sol.x.rows(nu, tail));
            self.warm = Some(shifted);
            let u = self.saturate(last_input, [sol.x[0], sol.x[1]]);
            let terminal_active = prob.terminal_rows > 0 && {
                let start = prob.qp.a_in.nrows() - prob.terminal_rows;
                let g = prob.qp.a_in.rows(start, prob.terminal_rows) * &sol.x;
                (0..prob.terminal_rows).any(|t| g[t] >= prob.qp.ub[start + t] - 1e-6)
            };
            let diag = MpcDiagnostics {
                status,
                cost: sol.objective + prob.cost_offset,
                idle_cost,
                iterations: sol.iterations,
                terminal_active,
                warm_started,
                solve_time: sol.solve_time,
            };
            return Ok((u, diag));
        }

        self.failures += 1;
        self.warm = None;
        let (u, status) = if self.failures >= 2 {
            let v =
                (last_input.v - cfg.du_max[0]).max(cfg.safety_v_min).min(last_input.v.max(cfg.safety_v_min));
            (self.saturate(last_input, [v - last_input.v, 0.0]), MpcStatus::SafetyRamp)
        } else {
            (*last_input, MpcStatus::HoldLast)
        };
        warn!("mpc: QP {:?}, {} consecutive failure(s), {:?}", sol.status, self.failures, status);
        debug!("mpc state {state:?} last input {last_input:?}");
        let diag = MpcDiagnostics {
            status,
            cost: f64::NAN,
            idle_cost,
            iterations: sol.iterations,
            terminal_active: false,
            warm_started,
            solve_time: sol.solve_time,
        };
        Ok((u, diag))
    }

    /// Applies the rate and magnitude limits exactly.
    fn saturate(&self, last: &KinematicInput, du: [f64; 2]) -> KinematicInput {
        let cfg = &self.config;
        let prev = [last.v, last.omega];
        let mut out = [0.0; 2];
        for c in 0..2 {
            let d = du[c].clamp(-cfg.du_max[c], cfg.du_max[c]);
            let lo = cfg.u_min[c].max(prev[c] - cfg.du_max[c]);
            let hi = cfg.u_max[c].min(prev[c] + cfg.du_max[c]);
            out[c] = if lo <= hi {
                (prev[c] + d).clamp(lo, hi)
            } else {
                (prev[c] + d).clamp(cfg.u_min[c], cfg.u_max[c])
            };
        }
        KinematicInput::new(out[0], out[1])
    }
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use super::*;
    use crate::models::{default_kinematic_bounds, kinematic_polytope};
    use crate::opt::LmiSettings;
    use crate::synthesis::{diag as dg, synthesize_terminal_set, synthesize_vertex_gains};
    use proptest::prelude::*;

    fn artifacts() -> &'static (PolytopicModel, TerminalSet) {
        static CELL: OnceLock<(PolytopicModel, TerminalSet)> = OnceLock::new();
        CELL.get_or_init(|| {
            let model = kinematic_polytope(&default_kinematic_bounds(), 0.1);
            let s = LmiSettings::default();
            let g = synthesize_vertex_gains(
                &model,
                &dg(&[1.0, 1.5, 3.0]),
                &dg(&[1.0, 3.0]),
                crate::synthesis::GainObjective::default(),
                &s,
            )
            .unwrap();
            let t = synthesize_terminal_set(&model, &g, &DVector::from_vec(vec![18.0, 1.4]), &s).unwrap();
            (model, t)
        })
    }

    fn controller(cfg: MpcConfig) -> MpcController {
        let (m, t) = artifacts();
        MpcController::new(cfg, m.clone(), t.clone()).unwrap()
    }

    fn cruise(n: usize, v: f64, w: f64) -> Vec<ReferenceSample> {
        (0..=n).map(|i| ReferenceSample { t: i as f64 * 0.1, v, omega: w, ..Default::default() }).collect()
    }

    #[test]
    fn terminal_polytope_is_inner() {
        let (_, t) = artifacts();
        let g = terminal_polytope(&t.s, 16).unwrap();
        assert_eq!(g.nrows(), 3 * 16 - 6 + 8);
        let l_inv_t = t.s.clone().cholesky().unwrap().l().transpose().try_inverse().unwrap();
        let mut inside = 0;
        let mut rng = 12345u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..20_000 {
            let z = DVector::from_vec(vec![next(), next(), next()]);
            let x = &l_inv_t * z;
            if (&g * &x).iter().all(|v| *v <= 1.0) {
                inside += 1;
                assert!(t.level(&x) <= 1.0 + 1e-9);
            }
        }
        // the polytope keeps most of the ball's volume (pi/6 of the cube)
        assert!(inside as f64 / 20_000.0 > 0.8 * std::f64::consts::PI / 6.0, "{inside}");
    }

    #[test]
    fn origin_is_a_fixed_point() {
        let mut c = controller(MpcConfig { horizon: 1, ..Default::default() });
        let last = KinematicInput::new(10.0, 0.0);
        let (u, d) = c.step(&KinematicErrorState::default(), &last, &cruise(1, 10.0, 0.0)).unwrap();
        assert_eq!(d.status, MpcStatus::Optimal);
        assert!((u.v - 10.0).abs() < 1e-6 && u.omega.abs() < 1e-6, "{u:?}");
    }

    #[test]
    fn zero_rate_bound_pins_inputs() {
        let mut c = controller(MpcConfig {
            du_max: vec![0.0, 0.0],
            terminal_constraint: false,
            ..Default::default()
        });
        let last = KinematicInput::new(7.0, 0.1);
        let x = KinematicErrorState::new(0.5, -0.2, 0.01);
        let prob = c.problem(&x, &last, &cruise(40, 10.0, 0.0)).unwrap();
        assert!(prob.qp.var_lb.iter().chain(prob.qp.var_ub.iter()).all(|v| *v == 0.0));
        let (u, _) = c.step(&x, &last, &cruise(40, 10.0, 0.0)).unwrap();
        assert_eq!(u, last);
    }

    #[test]
    fn condensed_solution_matches_full_kkt_oracle() {
        // N = 2, inactive bounds, no terminal rows: the condensed optimum must equal the
        // solution of the KKT system of the non-condensed problem in (x1, x2, du0, du1).
        let cfg = MpcConfig {
            horizon: 2,
            u_min: vec![-1e3, -1e3],
            u_max: vec![1e3, 1e3],
            du_max: vec![1e3, 1e3],
            terminal_constraint: false,
            mode: SchedulingMode::Frozen,
            ..Default::default()
        };
        let c = controller(cfg.clone());
        let x0 = KinematicErrorState::new(0.8, 0.0, 0.0);
        let last = KinematicInput::new(10.0, 0.0);
        let win = cruise(2, 10.0, 0.0);
        let prob = c.problem(&x0, &last, &win).unwrap();
        let sol = solve_qp(&prob.qp, None, &QpSettings::default()).unwrap();

        let (m, t) = artifacts();
        let a = m.blend_a(&m.weights(&SchedulingPoint::from([0.0, 10.0, 0.0])));
        let b = m.vertex_b[0].clone();
        let (q, r, p) = (dg(&cfg.q), dg(&cfg.r), t.s.clone());
        // variables z = [x1 (3), x2 (3), du0 (2), du1 (2)], 6 equality rows
        let nz = 10;
        let mut h = DMatrix::zeros(nz, nz);
        h.view_mut((0, 0), (3, 3)).copy_from(&(&q * 2.0));
        h.view_mut((3, 3), (3, 3)).copy_from(&(&p * 2.0));
        h.view_mut((6, 6), (2, 2)).copy_from(&(&r * 2.0));
        h.view_mut((8, 8), (2, 2)).copy_from(&(&r * 2.0));
        let mut aeq = DMatrix::zeros(6, nz);
        let mut beq = DVector::zeros(6);
        let dev = last.to_vector() - DVector::from_vec(vec![10.0, 0.0]);
        // x1 - B du0 = A x0 + B dev
        aeq.view_mut((0, 0), (3, 3)).fill_with_identity();
        aeq.view_mut((0, 6), (3, 2)).copy_from(&(-&b));
        beq.rows_mut(0, 3).copy_from(&(&a * x0.to_vector() + &b * &dev));
        // x2 - A x1 - B du0 - B du1 = B dev
        aeq.view_mut((3, 3), (3, 3)).fill_with_identity();
        aeq.view_mut((3, 0), (3, 3)).copy_from(&(-&a));
        aeq.view_mut((3, 6), (3, 2)).copy_from(&(-&b));
        aeq.view_mut((3, 8), (3, 2)).copy_from(&(-&b));
        beq.rows_mut(3, 3).copy_from(&(&b * &dev));
        let mut kkt = DMatrix::zeros(nz + 6, nz + 6);
        kkt.view_mut((0, 0), (nz, nz)).copy_from(&h);
        kkt.view_mut((0, nz), (nz, 6)).copy_from(&aeq.transpose());
        kkt.view_mut((nz, 0), (6, nz)).copy_from(&aeq);
        let mut rhs = DVector::zeros(nz + 6);
        rhs.rows_mut(nz, 6).copy_from(&beq);
        let z = kkt.lu().solve(&rhs).unwrap();
        for k in 0..4 {
            assert!((z[6 + k] - sol.x[k]).abs() < 1e-7, "du[{k}] {} vs {}", z[6 + k], sol.x[k]);
        }
        let x2 = prob.predicted_state(&sol.x, 2);
        assert!((x2 - z.rows(3, 3)).amax() < 1e-7);
    }

    #[test]
    fn modes_agree_on_constant_window() {
        let x = KinematicErrorState::new(0.4, -0.3, 0.0);
        let last = KinematicInput::new(8.0, 0.2);
        let win = cruise(40, 8.0, 0.2);
        let mut f = controller(MpcConfig { mode: SchedulingMode::Frozen, ..Default::default() });
        let mut r = controller(MpcConfig { mode: SchedulingMode::Reference, ..Default::default() });
        let (uf, _) = f.step(&x, &last, &win).unwrap();
        let (ur, _) = r.step(&x, &last, &win).unwrap();
        assert!((uf.v - ur.v).abs() < 1e-9 && (uf.omega - ur.omega).abs() < 1e-9);
    }

    #[test]
    fn reference_schedule_follows_planner() {
        let x = KinematicErrorState::new(0.0, 0.0, 0.04);
        let win: Vec<_> = (0..=40)
            .map(|i| ReferenceSample { v: 5.0 + 5.0 * i as f64 / 40.0, omega: 0.1, ..Default::default() })
            .collect();
        let fz = scheduling_sequence(SchedulingMode::Frozen, &x, 0.3, &win, 40, 0.9);
        assert!(fz.iter().all(|p| *p == fz[0]));
        let rf = scheduling_sequence(SchedulingMode::Reference, &x, 0.3, &win, 40, 0.9);
        let a12: Vec<f64> =
            rf.iter().map(|p| crate::models::kinematic_matrices_at(p, 0.1).0[(1, 2)]).collect();
        assert!(a12.windows(2).all(|w| w[1] > w[0]));
        assert!((rf[3].get(2) - 0.04 * 0.9f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn infeasible_terminal_falls_back_then_ramps() {
        // far outside the terminal set with tiny rates: the terminal rows cannot be met
        let mut c = controller(MpcConfig { du_max: vec![0.01, 0.001], ..Default::default() });
        let x = KinematicErrorState::new(30.0, 10.0, 0.04);
        let last = KinematicInput::new(10.0, 0.0);
        let win = cruise(40, 10.0, 0.0);
        let (u1, d1) = c.step(&x, &last, &win).unwrap();
        assert_eq!(d1.status, MpcStatus::HoldLast);
        assert_eq!(u1, last);
        let (u2, d2) = c.step(&x, &u1, &win).unwrap();
        assert_eq!(d2.status, MpcStatus::SafetyRamp);
        assert!(u2.v < u1.v && (u1.v - u2.v) <= 0.01 + 1e-12);
    }

    #[test]
    fn cost_beats_doing_nothing() {
        let mut c = controller(MpcConfig::default());
        let x = KinematicErrorState::new(0.5, 0.1, 0.01);
        let (_, d) = c.step(&x, &KinematicInput::new(10.0, 0.0), &cruise(40, 10.0, 0.0)).unwrap();
        assert!(d.cost < d.idle_cost, "{} vs {}", d.cost, d.idle_cost);
    }

    #[test]
    fn deterministic_repeat() {
        let x = KinematicErrorState::new(0.3, -0.2, 0.02);
        let last = KinematicInput::new(9.0, 0.05);
        let win = cruise(40, 10.0, 0.1);
        let a = controller(MpcConfig::default()).step(&x, &last, &win).unwrap();
        let b = controller(MpcConfig::default()).step(&x, &last, &win).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.cost.to_bits(), b.1.cost.to_bits());
    }

    struct NominalRun {
        costs: Vec<f64>,
        levels: Vec<f64>,
        terminal_levels: Vec<f64>,
    }

    /// Nominal frozen-model closed loop from `x0`, zero deviation references.
    fn nominal_run(x0: DVector<f64>, steps: usize) -> NominalRun {
        let mut c = controller(MpcConfig { mode: SchedulingMode::Frozen, ..Default::default() });
        let (m, t) = artifacts();
        let win = cruise(40, 10.0, 0.0);
        let mut x = KinematicErrorState::from_slice(x0.as_slice());
        let mut u = KinematicInput::new(10.0, 0.0);
        let mut run = NominalRun { costs: vec![], levels: vec![], terminal_levels: vec![] };
        for _ in 0..steps {
            let prob = c.problem(&x, &u, &win).unwrap();
            let (un, d) = c.step(&x, &u, &win).unwrap();
            assert!(matches!(d.status, MpcStatus::Optimal | MpcStatus::Inaccurate), "{d:?}");
            let du = solve_qp(&prob.qp, None, &QpSettings::default()).unwrap().x;
            run.terminal_levels.push(t.level(&prob.predicted_state(&du, 40)));
            run.costs.push(d.cost);
            let a = m.blend_a(&m.weights(&SchedulingPoint::from([u.omega, 10.0, x.theta_e])));
            let dev = un.to_vector() - DVector::from_vec(vec![10.0 * x.theta_e.cos(), 0.0]);
            let xn = a * x.to_vector() + &m.vertex_b[0] * dev;
            x = KinematicErrorState::from_slice(xn.as_slice());
            run.levels.push(t.level(&x.to_vector()));
            u = un;
        }
        run
    }

    fn boundary_starts() -> Vec<DVector<f64>> {
        let (_, t) = artifacts();
        let l_inv_t = t.s.clone().cholesky().unwrap().l().transpose().try_inverse().unwrap();
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [0.5, -0.5, 0.7]]
            .iter()
            .map(|d| &l_inv_t * DVector::from_column_slice(d).normalize() * 0.9)
            .collect()
    }

    #[test]
    fn nominal_loop_is_recursively_feasible_and_converges() {
        for x0 in boundary_starts() {
            let run = nominal_run(x0, 100);
            assert!(run.terminal_levels.iter().all(|l| *l <= 1.0 + 1e-6), "{:?}", run.terminal_levels);
            assert!(*run.levels.last().unwrap() < 1e-3);
        }
    }

    #[test]
    fn nominal_cost_decreases() {
        for x0 in boundary_starts() {
            let run = nominal_run(x0, 100);
            for w in run.costs.windows(2) {
                assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn outputs_respect_bounds(
            xe in -3.0..3.0f64, ye in -2.0..2.0f64, th in -0.3..0.3f64,
            v in 0.0..18.0f64, w in -1.4..1.4f64, vd in 0.1..18.0f64, wd in -1.0..1.0f64,
        ) {
            let mut c = controller(MpcConfig::default());
            let last = KinematicInput::new(v, w);
            let (u, _) = c.step(&KinematicErrorState::new(xe, ye, th), &last, &cruise(40, vd, wd)).unwrap();
            prop_assert!(u.v >= 0.0 && u.v <= 18.0 && u.omega.abs() <= 1.4);
            prop_assert!((u.v - v).abs() <= 5.0 + 1e-12 && (u.omega - w).abs() <= 0.3 + 1e-12);
        }
    }
}
