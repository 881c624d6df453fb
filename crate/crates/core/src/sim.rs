//! Two-rate closed loop: kinematic MPC every `tc`, then `tc / td` inner steps of sensor
//! noise, MHE, friction estimate, LQR and plant integration under a friction profile.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::lqr::{DynamicSetpoint, LqrController};
use crate::mhe::{MheEstimator, MheStatus};
use crate::models::{
    default_dynamic_bounds, plant_step, DynamicInput, DynamicModel, DynamicState, KinematicInput,
    VehicleParams,
};
use crate::mpc::{MpcController, MpcStatus, SchedulingMode};
use crate::planner::{plan, tracking_error, Trajectory};
use crate::synthesis::SynthesisArtifact;

/// Version of the CSV/JSON output layout.
pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionSegment {
    /// Start time (s).
    pub start: f64,
    /// Friction-force deviation from the nominal `mu0 M g` (N).
    pub force: f64,
}

/// Piecewise-constant friction deviation, passed through a first-order lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrictionProfile {
    pub segments: Vec<FrictionSegment>,
    /// Time constant of the lag between segments (s); 0 switches instantly.
    pub smoothing: f64,
}

impl Default for FrictionProfile {
    /// Dry asphalt, wet asphalt, dry earth and ice, 15 s each.
    fn default() -> Self {
        let seg = |start, force| FrictionSegment { start, force };
        Self {
            segments: vec![seg(0.0, 0.0), seg(15.0, -1005.0), seg(30.0, 670.0), seg(45.0, -3015.0)],
            smoothing: 0.3,
        }
    }
}

impl FrictionProfile {
    pub fn none() -> Self {
        Self { segments: vec![FrictionSegment { start: 0.0, force: 0.0 }], smoothing: 0.0 }
    }

    pub fn constant(force: f64) -> Self {
        Self { segments: vec![FrictionSegment { start: 0.0, force }], smoothing: 0.0 }
    }

    pub fn validate(&self, params: &VehicleParams) -> Result<()> {
        if self.segments.first().map(|s| s.start) != Some(0.0) {
            return Err(Error::Config("friction profile must start with a segment at t = 0".into()));
        }
        if self.segments.windows(2).any(|w| !(w[1].start > w[0].start)) {
            return Err(Error::Config("friction segment start times must increase".into()));
        }
        let limit = params.nominal_friction_force();
        if let Some(s) = self.segments.iter().find(|s| !(s.force.abs() < limit)) {
            return Err(Error::Config(format!(
                "friction deviation {} N at t = {} s must stay below mu0 M g = {limit:.1} N",
                s.force, s.start
            )));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::Config("friction smoothing must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Unsmoothed deviation in force at `t`.
    pub fn target(&self, t: f64) -> f64 {
        self.segments.iter().take_while(|s| s.start <= t).last().map_or(0.0, |s| s.force)
    }

    /// Force applied during each of `n` steps of length `td`.
    pub fn series(&self, td: f64, n: usize) -> Vec<f64> {
        let gain = if self.smoothing > 0.0 { 1.0 - (-td / self.smoothing).exp() } else { 1.0 };
        let mut f = self.target(0.0);
        (0..n)
            .map(|k| {
                let out = f;
                f += gain * (self.target((k + 1) as f64 * td) - f);
                out
            })
            .collect()
    }

    /// `[start, end)` of every segment, the last one ending at `horizon`.
    pub fn intervals(&self, horizon: f64) -> Vec<(f64, f64, f64)> {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| (s.start, self.segments.get(i + 1).map_or(horizon, |n| n.start), s.force))
            .collect()
    }
}

/// Gaussian noise on the speed and yaw-rate measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_v: f64,
    pub sigma_omega: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma_v: 0.05, sigma_omega: 0.01, seed: 0 }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self { sigma_v: 0.0, sigma_omega: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_v >= 0.0
            && self.sigma_omega >= 0.0
            && self.sigma_v.is_finite()
            && self.sigma_omega.is_finite())
        {
            return Err(Error::Config("noise standard deviations must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Simulated time (s).
    pub duration: f64,
    /// Initial interval left out of the RMSE (s).
    pub warmup: f64,
    /// Abort once the position error exceeds this distance (m).
    pub abort_distance: f64,
    /// Abort after this many consecutive MPC fallbacks.
    pub max_mpc_failures: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { duration: 60.0, warmup: 2.0, abort_distance: 25.0, max_mpc_failures: 20 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config("sim.duration must be positive".into()));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.duration) {
            return Err(Error::Config("sim.warmup must lie in [0, duration)".into()));
        }
        if !(self.abort_distance > 0.0) || self.max_mpc_failures == 0 {
            return Err(Error::Config("sim abort limits must be positive".into()));
        }
        Ok(())
    }
}

/// One row per inner step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub alpha: f64,
    pub omega: f64,
    pub v_meas: f64,
    pub omega_meas: f64,
    pub v_hat: f64,
    pub alpha_hat: f64,
    pub omega_hat: f64,
    pub f_fr: f64,
    pub f_fr_hat: f64,
    pub f_fr_raw: f64,
    pub v_ref: f64,
    pub omega_ref: f64,
    pub fx_r: f64,
    pub delta: f64,
    pub fx_feedback: f64,
    pub fx_friction_ff: f64,
    pub fx_equilibrium_ff: f64,
    pub z_v: f64,
    pub z_omega: f64,
    pub mhe_status: MheStatus,
    pub mhe_iterations: usize,
    pub lqr_held: bool,
    pub force_saturated: bool,
    pub steer_saturated: bool,
}

/// One row per outer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRow {
    pub t: f64,
    pub x_ref: f64,
    pub y_ref: f64,
    pub theta_ref: f64,
    pub v_d: f64,
    pub omega_d: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
    pub x_e: f64,
    pub y_e: f64,
    pub theta_e: f64,
    pub v_cmd: f64,
    pub omega_cmd: f64,
    pub mpc_cost: f64,
    pub mpc_status: MpcStatus,
    pub mpc_iterations: usize,
    pub terminal_active: bool,
}

/// Everything the run recorded except wall-clock timing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub inner: Vec<InnerRow>,
    pub outer: Vec<OuterRow>,
}

impl SimLog {
    pub fn inner_csv(&self) -> Result<Vec<u8>> {
        to_csv(&self.inner)
    }

    pub fn outer_csv(&self) -> Result<Vec<u8>> {
        to_csv(&self.outer)
    }

    /// SHA-256 over both CSV tables; equal digests mean bit-identical logs.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.inner_csv()?);
        h.update(self.outer_csv()?);
        Ok(hex::encode(h.finalize()))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        Ok(Self { inner: from_csv(&dir.join("inner.csv"))?, outer: from_csv(&dir.join("outer.csv"))? })
    }

    /// Keeps the first `outer` outer periods and their inner rows.
    pub fn truncate(&mut self, outer: usize) {
        if outer >= self.outer.len() {
            return;
        }
        let ratio = self.inner.len() / self.outer.len().max(1);
        self.outer.truncate(outer);
        self.inner.truncate(outer * ratio);
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn from_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Solve times in seconds, kept apart from the log so the log stays reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timing {
    pub mpc: Vec<f64>,
    pub mhe: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl TimeStats {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |p: f64| s[((p * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Self { p50: rank(0.5), p95: rank(0.95), max: s[s.len() - 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub mode: SchedulingMode,
    pub seed: u64,
    /// Simulated time actually covered (s).
    pub duration: f64,
    pub completed: bool,
    pub failure: Option<String>,
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub rmse_theta: f64,
    pub rmse_v: f64,
    pub rmse_omega: f64,
    /// Integral of `|F_xR|` (N s).
    pub effort_force: f64,
    /// Integral of the state-feedback part of `F_xR` (N s).
    pub effort_feedback_force: f64,
    /// Integral of `|d delta / dt|` (rad).
    pub effort_steer_rate: f64,
    pub mpc_time: TimeStats,
    pub mhe_time: TimeStats,
    pub mpc_fallbacks: usize,
    pub mhe_fallbacks: usize,
    pub lqr_holds: usize,
}

pub const METRIC_NAMES: [&str; 5] = ["rmse_x", "rmse_y", "rmse_theta", "rmse_v", "rmse_omega"];

impl Metrics {
    pub fn rmse(&self) -> [f64; 5] {
        [self.rmse_x, self.rmse_y, self.rmse_theta, self.rmse_v, self.rmse_omega]
    }

    /// Errors over the outer rows at or after `warmup`; efforts over all inner rows.
    pub fn from_log(log: &SimLog, td: f64, warmup: f64, timing: Option<&Timing>) -> Self {
        let rows: Vec<&OuterRow> = log.outer.iter().filter(|r| r.t >= warmup - 1e-9).collect();
        let rms = |f: &dyn Fn(&OuterRow) -> f64| {
            if rows.is_empty() {
                f64::NAN
            } else {
                (rows.iter().map(|r| f(r).powi(2)).sum::<f64>() / rows.len() as f64).sqrt()
            }
        };
        let steer = log.inner.windows(2).map(|w| (w[1].delta - w[0].delta).abs()).sum();
        Self {
            schema_version: LOG_SCHEMA_VERSION,
            mode: SchedulingMode::default(),
            seed: 0,
            duration: log.outer.len() as f64 * td * (log.inner.len() as f64 / log.outer.len().max(1) as f64),
            completed: true,
            failure: None,
            rmse_x: rms(&|r| r.x_e),
            rmse_y: rms(&|r| r.y_e),
            rmse_theta: rms(&|r| r.theta_e),
            rmse_v: rms(&|r| r.v - r.v_d),
            rmse_omega: rms(&|r| r.omega - r.omega_d),
            effort_force: log.inner.iter().map(|r| r.fx_r.abs() * td).sum(),
            effort_feedback_force: log.inner.iter().map(|r| r.fx_feedback.abs() * td).sum(),
            effort_steer_rate: steer,
            mpc_time: timing.map(|t| TimeStats::from_samples(&t.mpc)).unwrap_or_default(),
            mhe_time: timing.map(|t| TimeStats::from_samples(&t.mhe)).unwrap_or_default(),
            mpc_fallbacks: log
                .outer
                .iter()
                .filter(|r| matches!(r.mpc_status, MpcStatus::HoldLast | MpcStatus::SafetyRamp))
                .count(),
            mhe_fallbacks: log.inner.iter().filter(|r| r.mhe_status != MheStatus::Optimal).count(),
            lqr_holds: log.inner.iter().filter(|r| r.lqr_held).count(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
        let version = value.get("schema_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(LOG_SCHEMA_VERSION)) {
            return Err(Error::Schema(format!(
                "{}: schema_version {version:?}, expected {LOG_SCHEMA_VERSION}",
                path.display()
            )));
        }
        serde_json::from_value(value).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub log: SimLog,
    pub metrics: Metrics,
    pub timing: Timing,
    pub reference: Trajectory,
}

impl SimOutput {
    /// Writes `inner.csv`, `outer.csv`, `reference.csv` and `metrics.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("inner.csv"), self.log.inner_csv()?)?;
        fs::write(dir.join("outer.csv"), self.log.outer_csv()?)?;
        self.reference.write_csv(fs::File::create(dir.join("reference.csv"))?)?;
        let mut f = fs::File::create(dir.join("metrics.json"))?;
        f.write_all(serde_json::to_string_pretty(&self.metrics)?.as_bytes())?;
        Ok(())
    }
}

/// Runs the closed loop. Controller or plant failures end the run early with
/// `completed = false`; configuration and artifact problems are errors.
pub fn run(cfg: &RunConfig, artifact: &SynthesisArtifact) -> Result<SimOutput> {
    cfg.validate()?;
    let expected = cfg.synthesis_inputs().hash();
    if artifact.config_hash != expected {
        return Err(Error::Artifact(format!(
            "artifact was synthesized for configuration {}, this run needs {expected}",
            artifact.config_hash
        )));
    }
    let (tc, td) = (cfg.tc, cfg.td);
    let ratio = cfg.inner_steps();
    let n_outer = (cfg.sim.duration / tc).round() as usize;
    let horizon = cfg.mpc.horizon;
    let reference = plan(&cfg.planner, tc, (n_outer + horizon) as f64 * tc)?;
    let friction = cfg.friction.series(td, n_outer * ratio);

    let mut mpc = MpcController::new(
        cfg.mpc.clone(),
        artifact.kinematic.model.clone(),
        artifact.kinematic.terminal.clone(),
    )?;
    let model = DynamicModel::new(cfg.vehicle, &default_dynamic_bounds(), td, cfg.mhe.evaluation);
    let r0 = reference.at(0);
    let mut state = DynamicState::new(r0.v, 0.0, r0.omega);
    let mut pose = r0.pose();
    let mut mhe = MheEstimator::new(cfg.mhe.clone(), model, state)?;
    let mut lqr = LqrController::new(cfg.lqr.clone(), cfg.vehicle, &artifact.dynamic)?;
    lqr.reset(0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed);
    let noise_v = Normal::new(0.0, cfg.noise.sigma_v).map_err(|e| Error::Config(e.to_string()))?;
    let noise_w = Normal::new(0.0, cfg.noise.sigma_omega).map_err(|e| Error::Config(e.to_string()))?;

    let mut log = SimLog::default();
    let mut timing = Timing::default();
    let mut command = KinematicInput::new(r0.v, r0.omega);
    let mut last_input: Option<DynamicInput> = None;
    let mut yaw_rate = state.omega;
    let mut mpc_failures = 0;
    let mut failure = None;

    'outer: for k in 0..n_outer {
        let t = k as f64 * tc;
        let r = reference.at(k);
        let err = tracking_error(&pose, &r);
        if err.x_e.hypot(err.y_e) > cfg.sim.abort_distance {
            failure = Some(format!("position error exceeded {} m at t = {t:.2} s", cfg.sim.abort_distance));
            break;
        }
        let window = reference.window(k, horizon);
        let (u, diag) = match mpc.step_at(&err, &command, yaw_rate, &window) {
            Ok(out) => out,
            Err(e) => {
                failure = Some(format!("mpc error at t = {t:.2} s: {e}"));
                break;
            }
        };
        timing.mpc.push(diag.solve_time.as_secs_f64());
        if matches!(diag.status, MpcStatus::HoldLast | MpcStatus::SafetyRamp) {
            mpc_failures += 1;
        } else {
            mpc_failures = 0;
        }
        command = u;
        log.outer.push(OuterRow {
            t,
            x_ref: r.x,
            y_ref: r.y,
            theta_ref: r.theta,
            v_d: r.v,
            omega_d: r.omega,
            x: pose.x,
            y: pose.y,
            theta: pose.theta,
            v: state.v,
            omega: state.omega,
            x_e: err.x_e,
            y_e: err.y_e,
            theta_e: err.theta_e,
            v_cmd: u.v,
            omega_cmd: u.omega,
            mpc_cost: diag.cost,
            mpc_status: diag.status,
            mpc_iterations: diag.iterations,
            terminal_active: diag.terminal_active,
        });
        if mpc_failures >= cfg.sim.max_mpc_failures {
            failure = Some(format!("{mpc_failures} consecutive mpc fallbacks at t = {t:.2} s"));
            break;
        }

        let setpoint = DynamicSetpoint::new(u.v, u.omega);
        for i in 0..ratio {
            let n = k * ratio + i;
            let ti = n as f64 * td;
            let y = [state.v + noise_v.sample(&mut rng), state.omega + noise_w.sample(&mut rng)];
            let est = match mhe.update(y, last_input.as_ref()) {
                Ok(e) => e,
                Err(e) => {
                    failure = Some(format!("mhe error at t = {ti:.2} s: {e}"));
                    break 'outer;
                }
            };
            timing.mhe.push(est.solve_time.as_secs_f64());
            yaw_rate = est.estimate.omega;
            let out = lqr.step(&setpoint, &est.estimate, est.friction);
            let z = lqr.integrals();
            log.inner.push(InnerRow {
                t: ti,
                x: pose.x,
                y: pose.y,
                theta: pose.theta,
                v: state.v,
                alpha: state.alpha,
                omega: state.omega,
                v_meas: y[0],
                omega_meas: y[1],
                v_hat: est.estimate.v,
                alpha_hat: est.estimate.alpha,
                omega_hat: est.estimate.omega,
                f_fr: friction[n],
                f_fr_hat: est.friction,
                f_fr_raw: est.friction_raw,
                v_ref: setpoint.v_ref,
                omega_ref: setpoint.omega_ref,
                fx_r: out.input.fx_r,
                delta: out.input.delta,
                fx_feedback: out.feedback_force,
                fx_friction_ff: out.friction_feedforward,
                fx_equilibrium_ff: out.equilibrium_feedforward,
                z_v: z[0],
                z_omega: z[1],
                mhe_status: est.status,
                mhe_iterations: est.iterations,
                lqr_held: out.held,
                force_saturated: out.force_saturated,
                steer_saturated: out.steer_saturated,
            });
            match plant_step(&pose, &state, &out.input, friction[n], &cfg.vehicle, td) {
                Ok((p, s)) => {
                    pose = p;
                    state = s;
                }
                Err(e) => {
                    failure = Some(format!("plant diverged at t = {ti:.2} s: {e}"));
                    // keep the outer/inner alignment for truncated logs
                    log.inner.truncate(k * ratio);
                    log.outer.truncate(k);
                    break 'outer;
                }
            }
            last_input = Some(out.input);
        }
    }
    if let Some(f) = &failure {
        warn!("run aborted: {f}");
        if log.inner.len() != log.outer.len() * ratio {
            let full = log.inner.len() / ratio;
            log.outer.truncate(full);
            log.inner.truncate(full * ratio);
        }
    }
    let mut metrics = Metrics::from_log(&log, td, cfg.sim.warmup, Some(&timing));
    metrics.mode = cfg.mpc.mode;
    metrics.seed = cfg.noise.seed;
    metrics.completed = failure.is_none();
    metrics.failure = failure;
    info!(
        "run finished ({:?}, seed {}): rmse x {:.4} y {:.4} theta {:.4} v {:.4} omega {:.4}",
        metrics.mode,
        metrics.seed,
        metrics.rmse_x,
        metrics.rmse_y,
        metrics.rmse_theta,
        metrics.rmse_v,
        metrics.rmse_omega
    );
    Ok(SimOutput { log, metrics, timing, reference })
}

/// Per-metric values across runs with the winner (smallest value) of each column.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub metrics: Vec<Metrics>,
    /// Index into `labels` per entry of [`METRIC_NAMES`]; ties go to the first run.
    pub winners: Vec<usize>,
}

/// Compares runs. When every run brings its log, metrics are recomputed over the
/// common prefix so runs of different length stay comparable.
pub fn compare(runs: Vec<(String, Metrics, Option<SimLog>)>, td: f64, warmup: f64) -> Result<Comparison> {
    if runs.len() < 2 {
        return Err(Error::Config("compare needs at least two runs".into()));
    }
    let all_logs = runs.iter().all(|r| r.2.is_some());
    let lens: Vec<usize> = runs.iter().filter_map(|r| r.2.as_ref().map(|l| l.outer.len())).collect();
    let common = lens.iter().copied().min().unwrap_or(0);
    let durations: Vec<f64> = runs.iter().map(|r| r.1.duration).collect();
    let misaligned = if all_logs {
        lens.iter().any(|&l| l != common)
    } else {
        durations.iter().any(|d| (d - durations[0]).abs() > 1e-9)
    };
    if misaligned {
        warn!("compare: runs differ in length; comparing the common prefix");
    }
    let mut labels = Vec::new();
    let mut metrics = Vec::new();
    for (label, m, log) in runs {
        let m = match log {
            Some(mut log) if all_logs && misaligned => {
                log.truncate(common);
                let mut fresh = Metrics::from_log(&log, td, warmup, None);
                fresh.mode = m.mode;
                fresh.seed = m.seed;
                fresh.completed = m.completed;
                fresh.failure = m.failure;
                fresh.mpc_time = m.mpc_time;
                fresh.mhe_time = m.mhe_time;
                fresh
            }
            _ => m,
        };
        labels.push(label);
        metrics.push(m);
    }
    let winners = (0..METRIC_NAMES.len())
        .map(|j| {
            (0..metrics.len())
                .min_by(|&a, &b| metrics[a].rmse()[j].total_cmp(&metrics[b].rmse()[j]))
                .unwrap_or(0)
        })
        .collect();
    Ok(Comparison { labels, metrics, winners })
}

impl Comparison {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["run".to_string()];
        header.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
        header.extend(["effort_force", "effort_feedback_force", "mpc_p95", "mhe_p95"].map(String::from));
        w.write_record(&header)?;
        for (l, m) in self.labels.iter().zip(&self.metrics) {
            let mut rec = vec![l.clone()];
            rec.extend(m.rmse().iter().map(f64::to_string));
            rec.extend(
                [m.effort_force, m.effort_feedback_force, m.mpc_time.p95, m.mhe_time.p95]
                    .map(|v| v.to_string()),
            );
            w.write_record(&rec)?;
        }
        let mut rec = vec!["winner".to_string()];
        rec.extend(self.winners.iter().map(|&i| self.labels[i].clone()));
        rec.extend(["", "", "", ""].map(String::from));
        w.write_record(&rec)?;
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    /// Fixed-width table with the winner of each column and deltas against the first run.
    pub fn to_text(&self) -> String {
        let width = self.labels.iter().map(String::len).max().unwrap_or(3).max(6);
        let mut out = format!("{:width$}", "run");
        for n in METRIC_NAMES {
            out += &format!(" {n:>12}");
        }
        out.push('\n');
        for (l, m) in self.labels.iter().zip(&self.metrics) {
            out += &format!("{l:width$}");
            for v in m.rmse() {
                out += &format!(" {v:>12.5}");
            }
            out.push('\n');
        }
        for (l, m) in self.labels.iter().zip(&self.metrics).skip(1) {
            out += &format!("{:width$}", format!("d({l})"));
            for (v, base) in m.rmse().iter().zip(self.metrics[0].rmse()) {
                out += &format!(" {:>+12.5}", v - base);
            }
            out.push('\n');
        }
        out += &format!("{:width$}", "winner");
        for &i in &self.winners {
            out += &format!(" {:>12}", self.labels[i]);
        }
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use super::*;
    use crate::planner::Circuit;
    use crate::synthesis::synthesize;

    fn artifact() -> &'static SynthesisArtifact {
        static A: OnceLock<SynthesisArtifact> = OnceLock::new();
        A.get_or_init(|| synthesize(&RunConfig::default().synthesis_inputs()).unwrap())
    }

    fn short(duration: f64) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.sim.duration = duration;
        cfg.sim.warmup = cfg.sim.warmup.min(duration / 2.0);
        cfg
    }

    #[test]
    fn friction_series_smooths_steps() {
        let p = FrictionProfile::default();
        let f = p.series(0.01, 6000);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1499], 0.0);
        assert!(f[1501] < 0.0 && f[1501] > -100.0);
        assert!((f[1500 + 150] + 1005.0).abs() < 1005.0 * 0.01);
        assert!((f[5999] + 3015.0).abs() < 1e-3);
        assert_eq!(FrictionProfile::constant(500.0).series(0.01, 3), vec![500.0; 3]);
        assert!(p.validate(&VehicleParams::default()).is_ok());
        assert!(FrictionProfile::constant(-3400.0).validate(&VehicleParams::default()).is_err());
    }

    #[test]
    fn percentiles_by_rank() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        let t = TimeStats::from_samples(&s);
        assert_eq!((t.p50, t.p95, t.max), (50.0, 95.0, 100.0));
    }

    #[test]
    fn straight_line_without_disturbances() {
        let mut cfg = short(20.0);
        cfg.planner.circuit = Circuit {
            waypoints: vec![[0.0, 0.0], [1000.0, 0.0]],
            closed: false,
            corner_radius: 0.0,
            speed_caps: vec![12.0],
        };
        cfg.noise = NoiseConfig::off();
        cfg.friction = FrictionProfile::none();
        let out = run(&cfg, artifact()).unwrap();
        assert!(out.metrics.completed, "{:?}", out.metrics.failure);
        assert!(out.metrics.rmse_x < 0.05, "{:?}", out.metrics);
    }

    #[test]
    fn rate_contract_and_log_shape() {
        let out = run(&short(3.0), artifact()).unwrap();
        assert!(out.metrics.completed);
        assert_eq!(out.log.outer.len(), 30);
        assert_eq!(out.log.inner.len(), 300);
        for (k, o) in out.log.outer.iter().enumerate() {
            let rows = &out.log.inner[k * 10..(k + 1) * 10];
            assert!(rows.iter().all(|r| r.v_ref == o.v_cmd && r.omega_ref == o.omega_cmd));
            assert!((rows[0].t - o.t).abs() < 1e-12);
        }
        assert!(out.log.inner.windows(2).all(|w| w[1].t > w[0].t));
        assert_eq!(out.timing.mpc.len(), 30);
        assert_eq!(out.timing.mhe.len(), 300);
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let a = run(&short(4.0), artifact()).unwrap();
        let b = run(&short(4.0), artifact()).unwrap();
        assert_eq!(a.log.digest().unwrap(), b.log.digest().unwrap());
        let mut other = short(4.0);
        other.noise.seed = 1;
        let c = run(&other, artifact()).unwrap();
        assert_ne!(a.log.digest().unwrap(), c.log.digest().unwrap());
    }

    #[test]
    fn hash_mismatch_is_rejected() {
        let mut cfg = short(1.0);
        cfg.synthesis.q_lqr[0] = 1.0;
        assert!(matches!(run(&cfg, artifact()), Err(Error::Artifact(_))));
    }

    #[test]
    fn logs_round_trip_through_csv() {
        let out = run(&short(2.0), artifact()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.write(dir.path()).unwrap();
        let back = SimLog::read_dir(dir.path()).unwrap();
        assert_eq!(back.digest().unwrap(), out.log.digest().unwrap());
        let m = Metrics::load(&dir.path().join("metrics.json")).unwrap();
        assert_eq!(m.rmse(), out.metrics.rmse());
    }

    #[test]
    fn compare_against_itself_has_zero_deltas() {
        let out = run(&short(3.0), artifact()).unwrap();
        let runs = vec![
            ("a".to_string(), out.metrics.clone(), Some(out.log.clone())),
            ("b".to_string(), out.metrics.clone(), Some(out.log.clone())),
        ];
        let cmp = compare(runs, 0.01, 2.0).unwrap();
        assert_eq!(cmp.metrics[0].rmse(), cmp.metrics[1].rmse());
        assert!(cmp.winners.iter().all(|&w| w == 0));
        assert!(cmp.to_text().contains("+0.00000"));
        let csv = String::from_utf8(cmp.to_csv().unwrap()).unwrap();
        assert!(csv.starts_with("run,rmse_x,rmse_y,rmse_theta,rmse_v,rmse_omega"));
    }

    #[test]
    fn compare_uses_common_prefix() {
        let long = run(&short(4.0), artifact()).unwrap();
        let short_run = run(&short(3.0), artifact()).unwrap();
        let runs = vec![
            ("long".to_string(), long.metrics.clone(), Some(long.log.clone())),
            ("short".to_string(), short_run.metrics.clone(), Some(short_run.log.clone())),
        ];
        let cmp = compare(runs, 0.01, 2.0).unwrap();
        assert_eq!(cmp.metrics[0].rmse(), cmp.metrics[1].rmse());
    }
}
