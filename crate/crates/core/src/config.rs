//! JSON run configuration. Every section has defaults; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqr::LqrConfig;
use crate::mhe::MheConfig;
use crate::models::{default_kinematic_bounds, SchedulingBounds, VehicleParams};
use crate::mpc::{MpcConfig, SchedulingMode};
use crate::planner::PlannerConfig;
use crate::sim::{FrictionProfile, NoiseConfig, SimConfig};
use crate::synthesis::{default_dynamic_synthesis_bounds, CertifyOptions, GainObjective, SynthesisInputs};

/// Offline-stage settings beyond the vehicle and sample times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub kinematic_bounds: SchedulingBounds,
    pub dynamic_bounds: SchedulingBounds,
    pub q_ts: Vec<f64>,
    pub r_ts: Vec<f64>,
    /// Input bound used when sizing the terminal ellipsoid.
    pub terminal_input_bound: Vec<f64>,
    pub q_lqr: Vec<f64>,
    pub r_lqr: Vec<f64>,
    /// Pole of the steering filter in the augmented dynamic model.
    pub filter_pole: f64,
    /// Certificate the kinematic (terminal-set) gains are chosen by.
    pub kinematic_objective: GainObjective,
    /// Certificate the inner-loop gains are chosen by.
    pub dynamic_objective: GainObjective,
    pub certify: CertifyOptions,
    pub lmi_feas_tol: f64,
    pub lmi_gap_tol: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        let d = SynthesisInputs::default();
        Self {
            kinematic_bounds: default_kinematic_bounds(),
            dynamic_bounds: default_dynamic_synthesis_bounds(),
            q_ts: d.q_ts,
            r_ts: d.r_ts,
            terminal_input_bound: d.terminal_input_bound,
            q_lqr: d.q_lqr,
            r_lqr: d.r_lqr,
            filter_pole: d.filter_pole,
            kinematic_objective: d.kinematic_objective,
            dynamic_objective: d.dynamic_objective,
            certify: d.certify,
            lmi_feas_tol: d.lmi_feas_tol,
            lmi_gap_tol: d.lmi_gap_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Outer (kinematic) sample time (s).
    pub tc: f64,
    /// Inner (dynamic) sample time (s).
    pub td: f64,
    pub vehicle: VehicleParams,
    pub planner: PlannerConfig,
    pub mpc: MpcConfig,
    pub mhe: MheConfig,
    pub lqr: LqrConfig,
    pub synthesis: SynthesisConfig,
    pub friction: FrictionProfile,
    pub noise: NoiseConfig,
    pub sim: SimConfig,
    /// Where `simulate` writes its logs when no directory is given on the command line.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tc: 0.1,
            td: 0.01,
            vehicle: VehicleParams::default(),
            planner: PlannerConfig::default(),
            mpc: MpcConfig::default(),
            mhe: MheConfig::default(),
            lqr: LqrConfig::default(),
            synthesis: SynthesisConfig::default(),
            friction: FrictionProfile::default(),
            noise: NoiseConfig::default(),
            sim: SimConfig::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn inner_steps(&self) -> usize {
        (self.tc / self.td).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tc > 0.0 && self.td > 0.0 && self.tc.is_finite()) {
            return Err(Error::Config("sample times must be positive".into()));
        }
        let ratio = self.tc / self.td;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::Config(format!("tc / td must be a positive integer (got {ratio})")));
        }
        self.vehicle.validate()?;
        self.planner.validate()?;
        self.mpc.validate()?;
        self.mhe.validate()?;
        self.lqr.validate()?;
        self.friction.validate(&self.vehicle)?;
        self.noise.validate()?;
        self.sim.validate()?;
        self.synthesis_inputs().validate()
    }

    pub fn mode(&self) -> SchedulingMode {
        self.mpc.mode
    }

    /// The subset the offline stage depends on; its hash keys the artifact.
    pub fn synthesis_inputs(&self) -> SynthesisInputs {
        let s = &self.synthesis;
        SynthesisInputs {
            vehicle: self.vehicle,
            tc: self.tc,
            td: self.td,
            kinematic_bounds: s.kinematic_bounds.clone(),
            dynamic_bounds: s.dynamic_bounds.clone(),
            q_ts: s.q_ts.clone(),
            r_ts: s.r_ts.clone(),
            terminal_input_bound: s.terminal_input_bound.clone(),
            q_lqr: s.q_lqr.clone(),
            r_lqr: s.r_lqr.clone(),
            filter_pole: s.filter_pole,
            kinematic_objective: s.kinematic_objective,
            dynamic_objective: s.dynamic_objective,
            certify: s.certify,
            lmi_feas_tol: s.lmi_feas_tol,
            lmi_gap_tol: s.lmi_gap_tol,
        }
    }
}
