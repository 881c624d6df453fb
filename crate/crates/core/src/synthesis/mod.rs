//! Offline stage: vertex gains, terminal ellipsoid, certification and the artifact file.

mod artifact;
mod augment;
mod certify;
mod gains;
mod terminal;

use log::info;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use artifact::{DynamicArtifact, KinematicArtifact, SynthesisArtifact, ARTIFACT_VERSION};
pub use augment::{augment_dynamic_model, AugmentSpec};
pub use certify::{certify, spectral_radius, CertificationReport, CertifyOptions, TerminalReport, Witness};
pub use gains::{diag, synthesize_vertex_gains, GainObjective, GainTable};
pub use terminal::{synthesize_terminal_set, TerminalSet};

use crate::error::{Error, Result};
use crate::models::{
    default_kinematic_bounds, dynamic_polytope, kinematic_polytope, Interval, SchedulingBounds, VehicleParams,
};
use crate::opt::LmiSettings;

/// Lowest speed of the box the dynamic gains are synthesized over.
pub const DYNAMIC_SYNTHESIS_V_MIN: f64 = 2.0;

/// Configuration subset the offline stage depends on; its hash keys the artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisInputs {
    pub vehicle: VehicleParams,
    pub tc: f64,
    pub td: f64,
    pub kinematic_bounds: SchedulingBounds,
    pub dynamic_bounds: SchedulingBounds,
    pub q_ts: Vec<f64>,
    pub r_ts: Vec<f64>,
    pub terminal_input_bound: Vec<f64>,
    pub q_lqr: Vec<f64>,
    pub r_lqr: Vec<f64>,
    pub filter_pole: f64,
    pub kinematic_objective: GainObjective,
    pub dynamic_objective: GainObjective,
    pub certify: CertifyOptions,
    pub lmi_feas_tol: f64,
    pub lmi_gap_tol: f64,
}

pub fn default_dynamic_synthesis_bounds() -> SchedulingBounds {
    SchedulingBounds(vec![
        Interval::new(-1.42, 1.42),
        Interval::new(DYNAMIC_SYNTHESIS_V_MIN, 20.0),
        Interval::new(-0.1, 0.1),
    ])
}

impl Default for SynthesisInputs {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            tc: 0.1,
            td: 0.01,
            kinematic_bounds: default_kinematic_bounds(),
            dynamic_bounds: default_dynamic_synthesis_bounds(),
            q_ts: vec![1.0, 1.5, 3.0],
            r_ts: vec![1.0, 3.0],
            terminal_input_bound: vec![18.0, 1.4],
            q_lqr: vec![2500.0, 0.1, 0.1, 0.1, 100_000.0, 90_000.0],
            r_lqr: vec![0.001, 9.0],
            filter_pole: 0.6,
            kinematic_objective: GainObjective::default(),
            dynamic_objective: GainObjective::default(),
            certify: CertifyOptions::default(),
            lmi_feas_tol: 1e-8,
            lmi_gap_tol: 1e-8,
        }
    }
}

impl SynthesisInputs {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("synthesis inputs serialize");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn lmi_settings(&self) -> LmiSettings {
        LmiSettings { feas_tol: self.lmi_feas_tol, gap_tol: self.lmi_gap_tol, ..LmiSettings::default() }
    }

    /// Steering filtered, drive force through its `alpha = 0` column, integrals on speed and yaw rate.
    pub fn augment_spec(&self) -> AugmentSpec {
        AugmentSpec {
            filter_poles: vec![None, Some(self.filter_pole)],
            nominal_columns: vec![Some(vec![self.td / self.vehicle.mass, 0.0, 0.0]), None],
            integral_channels: vec![0, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.kinematic_bounds.validate()?;
        self.dynamic_bounds.validate()?;
        if self.kinematic_bounds.len() != 3 || self.dynamic_bounds.len() != 3 {
            return Err(Error::Config("both scheduling boxes need exactly three variables".into()));
        }
        let lens = [
            ("q_ts", self.q_ts.len(), 3),
            ("r_ts", self.r_ts.len(), 2),
            ("terminal_input_bound", self.terminal_input_bound.len(), 2),
            ("q_lqr", self.q_lqr.len(), 6),
            ("r_lqr", self.r_lqr.len(), 2),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(Error::Config(format!("{name} needs {want} entries, got {got}")));
            }
        }
        if !(self.tc > 0.0 && self.td > 0.0) {
            return Err(Error::Config("sample times must be positive".into()));
        }
        Ok(())
    }
}

/// Runs the full offline pipeline and refuses to return an uncertified artifact.
pub fn synthesize(inputs: &SynthesisInputs) -> Result<SynthesisArtifact> {
    inputs.validate()?;
    let lmi = inputs.lmi_settings();

    let kin = kinematic_polytope(&inputs.kinematic_bounds, inputs.tc);
    let kin_gains = synthesize_vertex_gains(
        &kin,
        &diag(&inputs.q_ts),
        &diag(&inputs.r_ts),
        inputs.kinematic_objective,
        &lmi,
    )?;
    info!("kinematic vertex gains: margin {:.4}", kin_gains.margin);
    let u_bar = DVector::from_column_slice(&inputs.terminal_input_bound);
    let terminal = synthesize_terminal_set(&kin, &kin_gains, &u_bar, &lmi)?;
    info!("terminal set S = {:?}", terminal.s.as_slice());
    let kin_report = certify(&kin, &kin_gains, Some(&terminal), &inputs.certify);

    let dynamic = dynamic_polytope(&inputs.dynamic_bounds, &inputs.vehicle, inputs.td);
    let spec = inputs.augment_spec();
    let aug = augment_dynamic_model(&dynamic, &spec)?;
    let dyn_gains = synthesize_vertex_gains(
        &aug,
        &diag(&inputs.q_lqr),
        &diag(&inputs.r_lqr),
        inputs.dynamic_objective,
        &lmi,
    )?;
    info!("dynamic vertex gains: margin {:.4e}", dyn_gains.margin);
    let dyn_report = certify(&aug, &dyn_gains, None, &inputs.certify);

    for (what, rep) in [("kinematic", &kin_report), ("dynamic", &dyn_report)] {
        if let Some(w) = rep.witnesses.first() {
            return Err(Error::Certification(format!(
                "{what}: {} witnesses, first: {} at sample {} ({:.6e} vs limit {:.6e})",
                rep.witnesses.len(),
                w.check,
                w.sample,
                w.value,
                w.limit
            )));
        }
    }
    Ok(SynthesisArtifact {
        version: ARTIFACT_VERSION,
        config_hash: inputs.hash(),
        kinematic: KinematicArtifact { model: kin, gains: kin_gains, terminal, report: kin_report },
        dynamic: DynamicArtifact { model: aug, augment: spec, gains: dyn_gains, report: dyn_report },
    })
}
