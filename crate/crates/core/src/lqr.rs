//! Gain-scheduled inner loop: blended vertex gains on the augmented error state, friction
//! feedforward, steering filter and integrator anti-windup.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    dynamic_matrices_at, DynamicInput, DynamicState, PolytopicModel, SchedulingPoint, VehicleParams, V_FLOOR,
};
use crate::synthesis::{AugmentSpec, DynamicArtifact, GainTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqrConfig {
    /// Symmetric limit on the drive force (N).
    pub force_limit: f64,
    /// Symmetric limit on the steering angle (rad).
    pub steer_limit: f64,
    /// Symmetric clamp on each integral state.
    pub integral_limit: f64,
    /// Add `F_fr_hat / cos(alpha_hat)` to the drive force.
    pub friction_feedforward: bool,
    /// Add the drive force that holds the model at the setpoint with the current
    /// slip and steering, so the integrators only carry model error.
    pub equilibrium_feedforward: bool,
    /// Clamp applied to `alpha_hat` inside the feedforward division.
    pub alpha_clamp: f64,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self {
            force_limit: 6000.0,
            steer_limit: 1.42,
            integral_limit: 10.0,
            friction_feedforward: true,
            equilibrium_feedforward: true,
            alpha_clamp: 0.1,
        }
    }
}

impl LqrConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("force_limit", self.force_limit),
            ("steer_limit", self.steer_limit),
            ("integral_limit", self.integral_limit),
            ("alpha_clamp", self.alpha_clamp),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("lqr.{name} must be finite and > 0")));
            }
        }
        if self.alpha_clamp >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config("lqr.alpha_clamp must stay below pi/2".into()));
        }
        Ok(())
    }
}

/// Speed and yaw-rate command from the outer loop, held over the inner period.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DynamicSetpoint {
    pub v_ref: f64,
    pub omega_ref: f64,
}

impl DynamicSetpoint {
    pub fn new(v_ref: f64, omega_ref: f64) -> Self {
        Self { v_ref, omega_ref }
    }
}

/// `[e_v, alpha, e_omega, x_f, z_v, z_omega]`.
pub type AugmentedState = [f64; 6];

/// `K(theta) = sum_i mu_i(theta) K_i` over the box of `model`.
pub fn blend_gain(model: &PolytopicModel, table: &GainTable, point: &SchedulingPoint) -> DMatrix<f64> {
    table.at(model, point)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqrOutput {
    /// Command sent to the plant.
    pub input: DynamicInput,
    /// Drive force from state feedback alone.
    pub feedback_force: f64,
    pub friction_feedforward: f64,
    pub equilibrium_feedforward: f64,
    pub force_saturated: bool,
    pub steer_saturated: bool,
    /// The estimate was not finite and the previous command was held.
    pub held: bool,
    pub state: AugmentedState,
}

#[derive(Debug, Clone)]
pub struct LqrController {
    pub config: LqrConfig,
    params: VehicleParams,
    td: f64,
    model: PolytopicModel,
    table: GainTable,
    filter_pole: f64,
    x_f: f64,
    z: [f64; 2],
    last: DynamicInput,
}

impl LqrController {
    pub fn new(config: LqrConfig, params: VehicleParams, artifact: &DynamicArtifact) -> Result<Self> {
        config.validate()?;
        let pole = steering_pole(&artifact.augment)?;
        if artifact.model.n_states() != 6 || artifact.gains.gains.iter().any(|k| k.shape() != (2, 6)) {
            return Err(Error::Artifact("dynamic gains must map 6 augmented states to 2 inputs".into()));
        }
        Ok(Self {
            config,
            params,
            td: artifact.model.sample_time,
            model: artifact.model.clone(),
            table: artifact.gains.clone(),
            filter_pole: pole,
            x_f: 0.0,
            z: [0.0; 2],
            last: DynamicInput::default(),
        })
    }

    pub fn reset(&mut self, steering: f64) {
        self.x_f = steering;
        self.z = [0.0; 2];
        self.last = DynamicInput::new(0.0, steering);
    }

    pub fn integrals(&self) -> [f64; 2] {
        self.z
    }

    pub fn set_integrals(&mut self, z: [f64; 2]) {
        self.z = z;
    }

    pub fn steering(&self) -> f64 {
        self.x_f
    }

    /// One inner step. The returned steering is the filter state in force this period;
    /// the filter then moves toward the new steering command.
    pub fn step(&mut self, setpoint: &DynamicSetpoint, estimate: &DynamicState, friction: f64) -> LqrOutput {
        let cfg = &self.config;
        let state = [
            estimate.v - setpoint.v_ref,
            estimate.alpha,
            estimate.omega - setpoint.omega_ref,
            self.x_f,
            self.z[0],
            self.z[1],
        ];
        if !estimate.is_finite()
            || !friction.is_finite()
            || !setpoint.v_ref.is_finite()
            || !setpoint.omega_ref.is_finite()
        {
            return LqrOutput {
                input: self.last,
                feedback_force: 0.0,
                friction_feedforward: 0.0,
                equilibrium_feedforward: 0.0,
                force_saturated: false,
                steer_saturated: false,
                held: true,
                state,
            };
        }
        let point = SchedulingPoint::from([self.x_f, estimate.v, estimate.alpha]);
        let k = blend_gain(&self.model, &self.table, &point);
        let u = &k * DVector::from_column_slice(&state);

        let alpha = estimate.alpha.clamp(-cfg.alpha_clamp, cfg.alpha_clamp);
        let ff_fr = if cfg.friction_feedforward { friction / alpha.cos() } else { 0.0 };
        let ff_eq = if cfg.equilibrium_feedforward { self.equilibrium_force(setpoint, alpha) } else { 0.0 };
        let force = u[0] + ff_fr + ff_eq;
        let fx = force.clamp(-cfg.force_limit, cfg.force_limit);
        let force_saturated = fx != force;

        let delta = self.x_f;
        let next = self.filter_pole * self.x_f + (1.0 - self.filter_pole) * u[1];
        self.x_f = next.clamp(-cfg.steer_limit, cfg.steer_limit);
        let steer_saturated = self.x_f != next;

        let lim = cfg.integral_limit;
        if !force_saturated {
            self.z[0] = (self.z[0] + self.td * state[0]).clamp(-lim, lim);
        }
        if !steer_saturated {
            self.z[1] = (self.z[1] + self.td * state[2]).clamp(-lim, lim);
        }
        self.last = DynamicInput::new(fx, delta);
        LqrOutput {
            input: self.last,
            feedback_force: u[0],
            friction_feedforward: ff_fr,
            equilibrium_feedforward: ff_eq,
            force_saturated,
            steer_saturated,
            held: false,
            state,
        }
    }

    /// Drive force that zeroes the speed derivative of the nominal model at
    /// `(v_ref, alpha, omega_ref)` with the steering in force.
    fn equilibrium_force(&self, sp: &DynamicSetpoint, alpha: f64) -> f64 {
        let v = sp.v_ref.max(V_FLOOR);
        let d = dynamic_matrices_at(&SchedulingPoint::from([self.x_f, v, alpha]), &self.params, self.td);
        let drift = (d.a[(0, 0)] - 1.0) * v
            + d.a[(0, 1)] * alpha
            + d.a[(0, 2)] * sp.omega_ref
            + d.b[(0, 1)] * self.x_f;
        -drift / d.b[(0, 0)]
    }
}

fn steering_pole(spec: &AugmentSpec) -> Result<f64> {
    match spec.filter_poles.as_slice() {
        [None, Some(p)] => Ok(*p),
        _ => Err(Error::Artifact("expected a filtered steering channel and a direct force channel".into())),
    }
}
