//! Cascaded guidance stack for autonomous ground vehicles built on Takagi-Sugeno
//! (quasi-LPV) models.
//!
//! The outer loop is a kinematic tracking MPC whose prediction model is a convex
//! blend of linear vertex systems, which keeps the online problem a QP. The inner
//! loop runs a gain-scheduled LQR whose vertex gains come from an offline LMI
//! synthesis, fed by a moving-horizon estimator that is algebraically decoupled
//! from the unknown road-friction force (unknown-input observer). The friction
//! estimate is fed forward to the inner controller.
//!
//! Module map:
//!
//! * [`models`]: vehicle parameters, scheduling/membership functions, the kinematic
//!   and dynamic TS models and the nonlinear ground-truth plant.
//! * [`opt`]: dense QP solver and LMI/SDP barrier solver, plus independent
//!   certificate checks.
//! * [`synthesis`]: vertex gains, terminal ellipsoid, certification and the
//!   versioned artifact file.
//! * [`mpc`], [`lqr`], [`mhe`]: the online controllers and estimator.
//! * [`planner`]: reference generation and tracking errors.
//! * [`sim`]: the two-rate closed-loop executive, logging and metrics.
//! * [`config`]: the JSON run configuration.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod lqr;
pub mod mhe;
pub mod models;
pub mod mpc;
pub mod opt;
pub mod planner;
pub mod sim;
pub mod synthesis;

mod serde_mat;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use lqr::{DynamicSetpoint, LqrConfig, LqrController};
pub use mhe::{MheConfig, MheEstimator};
pub use models::{
    DynamicInput, DynamicState, Interval, KinematicErrorState, KinematicInput, MembershipWeights,
    PolytopicModel, Pose, SchedulingBounds, SchedulingPoint, VehicleParams,
};
pub use mpc::{MpcConfig, MpcController, SchedulingMode};
pub use planner::{Circuit, PlannerConfig, Trajectory};
pub use sim::{run, FrictionProfile, Metrics, NoiseConfig, SimLog, SimOutput};
pub use synthesis::{synthesize, GainTable, SynthesisArtifact, SynthesisInputs, TerminalSet};
