use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::dynamic::dynamic_matrices_at;
use super::params::VehicleParams;
use super::scheduling::SchedulingPoint;
use crate::error::{Error, Result};

/// Global pose `(X, Y, theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }
}

/// Body speed, slip angle and yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DynamicState {
    pub v: f64,
    pub alpha: f64,
    pub omega: f64,
}

impl DynamicState {
    pub fn new(v: f64, alpha: f64, omega: f64) -> Self {
        Self { v, alpha, omega }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.v, self.alpha, self.omega])
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self::new(x[0], x[1], x[2])
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.alpha.is_finite() && self.omega.is_finite()
    }
}

/// Rear longitudinal force and front steering angle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DynamicInput {
    pub fx_r: f64,
    pub delta: f64,
}

impl DynamicInput {
    pub fn new(fx_r: f64, delta: f64) -> Self {
        Self { fx_r, delta }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.fx_r, self.delta])
    }
}

/// One ground-truth step: the quasi-LPV matrices evaluated at the true state
/// plus slip-augmented unicycle pose integration.
pub fn plant_step(
    pose: &Pose,
    state: &DynamicState,
    input: &DynamicInput,
    f_fr: f64,
    params: &VehicleParams,
    td: f64,
) -> Result<(Pose, DynamicState)> {
    let d = dynamic_matrices_at(&SchedulingPoint::from([input.delta, state.v, state.alpha]), params, td);
    let x = &d.a * state.to_vector() + &d.b * input.to_vector() + &d.e * f_fr;
    let next = DynamicState::from_slice(x.as_slice());
    let heading = pose.theta + state.alpha;
    let next_pose = Pose {
        x: pose.x + td * state.v * heading.cos(),
        y: pose.y + td * state.v * heading.sin(),
        theta: pose.theta + td * state.omega,
    };
    if !next.is_finite()
        || !(next_pose.x.is_finite() && next_pose.y.is_finite() && next_pose.theta.is_finite())
    {
        return Err(Error::Diverged {
            t: f64::NAN,
            reason: format!("plant produced non-finite state from {state:?} with input {input:?}"),
        });
    }
    Ok((next_pose, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coasting_decelerates() {
        let p = VehicleParams::default();
        let s = DynamicState::new(10.0, 0.0, 0.0);
        let (_, n) = plant_step(&Pose::default(), &s, &DynamicInput::default(), 0.0, &p, 0.01).unwrap();
        assert!(n.v < s.v);
    }

    #[test]
    fn straight_line_cruise() {
        let p = VehicleParams::default();
        let mut pose = Pose::default();
        let mut s = DynamicState::new(10.0, 0.0, 0.0);
        let u = DynamicInput::new(p.nominal_friction_force() + p.drag_factor() * 100.0, 0.0);
        for _ in 0..100 {
            let (np, ns) = plant_step(&pose, &s, &u, 0.0, &p, 0.01).unwrap();
            pose = np;
            s = ns;
        }
        assert_eq!(s.alpha, 0.0);
        assert_eq!(s.omega, 0.0);
        assert!((s.v - 10.0).abs() < 1e-9);
        assert!((pose.x - 10.0).abs() < 1e-6);
        assert_eq!(pose.y, 0.0);
    }

    proptest! {
        #[test]
        fn friction_enters_only_through_speed(
            v in 1.0f64..20.0, al in -0.1f64..0.1, w in -1.0f64..1.0,
            f in -3000.0f64..3000.0, dl in -0.5f64..0.5, fx in -4000.0f64..4000.0
        ) {
            let p = VehicleParams::default();
            let s = DynamicState::new(v, al, w);
            let u = DynamicInput::new(fx, dl);
            let (p0, n0) = plant_step(&Pose::default(), &s, &u, 0.0, &p, 0.01).unwrap();
            let (p1, n1) = plant_step(&Pose::default(), &s, &u, f, &p, 0.01).unwrap();
            prop_assert!((n1.v - n0.v + 0.01 * f / 683.0).abs() < 1e-9);
            prop_assert_eq!(n1.alpha, n0.alpha);
            prop_assert_eq!(n1.omega, n0.omega);
            prop_assert_eq!(p0, p1);
        }
    }
}
