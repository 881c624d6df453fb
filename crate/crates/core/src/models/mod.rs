//! Vehicle models: parameters, scheduling and membership functions, the kinematic
//! tracking-error TS model, the dynamic bicycle TS model and the ground-truth plant.

mod dynamic;
mod kinematic;
mod params;
mod plant;
mod polytope;
mod scheduling;

pub use dynamic::{
    default_dynamic_bounds, dynamic_matrices_at, dynamic_polytope, DynamicEvaluation, DynamicMatrices,
    DynamicModel, V_FLOOR,
};
pub use kinematic::{
    default_kinematic_bounds, kinematic_matrices_at, kinematic_polytope, sinc, KinematicErrorState,
    KinematicInput,
};
pub use params::VehicleParams;
pub use plant::{plant_step, DynamicInput, DynamicState, Pose};
pub use polytope::PolytopicModel;
pub use scheduling::{membership_weights, Interval, MembershipWeights, SchedulingBounds, SchedulingPoint};

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::wrap_angle;
    use std::f64::consts::PI;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(2.0 * PI + 0.1) - 0.1).abs() < 1e-12);
        assert!((wrap_angle(-2.0 * PI - 0.1) + 0.1).abs() < 1e-12);
    }
}
