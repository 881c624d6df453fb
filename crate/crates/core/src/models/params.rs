use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical parameters of the bicycle model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Distance from the centre of mass to the front axle (m).
    pub a: f64,
    /// Distance from the centre of mass to the rear axle (m).
    pub b: f64,
    /// Mass (kg).
    #[serde(rename = "M")]
    pub mass: f64,
    /// Yaw inertia (kg m^2).
    #[serde(rename = "I")]
    pub inertia: f64,
    /// Cornering stiffness (N/rad).
    #[serde(rename = "Cx")]
    pub cornering_stiffness: f64,
    /// Frontal area (m^2).
    #[serde(rename = "Ar")]
    pub frontal_area: f64,
    /// Air density (kg/m^3).
    pub rho_air: f64,
    #[serde(rename = "Cd_drag")]
    pub drag_coefficient: f64,
    /// Nominal road friction coefficient.
    #[serde(rename = "mu0")]
    pub nominal_friction: f64,
    pub g: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            a: 0.758,
            b: 1.036,
            mass: 683.0,
            inertia: 560.94,
            cornering_stiffness: 25_000.0,
            frontal_area: 1.91,
            rho_air: 1.184,
            drag_coefficient: 0.36,
            nominal_friction: 0.5,
            g: 9.81,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("a", self.a),
            ("b", self.b),
            ("M", self.mass),
            ("I", self.inertia),
            ("Cx", self.cornering_stiffness),
            ("Ar", self.frontal_area),
            ("rho_air", self.rho_air),
            ("Cd_drag", self.drag_coefficient),
            ("mu0", self.nominal_friction),
            ("g", self.g),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "vehicle parameter {name} must be finite and > 0 (got {value})"
                )));
            }
        }
        Ok(())
    }

    /// mu0 * M * g, the friction force the nominal model already accounts for.
    pub fn nominal_friction_force(&self) -> f64 {
        self.nominal_friction * self.mass * self.g
    }

    /// 0.5 * Cd * rho * Ar, so aerodynamic drag is `drag_factor() * v^2`.
    pub fn drag_factor(&self) -> f64 {
        0.5 * self.drag_coefficient * self.rho_air * self.frontal_area
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        VehicleParams::default().validate().unwrap();
        let p = VehicleParams::default();
        assert!((p.nominal_friction_force() - 3350.1150).abs() < 1e-3);
    }

    #[test]
    fn json_keys_and_defaults() {
        let p: VehicleParams = serde_json::from_str(r#"{"M": 700.0}"#).unwrap();
        assert_eq!(p.mass, 700.0);
        assert_eq!(p.a, 0.758);
        assert!(serde_json::from_str::<VehicleParams>(r#"{"mass": 1.0}"#).is_err());
    }

    #[test]
    fn rejects_non_positive() {
        let p = VehicleParams { inertia: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
