use serde::{Deserialize, Serialize};

use super::Oscillator;
use crate::error::{Error, Result};

/// Trampoline geometry and material parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceGeometry {
    /// Tether length L, m.
    pub tether_length: f64,
    /// Tether width w, m.
    pub tether_width: f64,
    /// Film thickness h, m.
    pub thickness: f64,
    /// Tensile film stress σ, Pa.
    pub stress: f64,
    /// Intrinsic material quality factor Q_mat.
    pub q_material: f64,
    /// Film thermal conductivity κ, W/(m·K).
    pub thermal_conductivity: f64,
    /// Fractional optical absorption α.
    pub absorption: f64,
    /// Window (frame) size, m.
    pub window_size: f64,
}

/// Stress normalisation for the dilution estimate.
const STRESS_REF: f64 = 1e9;

// Anchor point: L = 1.7 mm, h = 90 nm, σ = 0.9 GPa, Q_mat = 6e3 rings down with Q = 4.4e7.
const ANCHOR_Q: f64 = 4.4e7;
const ANCHOR_Q_MAT: f64 = 6e3;
const ANCHOR_STRESS: f64 = 0.9e9;
const ANCHOR_LENGTH: f64 = 1.7e-3;
const ANCHOR_THICKNESS: f64 = 90e-9;

impl DeviceGeometry {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("tether_length", self.tether_length),
            ("tether_width", self.tether_width),
            ("thickness", self.thickness),
            ("stress", self.stress),
            ("q_material", self.q_material),
            ("thermal_conductivity", self.thermal_conductivity),
            ("window_size", self.window_size),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.absorption) {
            return Err(Error::invalid(
                "absorption",
                format!("must lie in [0, 1), got {}", self.absorption),
            ));
        }
        Ok(())
    }

    /// Carry a reference oscillator over to this geometry using the
    /// tensioned-film scaling laws: Q ∝ Q_mat·√σ·L/h, Ω₀ ∝ √σ/L and m ∝ h·L·w.
    pub fn scale_oscillator(&self, reference: &DeviceGeometry, osc: &Oscillator) -> Oscillator {
        let q_ratio = q_scaling_estimate(self) / q_scaling_estimate(reference);
        let omega_ratio =
            (self.stress / reference.stress).sqrt() * reference.tether_length / self.tether_length;
        let mass_ratio = (self.thickness * self.tether_length * self.tether_width)
            / (reference.thickness * reference.tether_length * reference.tether_width);
        Oscillator {
            omega0: osc.omega0 * omega_ratio,
            q0: (osc.q0 * q_ratio).max(1.0),
            mass: osc.mass * mass_ratio,
            bath_temperature: osc.bath_temperature,
        }
    }
}

/// Dimensionless prefactor C in `Q ≈ C·Q_mat·√(σ/1 GPa)·L/h`, fixed by a
/// single calibration point.
pub fn q_scaling_constant() -> f64 {
    ANCHOR_Q
        / (ANCHOR_Q_MAT * (ANCHOR_STRESS / STRESS_REF).sqrt() * ANCHOR_LENGTH / ANCHOR_THICKNESS)
}

/// Order-of-magnitude dilution estimate of the fundamental-mode Q. This is a
/// one-point calibrated scaling law, not a mode solver.
pub fn q_scaling_estimate(geom: &DeviceGeometry) -> f64 {
    q_scaling_constant()
        * geom.q_material
        * (geom.stress / STRESS_REF).sqrt()
        * geom.tether_length
        / geom.thickness
}

/// Static heating per absorbed-power watt, `α·L/(4·w·h·κ)`, in K/W.
pub fn absorption_heating(geom: &DeviceGeometry) -> f64 {
    geom.absorption * geom.tether_length
        / (4.0 * geom.tether_width * geom.thickness * geom.thermal_conductivity)
}
