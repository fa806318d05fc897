//! Domain types and closed-form expressions for a single mechanical mode under
//! velocity-damping feedback.
//!
//! Conventions used throughout:
//!
//! * Angular frequencies (`omega*`) are in rad/s; everything labelled `_hz` is
//!   an ordinary frequency.
//! * Every spectral density is single-sided and normalised per Hz, so that
//!   `⟨x²⟩ = ∫₀^∞ S_xx(f) df`. The spectrum models take `Ω` in rad/s and
//!   return m²/Hz; that is the only place the factor 2π enters (see
//!   [`spectra`]).

mod design;
mod spectra;

pub use design::{absorption_heating, q_scaling_constant, q_scaling_estimate, DeviceGeometry};
pub use spectra::{
    closed_loop_susceptibility, open_loop_susceptibility, spectrum_x_model, spectrum_y_model,
    LoopModel, YSpectrumForm,
};

use serde::{Deserialize, Serialize};

use crate::constants::{C, HBAR, K_B};
use crate::error::{Error, Result};

/// Fundamental mechanical mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillator {
    /// Angular resonance frequency Ω₀, rad/s.
    pub omega0: f64,
    /// Intrinsic quality factor Q₀.
    pub q0: f64,
    /// Effective mass, kg.
    pub mass: f64,
    /// Bath temperature T₀, K. Zero is allowed (noiseless ringdowns).
    pub bath_temperature: f64,
}

impl Oscillator {
    pub fn new(omega0: f64, q0: f64, mass: f64, bath_temperature: f64) -> Result<Self> {
        let osc = Oscillator {
            omega0,
            q0,
            mass,
            bath_temperature,
        };
        osc.validate()?;
        Ok(osc)
    }

    /// Convenience constructor taking the resonance frequency in Hz.
    pub fn from_hz(freq_hz: f64, q0: f64, mass: f64, bath_temperature: f64) -> Result<Self> {
        Self::new(2.0 * std::f64::consts::PI * freq_hz, q0, mass, bath_temperature)
    }

    pub fn validate(&self) -> Result<()> {
        positive("omega0", self.omega0)?;
        positive("mass", self.mass)?;
        if !(self.q0 >= 1.0) || !self.q0.is_finite() {
            return Err(Error::invalid("q0", format!("must be >= 1, got {}", self.q0)));
        }
        if !(self.bath_temperature >= 0.0) || !self.bath_temperature.is_finite() {
            return Err(Error::invalid(
                "bath_temperature",
                format!("must be >= 0, got {}", self.bath_temperature),
            ));
        }
        Ok(())
    }

    pub fn freq_hz(&self) -> f64 {
        self.omega0 / (2.0 * std::f64::consts::PI)
    }

    /// Intrinsic energy damping rate Γ₀ = Ω₀/Q₀, rad/s.
    pub fn damping_rate(&self) -> f64 {
        self.omega0 / self.q0
    }

    /// Thermal decoherence rate Γ_th = k_B·T₀/(ħ·Q₀).
    pub fn thermal_decoherence_rate(&self) -> f64 {
        K_B * self.bath_temperature / (HBAR * self.q0)
    }

    /// Zero-point amplitude x_zp = √(ħ/(2mΩ₀)).
    pub fn zero_point_motion(&self) -> f64 {
        (HBAR / (2.0 * self.mass * self.omega0)).sqrt()
    }

    /// Peak zero-point spectral density S_xx^zp = 4·x_zp²/Γ₀.
    pub fn zero_point_psd(&self) -> f64 {
        let xzp = self.zero_point_motion();
        4.0 * xzp * xzp / self.damping_rate()
    }

    /// Thermal bath occupation n_th = k_B·T₀/(ħ·Ω₀).
    pub fn thermal_occupation(&self) -> f64 {
        K_B * self.bath_temperature / (HBAR * self.omega0)
    }

    /// Imprecision needed to resolve zero-point motion within one thermal
    /// decoherence time: 2ħ²Q₀/(k_B·T₀·m·Ω₀) = 4·x_zp²/Γ_th.
    pub fn gs_imprecision_requirement(&self) -> f64 {
        2.0 * HBAR * HBAR * self.q0 / (K_B * self.bath_temperature * self.mass * self.omega0)
    }

    /// Thermal force noise S_FF^th = 4·k_B·T₀·m·Γ₀, N²/Hz.
    pub fn thermal_force_noise(&self) -> f64 {
        4.0 * K_B * self.bath_temperature * self.mass * self.damping_rate()
    }

    /// Classical thermal variance k_B·T₀/(m·Ω₀²).
    pub fn thermal_variance(&self) -> f64 {
        K_B * self.bath_temperature / (self.mass * self.omega0 * self.omega0)
    }

    pub fn with_temperature(self, bath_temperature: f64) -> Self {
        Oscillator {
            bath_temperature,
            ..self
        }
    }

    pub fn noise_budget(&self) -> NoiseBudget {
        NoiseBudget {
            x_zp: self.zero_point_motion(),
            s_xx_zp: self.zero_point_psd(),
            n_th: self.thermal_occupation(),
            gamma_th: self.thermal_decoherence_rate(),
            s_ff_th: self.thermal_force_noise(),
            s_xx_imp_gs: self.gs_imprecision_requirement(),
        }
    }
}

/// Interferometric readout parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Optical power incident on the resonator, W.
    pub power: f64,
    /// Laser wavelength, m.
    pub wavelength: f64,
    /// Resonator reflectance R_m ∈ (0, 1].
    pub reflectance: f64,
    /// Detection efficiency η ∈ (0, 1].
    pub efficiency: f64,
    /// Technical imprecision floor, single-sided m²/Hz.
    pub extraneous_imprecision: f64,
}

impl Measurement {
    pub fn validate(&self) -> Result<()> {
        if !(self.power >= 0.0) || !self.power.is_finite() {
            return Err(Error::invalid("power", format!("must be >= 0, got {}", self.power)));
        }
        positive("wavelength", self.wavelength)?;
        unit_interval("reflectance", self.reflectance)?;
        unit_interval("efficiency", self.efficiency)?;
        if !(self.extraneous_imprecision >= 0.0) || !self.extraneous_imprecision.is_finite() {
            return Err(Error::invalid(
                "extraneous_imprecision",
                format!("must be >= 0, got {}", self.extraneous_imprecision),
            ));
        }
        Ok(())
    }

    pub fn with_power(self, power: f64) -> Self {
        Measurement { power, ..self }
    }

    /// Shot-noise-limited imprecision ħ·c·λ·R_m/(16π·η·P).
    pub fn shot_noise_imprecision(&self) -> Result<f64> {
        if self.power <= 0.0 {
            return Err(Error::ZeroPower);
        }
        Ok(HBAR * C * self.wavelength * self.reflectance
            / (16.0 * std::f64::consts::PI * self.efficiency * self.power))
    }

    /// Shot noise plus the extraneous floor, added as uncorrelated PSDs.
    pub fn total_imprecision(&self) -> Result<f64> {
        Ok(self.shot_noise_imprecision()? + self.extraneous_imprecision)
    }

    /// Power at which the shot-noise term equals the extraneous floor.
    /// `None` when there is no extraneous floor.
    pub fn crossover_power(&self) -> Option<f64> {
        (self.extraneous_imprecision > 0.0).then(|| {
            HBAR * C * self.wavelength * self.reflectance
                / (16.0 * std::f64::consts::PI * self.efficiency * self.extraneous_imprecision)
        })
    }

    /// Back-action occupation added to the bath, `n_th → n_th + n_ba`.
    pub fn backaction_quanta(&self, n_imp: f64, model: BackactionModel) -> Result<f64> {
        if !(n_imp > 0.0) {
            return Err(Error::ZeroImprecision);
        }
        Ok(match model {
            BackactionModel::Stated => self.efficiency / (16.0 * n_imp),
            BackactionModel::InefficientDetection => 1.0 / (16.0 * self.efficiency * n_imp),
        })
    }
}

/// How measurement back-action scales with imprecision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackactionModel {
    /// `n_ba = η/(16·n_imp)`.
    #[default]
    Stated,
    /// `n_ba = 1/(16·η·n_imp)`, the usual inefficient-detection form where
    /// `n_imp·n_ba ≥ 1/16` holds with equality only at η = 1.
    InefficientDetection,
}

/// Feedback settings as seen by the closed-form model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    /// Dimensionless gain g; the loaded damping rate is (1+g)·Γ₀.
    pub gain: f64,
    /// Loop phase at Ω₀, rad. π/2 is pure velocity damping.
    pub phase: f64,
    pub enabled: bool,
}

impl Feedback {
    pub fn damping(gain: f64) -> Self {
        Feedback {
            gain,
            phase: std::f64::consts::FRAC_PI_2,
            enabled: true,
        }
    }

    pub fn off() -> Self {
        Feedback {
            gain: 0.0,
            phase: std::f64::consts::FRAC_PI_2,
            enabled: false,
        }
    }

    /// Gain actually applied (zero when disabled).
    pub fn effective_gain(&self) -> f64 {
        if self.enabled {
            self.gain
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain >= 0.0) || !self.gain.is_finite() {
            return Err(Error::invalid("gain", format!("must be >= 0, got {}", self.gain)));
        }
        if !(self.phase.sin() > 0.0) {
            return Err(Error::invalid(
                "phase",
                format!("{} rad does not damp (needs sin(phase) > 0)", self.phase),
            ));
        }
        Ok(())
    }
}

/// Quantities derived from an [`Oscillator`], each equal to the corresponding
/// method on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub x_zp: f64,
    pub s_xx_zp: f64,
    pub n_th: f64,
    pub gamma_th: f64,
    pub s_ff_th: f64,
    pub s_xx_imp_gs: f64,
}

/// Imprecision expressed in quanta, n_imp = S_imp/(2·S_xx^zp).
pub fn imprecision_quanta(s_imp: f64, osc: &Oscillator) -> f64 {
    s_imp / (2.0 * osc.zero_point_psd())
}

/// Mean phonon number under velocity feedback:
/// `(n_th + g²·n_imp)/(1+g) − 1/2`, clipped at zero.
pub fn mean_phonon(n_th: f64, n_imp: f64, gain: f64) -> f64 {
    ((n_th + gain * gain * n_imp) / (1.0 + gain) - 0.5).max(0.0)
}

/// Gain minimising [`mean_phonon`]: `√(1 + n_th/n_imp) − 1`.
pub fn optimal_gain(n_th: f64, n_imp: f64) -> f64 {
    (1.0 + n_th / n_imp).sqrt() - 1.0
}

/// Lower bound `2√(n_th·n_imp)` on `⟨n⟩ + 1/2` (attained up to O(n_imp) at
/// [`optimal_gain`]).
pub fn cooling_bound(n_th: f64, n_imp: f64) -> f64 {
    2.0 * (n_th * n_imp).sqrt()
}

/// Temperature equivalent of an occupancy, `⟨n⟩·ħΩ₀/k_B`.
pub fn effective_temperature(occupancy: f64, omega0: f64) -> f64 {
    occupancy * HBAR * omega0 / K_B
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be > 0, got {v}")))
    }
}

fn unit_interval(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must lie in (0, 1], got {v}")))
    }
}

/// Parameters of the device used throughout the tests and bundled configs.
pub mod reference {
    use super::{DeviceGeometry, Measurement, Oscillator};
    use std::f64::consts::PI;

    pub const FREQ_HZ: f64 = 39.9e3;
    pub const Q_LOADED: f64 = 2.6e7;
    pub const MASS: f64 = 12e-12;
    pub const TEMPERATURE: f64 = 300.0;

    pub fn oscillator() -> Oscillator {
        Oscillator {
            omega0: 2.0 * PI * FREQ_HZ,
            q0: Q_LOADED,
            mass: MASS,
            bath_temperature: TEMPERATURE,
        }
    }

    /// 850 nm readout with the observed 10 fm/√Hz technical floor.
    pub fn measurement(power: f64) -> Measurement {
        Measurement {
            power,
            wavelength: 850e-9,
            reflectance: 0.3,
            efficiency: 0.1,
            extraneous_imprecision: (10e-15f64).powi(2),
        }
    }

    pub fn geometry() -> DeviceGeometry {
        DeviceGeometry {
            tether_length: 1.7e-3,
            tether_width: 4.2e-6,
            thickness: 90e-9,
            stress: 0.9e9,
            q_material: 6e3,
            thermal_conductivity: 3.0,
            absorption: 10e-6,
            window_size: 2.5e-3,
        }
    }
}
