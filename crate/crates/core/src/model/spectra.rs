//! Normalised susceptibilities and closed-loop displacement spectra.
//!
//! All models here use the single-mode rotating-frame approximation and are
//! valid for |Ω − Ω₀| ≪ Ω₀. Susceptibilities are normalised so that the
//! open-loop value on resonance is exactly 1; spectra are returned as
//! single-sided densities per Hz.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{imprecision_quanta, BackactionModel, Feedback, Measurement, Oscillator};
use crate::error::{Error, Result};

/// Which closed form to use for the apparent (in-loop) displacement spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YSpectrumForm {
    /// `|χ_g|²·n_th + n_imp`: damped thermal peak on a flat imprecision floor.
    #[default]
    FlatFloor,
    /// `|χ_g|²·(n_th + (1+g)²·|χ₀|⁻²·n_imp)` taken literally. It agrees with
    /// [`FlatFloor`](Self::FlatFloor) on resonance but its floor grows as
    /// (1+g)² away from Ω₀.
    Literal,
    /// `|χ_g|²·n_th + |χ_g/χ₀|²·n_imp`: the exact linear in-loop result,
    /// which dips below the floor (squashing) once n_th/(1+g)² < n_imp.
    InLoop,
}

/// Inputs for the closed-loop spectrum models, either derived from device
/// parameters or fixed by hand (as when fitting).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopModel {
    /// Ω₀, rad/s.
    pub omega0: f64,
    /// Γ₀, rad/s.
    pub gamma0: f64,
    /// Zero-point spectral density 4·x_zp²/Γ₀, m²/Hz.
    pub s_xx_zp: f64,
    /// Bath occupation (including back-action when folded in).
    pub n_th: f64,
    /// Imprecision in quanta.
    pub n_imp: f64,
    /// Loop phase at Ω₀, rad.
    pub phase: f64,
    pub form: YSpectrumForm,
}

impl LoopModel {
    /// Derive the model from device parameters. When `backaction` is given the
    /// back-action quanta are added to the bath occupation.
    pub fn from_device(
        osc: &Oscillator,
        meas: &Measurement,
        phase: f64,
        backaction: Option<BackactionModel>,
    ) -> Result<Self> {
        let n_imp = imprecision_quanta(meas.total_imprecision()?, osc);
        let mut n_th = osc.thermal_occupation();
        if let Some(model) = backaction {
            n_th += meas.backaction_quanta(n_imp, model)?;
        }
        let model = LoopModel {
            omega0: osc.omega0,
            gamma0: osc.damping_rate(),
            s_xx_zp: osc.zero_point_psd(),
            n_th,
            n_imp,
            phase,
            form: YSpectrumForm::default(),
        };
        model.check_phase()?;
        Ok(model)
    }

    /// Replace Γ₀, rescaling S_xx^zp = 4·x_zp²/Γ₀ accordingly.
    pub fn with_gamma0(self, gamma0: f64) -> Self {
        LoopModel {
            s_xx_zp: self.s_xx_zp * self.gamma0 / gamma0,
            gamma0,
            ..self
        }
    }

    pub fn with_form(self, form: YSpectrumForm) -> Self {
        LoopModel { form, ..self }
    }

    fn check_phase(&self) -> Result<()> {
        if self.phase.sin().abs() < 1e-12 {
            Err(Error::SingularPhase { phase: self.phase })
        } else {
            Ok(())
        }
    }

    /// Open-loop normalised susceptibility χ₀[Ω] = 1/(1 + 2i(Ω−Ω₀)/Γ₀).
    pub fn open_loop(&self, omega: f64) -> Complex64 {
        Complex64::new(1.0, 2.0 * (omega - self.omega0) / self.gamma0).inv()
    }

    /// Closed-loop normalised susceptibility
    /// χ_g[Ω] = 1/((1+g) + 2i(Ω−Ω₀)/Γ₀ − i·g·cot φ).
    ///
    /// φ is the phase lead of the feedback path; a lead beyond π/2 adds an
    /// anti-restoring force and pulls the resonance down.
    pub fn closed_loop(&self, omega: f64, gain: f64) -> Complex64 {
        let stiffening = if gain == 0.0 {
            0.0
        } else {
            gain / self.phase.tan()
        };
        Complex64::new(
            1.0 + gain,
            2.0 * (omega - self.omega0) / self.gamma0 - stiffening,
        )
        .inv()
    }

    /// Flat imprecision floor 2·S_xx^zp·n_imp.
    pub fn floor(&self) -> f64 {
        2.0 * self.s_xx_zp * self.n_imp
    }

    /// Physical displacement spectrum 2·S_xx^zp·|χ_g|²·(n_th + g²·n_imp).
    pub fn spectrum_x(&self, omega: f64, gain: f64) -> f64 {
        let chi = self.closed_loop(omega, gain).norm_sqr();
        2.0 * self.s_xx_zp * chi * (self.n_th + gain * gain * self.n_imp)
    }

    /// Apparent (measured) displacement spectrum in the configured form.
    pub fn spectrum_y(&self, omega: f64, gain: f64) -> f64 {
        let chi_g = self.closed_loop(omega, gain).norm_sqr();
        let chi_0 = self.open_loop(omega).norm_sqr();
        let quanta = match self.form {
            YSpectrumForm::FlatFloor => chi_g * self.n_th + self.n_imp,
            YSpectrumForm::Literal => {
                chi_g * (self.n_th + (1.0 + gain).powi(2) / chi_0 * self.n_imp)
            }
            YSpectrumForm::InLoop => chi_g * self.n_th + chi_g / chi_0 * self.n_imp,
        };
        2.0 * self.s_xx_zp * quanta
    }

    /// Apparent thermal peak height on resonance divided by the floor.
    pub fn peak_to_floor(&self, gain: f64) -> f64 {
        let thermal = self.closed_loop(self.omega0, gain).norm_sqr() * self.n_th;
        thermal / self.n_imp
    }
}

/// Normalised closed-loop susceptibility for a device and feedback setting.
/// Disabled feedback returns χ₀ regardless of phase.
pub fn closed_loop_susceptibility(osc: &Oscillator, fb: &Feedback, omega: f64) -> Result<Complex64> {
    let model = bare_model(osc, fb.phase);
    if !fb.enabled || fb.gain == 0.0 {
        return Ok(model.open_loop(omega));
    }
    model.check_phase()?;
    Ok(model.closed_loop(omega, fb.gain))
}

/// Normalised open-loop susceptibility χ₀.
pub fn open_loop_susceptibility(osc: &Oscillator, omega: f64) -> Complex64 {
    bare_model(osc, std::f64::consts::FRAC_PI_2).open_loop(omega)
}

/// Physical displacement spectrum for device parameters, m²/Hz.
pub fn spectrum_x_model(
    osc: &Oscillator,
    meas: &Measurement,
    fb: &Feedback,
    omega: f64,
) -> Result<f64> {
    let model = LoopModel::from_device(osc, meas, fb.phase, None)?;
    Ok(model.spectrum_x(omega, fb.effective_gain()))
}

/// Apparent displacement spectrum (flat-floor form) for device parameters, m²/Hz.
pub fn spectrum_y_model(
    osc: &Oscillator,
    meas: &Measurement,
    fb: &Feedback,
    omega: f64,
) -> Result<f64> {
    let model = LoopModel::from_device(osc, meas, fb.phase, None)?;
    Ok(model.spectrum_y(omega, fb.effective_gain()))
}

fn bare_model(osc: &Oscillator, phase: f64) -> LoopModel {
    LoopModel {
        omega0: osc.omega0,
        gamma0: osc.damping_rate(),
        s_xx_zp: osc.zero_point_psd(),
        n_th: osc.thermal_occupation(),
        n_imp: 0.0,
        phase,
        form: YSpectrumForm::default(),
    }
}
