//! Unit-annotated JSON run configuration.
//!
//! Every physical quantity is a string with an explicit unit (`"39.9 kHz"`,
//! `"12 ng"`, `"10 fm/rtHz"`); dimensionless values are plain numbers.
//! Unknown keys are rejected. [`RunConfig::canonical_json`] writes every
//! quantity in SI form, so parse → canonical → parse is the identity and
//! [`RunConfig::hash`] is stable.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{BackactionModel, DeviceGeometry, Feedback, LoopModel, Measurement, Oscillator};
use crate::sim::{
    CalibrationTone, FeedbackFilter, InitialState, NoiseSources, SimulationConfig,
    SAMPLES_PER_PERIOD,
};
use crate::spectral::{FitOptions, WelchConfig, Window};
use crate::units::{
    parse_quantity, Dimension, Hertz, Kelvin, Kilograms, Meters, MetersSquaredPerHz, Newtons,
    Pascals, Quantity, Radians, Ratio, Seconds, Watts, WattsPerMeterKelvin,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub oscillator: OscillatorSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement: Option<MeasurementSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_filter: Option<FilterSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometrySection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorSection {
    pub frequency: Quantity<Hertz>,
    pub q: Quantity<Ratio>,
    pub mass: Quantity<Kilograms>,
    pub temperature: Quantity<Kelvin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    pub power: Quantity<Watts>,
    pub wavelength: Quantity<Meters>,
    pub reflectance: Quantity<Ratio>,
    pub efficiency: Quantity<Ratio>,
    pub extraneous_imprecision: Quantity<MetersSquaredPerHz>,
    #[serde(default)]
    pub backaction_model: BackactionModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySection {
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allpass: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub gain: Quantity<Ratio>,
    pub phase: Quantity<Radians>,
    pub band_low: Quantity<Hertz>,
    pub band_high: Quantity<Hertz>,
    #[serde(default = "first_order")]
    pub order: usize,
    /// Fixed delay line; tuned to `phase` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelaySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_force: Option<Quantity<Newtons>>,
}

fn yes() -> bool {
    true
}

fn first_order() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneSection {
    pub frequency: Quantity<Hertz>,
    pub amplitude: Quantity<Meters>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<Quantity<Hertz>>,
    pub duration: Quantity<Seconds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settle_time: Option<Quantity<Seconds>>,
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseSources,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_tone: Option<ToneSection>,
    #[serde(default)]
    pub initial_state: InitialState,
    /// Write the sampled record alongside the spectrum.
    #[serde(default = "yes")]
    pub write_timeseries: bool,
}

/// Fit inputs overriding the device-derived values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_th: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_imp: Option<f64>,
    /// Γ₀/2π.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linewidth: Option<Quantity<Hertz>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Quantity<Radians>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub segment_length: usize,
    #[serde(default)]
    pub window: Window,
    #[serde(default = "half")]
    pub overlap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_band: Option<[Quantity<Hertz>; 2]>,
    #[serde(default)]
    pub fit_floor: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<FixedSection>,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Power,
    Gain,
    Temperature,
}

impl SweepVariable {
    pub fn dimension(self) -> Dimension {
        match self {
            SweepVariable::Power => Dimension::Power,
            SweepVariable::Gain => Dimension::Dimensionless,
            SweepVariable::Temperature => Dimension::Temperature,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Power => "power",
            SweepVariable::Gain => "gain",
            SweepVariable::Temperature => "temperature",
        }
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sweep values are held in SI; they are written and read with the unit
/// implied by `variable`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSweep", into = "RawSweep")]
pub struct SweepSection {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub replicas: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    variable: SweepVariable,
    values: Vec<RawValue>,
    #[serde(default = "one")]
    replicas: usize,
}

fn one() -> usize {
    1
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawValue {
    Number(f64),
    Text(String),
}

impl TryFrom<RawSweep> for SweepSection {
    type Error = String;

    fn try_from(raw: RawSweep) -> std::result::Result<Self, String> {
        let dim = raw.variable.dimension();
        let values = raw
            .values
            .into_iter()
            .map(|v| match v {
                RawValue::Number(x) if dim == Dimension::Dimensionless => Ok(x),
                RawValue::Number(x) => Err(format!(
                    "sweep value {x} needs a unit ({})",
                    dim.si_unit()
                )),
                RawValue::Text(s) => parse_quantity(&s, dim),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(SweepSection {
            variable: raw.variable,
            values,
            replicas: raw.replicas,
        })
    }
}

impl From<SweepSection> for RawSweep {
    fn from(s: SweepSection) -> Self {
        let dim = s.variable.dimension();
        RawSweep {
            variable: s.variable,
            values: s
                .values
                .into_iter()
                .map(|v| {
                    if dim == Dimension::Dimensionless {
                        RawValue::Number(v)
                    } else {
                        RawValue::Text(crate::units::format_si(v, dim))
                    }
                })
                .collect(),
            replicas: s.replicas,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub tether_length: Quantity<Meters>,
    pub tether_width: Quantity<Meters>,
    pub thickness: Quantity<Meters>,
    pub stress: Quantity<Pascals>,
    pub q_material: Quantity<Ratio>,
    pub thermal_conductivity: Quantity<WattsPerMeterKelvin>,
    pub absorption: Quantity<Ratio>,
    pub window_size: Quantity<Meters>,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parse and validate. Messages carry the line of the offending key.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            // serde_json appends "at line L column C" to data errors.
            if msg.contains(" at line ") {
                Error::Config(msg)
            } else {
                Error::Config(format!("{msg} at line {} column {}", e.line(), e.column()))
            }
        })?;
        cfg.validate().map_err(|(field, e)| {
            let key = field.rsplit('.').next().unwrap_or(&field);
            let location = locate(text, key)
                .map(|line| format!(" (line {line})"))
                .unwrap_or_default();
            Error::Config(format!("{field}{location}: {e}"))
        })?;
        Ok(cfg)
    }

    fn validate(&self) -> std::result::Result<(), (String, Error)> {
        let osc = self.oscillator().map_err(|e| (field_of(&e, "oscillator"), e))?;
        if let Some(m) = &self.measurement {
            measurement_from(m)
                .validate()
                .map_err(|e| (field_of(&e, "measurement"), e))?;
        }
        if let Some(f) = &self.feedback_filter {
            let fs = self.sample_rate(&osc);
            filter_base(f)
                .validate(fs)
                .map_err(|e| (field_of(&e, "feedback_filter"), e))?;
        }
        if let Some(a) = &self.analysis {
            self.welch_config()
                .expect("analysis present")
                .validate()
                .map_err(|e| (field_of(&e, "analysis"), e))?;
            if let Some([lo, hi]) = a.fit_band {
                if !(lo.get() < hi.get()) {
                    return Err(("analysis.fit_band".into(), Error::invalid("fit_band", "low must be < high")));
                }
            }
        }
        if let Some(s) = &self.simulation {
            if !(s.duration.get() > 0.0) {
                return Err(("simulation.duration".into(), Error::invalid("duration", "must be > 0")));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(("sweep.values".into(), Error::invalid("values", "must not be empty")));
            }
            let increasing = s.values.windows(2).all(|w| w[1] > w[0]);
            let decreasing = s.values.windows(2).all(|w| w[1] < w[0]);
            if !(increasing || decreasing) {
                return Err(("sweep.values".into(), Error::invalid("values", "must be strictly monotone")));
            }
            if s.replicas == 0 {
                return Err(("sweep.replicas".into(), Error::invalid("replicas", "must be >= 1")));
            }
        }
        if let Some(g) = &self.geometry {
            geometry_from(g)
                .validate()
                .map_err(|e| (field_of(&e, "geometry"), e))?;
        }
        Ok(())
    }

    pub fn oscillator(&self) -> Result<Oscillator> {
        let o = &self.oscillator;
        Oscillator::from_hz(o.frequency.get(), o.q.get(), o.mass.get(), o.temperature.get())
    }

    pub fn measurement(&self) -> Result<Measurement> {
        let m = self.require(self.measurement.as_ref(), "measurement")?;
        Ok(measurement_from(m))
    }

    /// The configured filter, or feedback off when the section is absent.
    /// Delay and allpass are tuned to the requested phase unless given.
    pub fn feedback_filter(&self, osc: &Oscillator) -> Result<FeedbackFilter> {
        let fs = self.sample_rate(osc);
        match &self.feedback_filter {
            None => Ok(FeedbackFilter::around(Feedback::off(), osc.freq_hz(), 3.0)),
            Some(f) => {
                let base = filter_base(f);
                if f.delay.is_none() && base.feedback.enabled {
                    base.tuned(osc, fs)
                } else {
                    Ok(base)
                }
            }
        }
    }

    pub fn sample_rate(&self, osc: &Oscillator) -> f64 {
        self.simulation
            .and_then(|s| s.sample_rate)
            .map(Quantity::get)
            .unwrap_or(SAMPLES_PER_PERIOD * osc.freq_hz())
    }

    pub fn simulation(&self, osc: &Oscillator) -> Result<SimulationConfig> {
        let s = self.require(self.simulation.as_ref(), "simulation")?;
        let measurement = self.measurement.as_ref();
        Ok(SimulationConfig {
            sample_rate: self.sample_rate(osc),
            duration: s.duration.get(),
            settle_time: s.settle_time.map(Quantity::get),
            seed: s.seed,
            noise: s.noise,
            backaction_model: measurement.map(|m| m.backaction_model).unwrap_or_default(),
            calibration_tone: s.calibration_tone.map(|t| CalibrationTone {
                frequency: t.frequency.get(),
                amplitude: t.amplitude.get(),
            }),
            initial_state: s.initial_state,
        })
    }

    pub fn welch_config(&self) -> Result<WelchConfig> {
        let a = self.require(self.analysis.as_ref(), "analysis")?;
        Ok(WelchConfig {
            segment_length: a.segment_length,
            window: a.window,
            overlap: a.overlap,
        })
    }

    pub fn fit_options(&self) -> FitOptions {
        let mut opts = FitOptions::default();
        if let Some(a) = &self.analysis {
            opts.band = a.fit_band.map(|[lo, hi]| (lo.get(), hi.get()));
            opts.fit_floor = a.fit_floor;
        }
        opts
    }

    /// Model for fitting: device-derived, then overridden by `analysis.fixed`.
    pub fn fit_model(&self, osc: &Oscillator, phase: f64) -> Result<LoopModel> {
        let meas = self.measurement()?;
        let fixed = self
            .analysis
            .and_then(|a| a.fixed)
            .unwrap_or_default();
        let phase = fixed.phase.map(Quantity::get).unwrap_or(phase);
        let mut model = LoopModel::from_device(osc, &meas, phase, None)?;
        if let Some(lw) = fixed.linewidth {
            model = model.with_gamma0(std::f64::consts::TAU * lw.get());
        }
        if let Some(n) = fixed.n_th {
            model.n_th = n;
        }
        if let Some(n) = fixed.n_imp {
            model.n_imp = n;
        }
        Ok(model)
    }

    pub fn geometry(&self) -> Option<DeviceGeometry> {
        self.geometry.as_ref().map(geometry_from)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        if let Some(s) = &mut self.simulation {
            s.seed = seed;
        }
        self
    }

    /// Pretty JSON with every quantity in canonical SI form.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn require<'a, T>(&self, section: Option<&'a T>, name: &str) -> Result<&'a T> {
        section.ok_or_else(|| Error::Config(format!("missing section `{name}`")))
    }
}

fn measurement_from(m: &MeasurementSection) -> Measurement {
    Measurement {
        power: m.power.get(),
        wavelength: m.wavelength.get(),
        reflectance: m.reflectance.get(),
        efficiency: m.efficiency.get(),
        extraneous_imprecision: m.extraneous_imprecision.get(),
    }
}

fn filter_base(f: &FilterSection) -> FeedbackFilter {
    let feedback = Feedback {
        gain: f.gain.get(),
        phase: f.phase.get(),
        enabled: f.enabled,
    };
    FeedbackFilter {
        feedback,
        band_low: f.band_low.get(),
        band_high: f.band_high.get(),
        order: f.order,
        delay_samples: f.delay.map(|d| d.samples).unwrap_or(0),
        allpass: f.delay.and_then(|d| d.allpass),
        max_force: f.max_force.map(Quantity::get),
    }
}

fn geometry_from(g: &GeometrySection) -> DeviceGeometry {
    DeviceGeometry {
        tether_length: g.tether_length.get(),
        tether_width: g.tether_width.get(),
        thickness: g.thickness.get(),
        stress: g.stress.get(),
        q_material: g.q_material.get(),
        thermal_conductivity: g.thermal_conductivity.get(),
        absorption: g.absorption.get(),
        window_size: g.window_size.get(),
    }
}

/// Dotted config path for a validation error.
fn field_of(e: &Error, section: &str) -> String {
    let name = match e {
        Error::InvalidParameter { name, .. } => match *name {
            "omega0" => "frequency",
            "q0" => "q",
            "bath_temperature" => "temperature",
            other => other,
        },
        Error::AboveNyquist { .. } => "band_high",
        _ => return section.to_string(),
    };
    format!("{section}.{name}")
}

/// 1-based line of the first occurrence of `"key"`.
fn locate(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

#[cfg(test)]
mod tests;
