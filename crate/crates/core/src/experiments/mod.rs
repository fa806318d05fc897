//! Single runs and parameter sweeps built on the simulator and the spectral
//! analysis, plus the device design report.
//!
//! [`run_point`] is the one pipeline every command goes through: simulate,
//! stream the apparent displacement into a Welch estimator, then derive the
//! floor, occupancies, fit and squashing flag. Sweeps repeat it over a ladder
//! of values with per-point seeds.

mod design;
#[cfg(test)]
mod tests;

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

pub use design::{design_report, BudgetRow, DesignReport, Verdict};

use crate::config::{RunConfig, SweepVariable};
use crate::error::{Error, Result};
use crate::io::{self, Metadata};
use crate::model::{effective_temperature, imprecision_quanta, mean_phonon, Oscillator};
use crate::sim::rng::split_seed;
use crate::sim::{Sample, SampleSink, Simulator, TimeSeries};
use crate::spectral::{
    calibrate, fit_closed_loop_with, CalibrationResult, FitResult, Occupancy, Spectrum,
    WelchAccumulator, WelchConfig,
};
use crate::units::Quantity;

/// Numbers derived from one simulated run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointMetrics {
    pub seed: u64,
    /// Realised loop gain g (0 in open loop).
    pub gain: f64,
    /// Realised loop phase at Ω₀, rad.
    pub phase: f64,
    pub n_th: f64,
    pub n_imp: f64,
    pub n_ba: f64,
    /// Total imprecision the readout adds, m²/Hz.
    pub analytic_imprecision: f64,
    /// Mean apparent PSD in the floor band, m²/Hz.
    pub measured_floor: Option<f64>,
    /// ⟨n⟩ from the closed form.
    pub n_analytic: f64,
    /// ⟨n⟩ from the mean square of the simulated x record.
    pub n_simulated: f64,
    pub n_fit: Option<f64>,
    pub fit_gain: Option<f64>,
    pub fit_valid: Option<bool>,
    /// The fit was attempted and returned an error.
    pub fit_failed: bool,
    /// Apparent PSD in the bin at Ω₀ and its one-sigma estimator error.
    pub resonance_psd: f64,
    pub resonance_sigma: f64,
    /// Apparent PSD at Ω₀ lies more than 3σ below the imprecision floor.
    pub squashed: bool,
}

impl PointMetrics {
    pub fn effective_temperature(&self, osc: &Oscillator) -> f64 {
        effective_temperature(self.n_simulated, osc.omega0)
    }
}

#[derive(Debug)]
pub struct PointOutput {
    pub metrics: PointMetrics,
    pub spectrum: Spectrum,
    pub fit: Option<FitResult>,
    /// Why the fit failed; the simulation results are still valid.
    pub fit_error: Option<Error>,
    pub calibration: Option<CalibrationResult>,
    pub timeseries: Option<TimeSeries>,
}

impl PointOutput {
    /// The part of the spectrum worth writing out: the fit band in closed
    /// loop, otherwise DC to 5·f₀.
    pub fn report_spectrum(&self, cfg: &RunConfig, osc: &Oscillator) -> Spectrum {
        let f0 = osc.freq_hz();
        let nyquist = self.spectrum.frequencies.last().copied().unwrap_or(0.0);
        let (low, high) = if self.metrics.gain > 0.0 {
            cfg.fit_options().band.unwrap_or((0.75 * f0, 1.25 * f0))
        } else {
            (0.0, nyquist.min(5.0 * f0))
        };
        self.spectrum
            .band(low, high)
            .unwrap_or_else(|_| self.spectrum.clone())
    }
}

struct PointSink<'a> {
    welch: WelchAccumulator,
    sum_x2: f64,
    count: usize,
    series: Option<&'a mut TimeSeries>,
}

impl SampleSink for PointSink<'_> {
    fn record(&mut self, s: &Sample) {
        self.welch.push(s.y);
        self.sum_x2 += s.x * s.x;
        self.count += 1;
        if let Some(ts) = self.series.as_deref_mut() {
            ts.record(s);
        }
    }
}

/// Frequency band used to estimate the imprecision floor: well above the
/// resonance so the thermal tail is negligible, below the Nyquist roll-off.
pub fn floor_band(osc: &Oscillator, sample_rate: f64) -> (f64, f64) {
    let high = 0.4 * sample_rate;
    let low = (3.0 * osc.freq_hz()).max(0.25 * sample_rate);
    if low < high {
        (low, high)
    } else {
        (0.25 * sample_rate, high)
    }
}

/// Averages of independent segments equivalent to a Welch estimate, for the
/// per-bin standard error psd/√K_eff.
pub fn effective_averages(cfg: &WelchConfig, segments: usize) -> f64 {
    let n = cfg.segment_length;
    let w = cfg.window.coefficients(n);
    let shift = ((n as f64 * (1.0 - cfg.overlap)).round() as usize).max(1);
    let norm: f64 = w.iter().map(|v| v * v).sum();
    let mut sum = 1.0;
    let mut lag = shift;
    while lag < n {
        let c: f64 = (0..n - lag).map(|i| w[i] * w[i + lag]).sum::<f64>() / norm;
        sum += 2.0 * c * c;
        lag += shift;
    }
    segments as f64 / sum
}

/// Simulate one configuration with `seed` and analyse the apparent record.
pub fn run_point(cfg: &RunConfig, seed: u64, keep_timeseries: bool) -> Result<PointOutput> {
    let osc = cfg.oscillator()?;
    let meas = cfg.measurement()?;
    let filter = cfg.feedback_filter(&osc)?;
    let mut sim_cfg = cfg.simulation(&osc)?;
    sim_cfg.seed = seed;
    let welch_cfg = cfg.welch_config()?;
    let fs = sim_cfg.sample_rate;

    let mut sim = Simulator::new(&osc, &meas, &filter, &sim_cfg)?;
    let lp = sim.loop_parameters();
    let mut series =
        keep_timeseries.then(|| TimeSeries::with_capacity(sim_cfg.dt(), sim.record_samples()));
    let mut sink = PointSink {
        welch: WelchAccumulator::new(fs, &welch_cfg)?,
        sum_x2: 0.0,
        count: 0,
        series: series.as_mut(),
    };
    sim.run(&mut sink)?;
    let mean_square = sink.sum_x2 / sink.count.max(1) as f64;
    let segments = sink.welch.segments();
    let spectrum = sink.welch.finish()?;

    let noise = sim_cfg.noise;
    let analytic_imprecision = if noise.imprecision {
        meas.total_imprecision()?
    } else {
        0.0
    };
    let n_imp = imprecision_quanta(analytic_imprecision, &osc);
    let n_th = if noise.thermal { osc.thermal_occupation() } else { 0.0 };
    let n_ba = if noise.backaction && n_imp > 0.0 {
        meas.backaction_quanta(n_imp, sim_cfg.backaction_model)?
    } else {
        0.0
    };
    let gain = lp.gain;

    let (lo, hi) = floor_band(&osc, fs);
    let measured_floor = spectrum
        .band_indices(lo, hi)
        .ok()
        .map(|r| spectrum.psd[r.clone()].iter().sum::<f64>() / r.len() as f64);

    let f0 = osc.freq_hz();
    let resonance_psd = spectrum
        .bin_of(f0)
        .map(|k| spectrum.psd[k])
        .ok_or(Error::AboveNyquist {
            freq: f0,
            nyquist: fs / 2.0,
        })?;
    let resonance_sigma = resonance_psd / effective_averages(&welch_cfg, segments).sqrt();
    let squashed =
        analytic_imprecision > 0.0 && resonance_psd + 3.0 * resonance_sigma < analytic_imprecision;

    let (fit, fit_error) = if gain > 0.0 {
        let model = cfg.fit_model(&osc, lp.phase)?;
        match fit_closed_loop_with(&spectrum, &model, &cfg.fit_options()) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e)),
        }
    } else {
        (None, None)
    };
    let calibration = match sim_cfg.calibration_tone {
        Some(tone) if gain == 0.0 => Some(calibrate(&spectrum, tone.frequency, &osc)?),
        _ => None,
    };

    let metrics = PointMetrics {
        seed,
        gain,
        phase: lp.phase,
        n_th,
        n_imp,
        n_ba,
        analytic_imprecision,
        measured_floor,
        n_analytic: mean_phonon(n_th + n_ba, n_imp, gain),
        n_simulated: Occupancy::from_mean_square(mean_square, &osc).value,
        n_fit: fit.map(|f| f.occupancy),
        fit_gain: fit.map(|f| f.gain),
        fit_valid: fit.map(|f| f.valid),
        fit_failed: fit_error.is_some(),
        resonance_psd,
        resonance_sigma,
        squashed,
    };
    Ok(PointOutput {
        metrics,
        spectrum,
        fit,
        fit_error,
        calibration,
        timeseries: series,
    })
}

/// A ladder of values for one variable applied on top of a base config.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub replicas: usize,
    /// Worker threads; `None` uses one per core.
    pub parallelism: Option<usize>,
}

impl SweepSpec {
    /// Build from the config's `sweep` section.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let sweep = cfg
            .sweep
            .as_ref()
            .ok_or_else(|| Error::Config("missing section `sweep`".into()))?;
        let spec = SweepSpec {
            base: cfg.clone(),
            variable: sweep.variable,
            values: sweep.values.clone(),
            replicas: sweep.replicas,
            parallelism: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep.values is empty".into()));
        }
        let up = self.values.windows(2).all(|w| w[1] > w[0]);
        let down = self.values.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::Config("sweep.values must be strictly monotone".into()));
        }
        if self.replicas == 0 {
            return Err(Error::Config("sweep.replicas must be >= 1".into()));
        }
        if self.parallelism == Some(0) {
            return Err(Error::Config("parallelism must be >= 1".into()));
        }
        self.base.oscillator()?;
        self.base.measurement()?;
        self.base.welch_config()?;
        self.base
            .simulation
            .as_ref()
            .ok_or_else(|| Error::Config("missing section `simulation`".into()))?;
        Ok(())
    }

    pub fn master_seed(&self) -> u64 {
        self.base.simulation.as_ref().map_or(0, |s| s.seed)
    }

    /// Seed of replica `r` at point `i`. The first run uses the master seed
    /// itself, so a one-point sweep reproduces a plain simulation.
    pub fn seed(&self, index: usize, replica: usize) -> u64 {
        let k = (index * self.replicas + replica) as u64;
        if k == 0 {
            self.master_seed()
        } else {
            split_seed(self.master_seed(), k)
        }
    }

    /// Base config with the swept variable set to `value`.
    pub fn config_at(&self, value: f64) -> RunConfig {
        let mut cfg = self.base.clone();
        match self.variable {
            SweepVariable::Power => {
                if let Some(m) = &mut cfg.measurement {
                    m.power = Quantity::new(value);
                }
            }
            SweepVariable::Temperature => cfg.oscillator.temperature = Quantity::new(value),
            SweepVariable::Gain => {
                if let Some(f) = &mut cfg.feedback_filter {
                    f.gain = Quantity::new(value);
                    f.enabled = value > 0.0;
                }
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub index: usize,
    pub replica: usize,
    pub value: f64,
    pub seed: u64,
    pub outcome: std::result::Result<PointMetrics, String>,
    pub fit_error: Option<String>,
    /// Spectrum cropped to the report band.
    #[serde(skip)]
    pub spectrum: Option<Spectrum>,
}

impl SweepRecord {
    pub fn status(&self) -> &'static str {
        match (&self.outcome, &self.fit_error) {
            (Err(_), _) => "failed",
            (Ok(_), Some(_)) => "fit_failed",
            (Ok(_), None) => "ok",
        }
    }
}

/// Results that only make sense for the whole ladder.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SweepSummary {
    /// Power where shot noise equals the extraneous floor, from the model.
    pub analytic_crossover: Option<f64>,
    /// Crossover of an `a/P + b` fit to the measured floors.
    pub measured_crossover: Option<f64>,
    /// Adjacent ladder values bracketing `measured_crossover`.
    pub crossover_bracket: Option<(f64, f64)>,
    /// Ladder value and mean fitted ⟨n⟩ at the smallest valid fitted ⟨n⟩.
    pub min_fitted: Option<(f64, f64)>,
    /// First ladder value past the minimum, where inference degrades.
    pub degradation_onset: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub replicas: usize,
    pub master_seed: u64,
    pub config_hash: String,
    pub records: Vec<SweepRecord>,
    pub summary: SweepSummary,
    #[serde(skip)]
    pub config: RunConfig,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn fit_failures(&self) -> usize {
        self.records.iter().filter(|r| r.fit_error.is_some()).count()
    }

    /// Successful metrics at ladder index `i`.
    pub fn point(&self, i: usize) -> Vec<&PointMetrics> {
        self.records
            .iter()
            .filter(|r| r.index == i)
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect()
    }

    fn mean_at(&self, i: usize, f: impl Fn(&PointMetrics) -> Option<f64>) -> Option<f64> {
        let v: Vec<f64> = self.point(i).into_iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean measured floor at each ladder value.
    pub fn floors(&self) -> Vec<Option<f64>> {
        (0..self.values.len())
            .map(|i| self.mean_at(i, |m| m.measured_floor))
            .collect()
    }

    /// Mean ⟨n⟩ from fits, from x and from the closed form at each ladder value.
    pub fn occupancies(&self) -> Vec<[Option<f64>; 3]> {
        (0..self.values.len())
            .map(|i| {
                [
                    self.mean_at(i, |m| m.n_fit),
                    self.mean_at(i, |m| Some(m.n_simulated)),
                    self.mean_at(i, |m| Some(m.n_analytic)),
                ]
            })
            .collect()
    }

    fn summarise(&mut self) -> Result<()> {
        let mut s = SweepSummary::default();
        match self.variable {
            SweepVariable::Power => {
                s.analytic_crossover = self.config.measurement()?.crossover_power();
                s.measured_crossover = fit_crossover(&self.values, &self.floors());
                s.crossover_bracket = s.measured_crossover.and_then(|p| bracket(&self.values, p));
            }
            SweepVariable::Gain => {
                let fitted: Vec<Option<f64>> = (0..self.values.len())
                    .map(|i| {
                        let valid = self.point(i).iter().all(|m| m.fit_valid == Some(true));
                        self.mean_at(i, |m| m.n_fit).filter(|_| valid)
                    })
                    .collect();
                let best = fitted
                    .iter()
                    .enumerate()
                    .filter_map(|(i, n)| n.map(|n| (i, n)))
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((i, n)) = best {
                    s.min_fitted = Some((self.values[i], n));
                    s.degradation_onset = self.values.get(i + 1).copied();
                }
            }
            SweepVariable::Temperature => {}
        }
        self.summary = s;
        Ok(())
    }

    /// Write `manifest.json`, `summary.csv` and one spectrum CSV per run.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = Metadata::new()
            .with("config_hash", &self.config_hash)
            .with("master_seed", self.master_seed)
            .with("variable", self.variable);

        let mut points = Vec::new();
        for r in &self.records {
            let file = r
                .spectrum
                .as_ref()
                .map(|_| format!("spectra/point_{:03}_r{:02}.csv", r.index, r.replica));
            if let (Some(name), Some(spec)) = (&file, &r.spectrum) {
                let m = meta
                    .clone()
                    .with("seed", r.seed)
                    .with("value", format!("{:e}", r.value));
                io::write_spectrum(&dir.join(name), spec, &m)?;
            }
            points.push(serde_json::json!({
                "index": r.index,
                "replica": r.replica,
                "value": r.value,
                "seed": r.seed,
                "status": r.status(),
                "error": r.outcome.as_ref().err().or(r.fit_error.as_ref()),
                "spectrum": file,
            }));
        }
        let config: serde_json::Value = serde_json::from_str(&self.config.canonical_json())
            .map_err(|e| Error::Config(e.to_string()))?;
        let manifest = serde_json::json!({
            "config": config,
            "config_hash": self.config_hash,
            "variable": self.variable,
            "values": self.values,
            "replicas": self.replicas,
            "master_seed": self.master_seed,
            "points": points,
            "summary": self.summary,
        });
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        let path = dir.join("manifest.json");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;

        let mut summary_meta = meta.clone();
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for (k, v) in [
            ("analytic_crossover_w", self.summary.analytic_crossover),
            ("measured_crossover_w", self.summary.measured_crossover),
            ("min_fitted_value", self.summary.min_fitted.map(|m| m.0)),
            ("min_fitted_n", self.summary.min_fitted.map(|m| m.1)),
            ("degradation_onset", self.summary.degradation_onset),
        ] {
            if v.is_some() {
                summary_meta.push(k, opt(v));
            }
        }
        let header = [
            "value", "replica", "seed", "status", "gain", "n_fit", "n_sim", "n_analytic",
            "fit_gain", "fit_valid", "squashed", "analytic_imprecision", "measured_floor",
            "resonance_psd",
        ];
        let rows: Vec<Vec<String>> = self.records.iter().map(|r| {
            let mut row = vec![
                format!("{:e}", r.value),
                r.replica.to_string(),
                r.seed.to_string(),
            ];
            match &r.outcome {
                Ok(m) => row.extend([
                    r.status().to_string(),
                    format!("{:e}", m.gain),
                    opt(m.n_fit),
                    format!("{:e}", m.n_simulated),
                    format!("{:e}", m.n_analytic),
                    opt(m.fit_gain),
                    m.fit_valid.map(|v| v.to_string()).unwrap_or_default(),
                    m.squashed.to_string(),
                    format!("{:e}", m.analytic_imprecision),
                    opt(m.measured_floor),
                    format!("{:e}", m.resonance_psd),
                ]),
                Err(_) => {
                    row.push("failed".to_string());
                    row.extend(std::iter::repeat_n(String::new(), header.len() - 4));
                }
            }
            row
        }).collect();
        io::write_text_table(&dir.join("summary.csv"), &summary_meta, &header, &rows)
    }
}

/// Run every (value, replica) of a sweep. Failed runs are recorded, not fatal.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let tasks: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|i| (0..spec.replicas).map(move |r| (i, r)))
        .collect();
    let run = |&(i, r): &(usize, usize)| -> SweepRecord {
        let value = spec.values[i];
        let seed = spec.seed(i, r);
        let cfg = spec.config_at(value);
        let out = cfg
            .oscillator()
            .and_then(|osc| run_point(&cfg, seed, false).map(|p| (osc, p)));
        let (outcome, spectrum, fit_error) = match out {
            Ok((osc, p)) => (
                Ok(p.metrics),
                Some(p.report_spectrum(&cfg, &osc)),
                p.fit_error.map(|e| e.to_string()),
            ),
            Err(e) => (Err(e.to_string()), None, None),
        };
        SweepRecord {
            index: i,
            replica: r,
            value,
            seed,
            outcome,
            fit_error,
            spectrum,
        }
    };
    let records: Vec<SweepRecord> = match spec.parallelism {
        Some(1) => tasks.iter().map(run).collect(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| tasks.par_iter().map(run).collect()),
        None => tasks.par_iter().map(run).collect(),
    };
    let mut result = SweepResult {
        variable: spec.variable,
        values: spec.values.clone(),
        replicas: spec.replicas,
        master_seed: spec.master_seed(),
        config_hash: spec.base.hash(),
        records,
        summary: SweepSummary::default(),
        config: spec.base.clone(),
    };
    result.summarise()?;
    Ok(result)
}

/// Open-loop floor against optical power.
pub fn power_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    if spec.variable != SweepVariable::Power {
        return Err(Error::Config("power_sweep needs `variable: power`".into()));
    }
    let gain_on = spec
        .base
        .feedback_filter
        .as_ref()
        .is_some_and(|f| f.enabled && f.gain.get() > 0.0);
    if gain_on {
        return Err(Error::Config(
            "power_sweep runs open loop; disable feedback_filter".into(),
        ));
    }
    run_sweep(spec)
}

/// Cooling curve against loop gain at fixed readout.
pub fn gain_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    if spec.variable != SweepVariable::Gain {
        return Err(Error::Config("gain_sweep needs `variable: gain`".into()));
    }
    if spec.base.feedback_filter.is_none() {
        return Err(Error::Config("gain_sweep needs a feedback_filter section".into()));
    }
    run_sweep(spec)
}

pub fn temperature_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    if spec.variable != SweepVariable::Temperature {
        return Err(Error::Config("temperature_sweep needs `variable: temperature`".into()));
    }
    run_sweep(spec)
}

/// Dispatch on the sweep variable.
pub fn sweep(spec: &SweepSpec) -> Result<SweepResult> {
    match spec.variable {
        SweepVariable::Power => power_sweep(spec),
        SweepVariable::Gain => gain_sweep(spec),
        SweepVariable::Temperature => temperature_sweep(spec),
    }
}

/// Weighted least squares of `floor = a/P + b` (weights 1/floor²); returns a/b.
fn fit_crossover(powers: &[f64], floors: &[Option<f64>]) -> Option<f64> {
    let (mut s11, mut s12, mut s22, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut n = 0;
    for (p, f) in powers.iter().zip(floors) {
        let Some(f) = *f else { continue };
        let w = 1.0 / (f * f);
        let u = 1.0 / p;
        s11 += w * u * u;
        s12 += w * u;
        s22 += w;
        t1 += w * u * f;
        t2 += w * f;
        n += 1;
    }
    let det = s11 * s22 - s12 * s12;
    if n < 3 || det.abs() <= f64::EPSILON * s11 * s22 {
        return None;
    }
    let a = (t1 * s22 - t2 * s12) / det;
    let b = (s11 * t2 - s12 * t1) / det;
    (a > 0.0 && b > 0.0).then(|| a / b)
}

fn bracket(values: &[f64], x: f64) -> Option<(f64, f64)> {
    values.windows(2).find_map(|w| {
        let (lo, hi) = if w[0] < w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
        (lo <= x && x <= hi).then_some((lo, hi))
    })
}
