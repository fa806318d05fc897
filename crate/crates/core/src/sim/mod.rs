//! Time-domain integration of the feedback-cooled oscillator.
//!
//! Each step of length `dt`:
//!
//! 1. the apparent displacement `y = x + x_imp` is sampled,
//! 2. the feedback path turns `y` into a force, applied (with the optional
//!    calibration drive) as an impulse `F·dt` on the velocity,
//! 3. `(x, v)` is advanced with the exact damped-oscillator propagator plus
//!    an exactly distributed thermal (and back-action) increment.
//!
//! Because the force acts as a kick at the sampling instant, the loop seen
//! by the oscillator is exactly the discrete-time response of the feedback
//! path, with no extra hold delay.

pub mod filter;
mod propagator;
pub mod rng;

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constants::HBAR;
use crate::error::{Error, Result};
use crate::model::{imprecision_quanta, BackactionModel, Measurement, Oscillator};

pub use filter::{allpass_phase, Biquad, FeedbackFilter, LoopParameters};
use filter::FilterState;
use propagator::Propagator;
use rng::{stream, Stream};

/// Default sampling density.
pub const SAMPLES_PER_PERIOD: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSources {
    pub thermal: bool,
    pub imprecision: bool,
    pub backaction: bool,
}

impl Default for NoiseSources {
    fn default() -> Self {
        NoiseSources {
            thermal: true,
            imprecision: true,
            backaction: false,
        }
    }
}

impl NoiseSources {
    pub fn none() -> Self {
        NoiseSources {
            thermal: false,
            imprecision: false,
            backaction: false,
        }
    }
}

/// Coherent drive specified by the open-loop displacement it produces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTone {
    /// Hz.
    pub frequency: f64,
    /// Open-loop displacement amplitude, m.
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialState {
    /// Gaussian draw matching the expected (closed-loop) variance.
    #[default]
    Thermal,
    Rest,
    Displaced { x: f64 },
    Explicit { x: f64, v: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Hz.
    pub sample_rate: f64,
    /// Recorded duration, s.
    pub duration: f64,
    /// Unrecorded lead-in, s. `None` picks ten loaded energy-decay times when
    /// feedback is on and zero otherwise.
    pub settle_time: Option<f64>,
    pub seed: u64,
    pub noise: NoiseSources,
    pub backaction_model: BackactionModel,
    pub calibration_tone: Option<CalibrationTone>,
    pub initial_state: InitialState,
}

impl SimulationConfig {
    /// Default sampling at [`SAMPLES_PER_PERIOD`] samples per mechanical period.
    pub fn for_oscillator(osc: &Oscillator, duration: f64, seed: u64) -> Self {
        SimulationConfig {
            sample_rate: SAMPLES_PER_PERIOD * osc.freq_hz(),
            duration,
            settle_time: None,
            seed,
            noise: NoiseSources::default(),
            backaction_model: BackactionModel::default(),
            calibration_tone: None,
            initial_state: InitialState::default(),
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn record_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }
}

/// Uniformly sampled record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub dt: f64,
    /// Physical displacement, m.
    pub x: Vec<f64>,
    /// Apparent displacement, m.
    pub y: Vec<f64>,
    /// Feedback force, N.
    pub f_fb: Vec<f64>,
}

impl TimeSeries {
    pub fn with_capacity(dt: f64, n: usize) -> Self {
        TimeSeries {
            dt,
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            f_fb: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// Time since the start of the record, s.
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub f_fb: f64,
}

/// Consumer of simulated samples, so long runs need not be held in memory.
pub trait SampleSink {
    fn record(&mut self, sample: &Sample);
}

impl SampleSink for TimeSeries {
    fn record(&mut self, s: &Sample) {
        self.x.push(s.x);
        self.y.push(s.y);
        self.f_fb.push(s.f_fb);
    }
}

impl<F: FnMut(&Sample)> SampleSink for F {
    fn record(&mut self, sample: &Sample) {
        self(sample)
    }
}

/// A configured, runnable simulation.
pub struct Simulator {
    osc: Oscillator,
    dt: f64,
    settle_samples: usize,
    record_samples: usize,
    loop_params: LoopParameters,
    path: Option<FilterState>,
    propagator: Propagator,
    sigma_thermal: f64,
    sigma_backaction: f64,
    sigma_imprecision: f64,
    tone: Option<(f64, f64)>,
    limit: f64,
    thermal: ChaCha8Rng,
    imprecision: ChaCha8Rng,
    backaction: ChaCha8Rng,
    x: f64,
    v: f64,
}

impl Simulator {
    pub fn new(
        osc: &Oscillator,
        meas: &Measurement,
        filter: &FeedbackFilter,
        cfg: &SimulationConfig,
    ) -> Result<Self> {
        osc.validate()?;
        let required = 10.0 * osc.freq_hz();
        if !(cfg.sample_rate >= required) {
            return Err(Error::SampleRateTooLow {
                sample_rate: cfg.sample_rate,
                required,
            });
        }
        if !(cfg.duration > 0.0) {
            return Err(Error::invalid("duration", format!("must be > 0, got {}", cfg.duration)));
        }
        let dt = cfg.dt();
        let gamma0 = osc.damping_rate();

        let active = filter.feedback.enabled && filter.feedback.gain > 0.0;
        let (loop_params, path) = if active {
            let params = filter.loop_parameters(osc, cfg.sample_rate)?;
            let state = filter.runtime(params.force_gain, cfg.sample_rate)?;
            (params, Some(state))
        } else {
            let params = LoopParameters {
                gain: 0.0,
                phase: filter.feedback.phase,
                force_gain: 0.0,
                velocity_gain: 0.0,
            };
            (params, None)
        };

        let needs_imprecision = cfg.noise.imprecision || cfg.noise.backaction;
        let s_imp = if needs_imprecision {
            meas.validate()?;
            meas.total_imprecision()?
        } else {
            0.0
        };
        let n_imp = imprecision_quanta(s_imp, osc);
        let sigma_imprecision = if cfg.noise.imprecision {
            (0.5 * s_imp * cfg.sample_rate).sqrt()
        } else {
            0.0
        };

        // White acceleration intensity 2ħΩ₀Γ₀·n/m for a bath of n quanta.
        let per_quantum = 2.0 * HBAR * osc.omega0 * gamma0 / osc.mass;
        let n_th = osc.thermal_occupation();
        let sigma_thermal = if cfg.noise.thermal {
            (per_quantum * n_th).sqrt()
        } else {
            0.0
        };
        let n_ba = if cfg.noise.backaction {
            meas.backaction_quanta(n_imp, cfg.backaction_model)?
        } else {
            0.0
        };
        let sigma_backaction = (per_quantum * n_ba).sqrt();

        let tone = cfg.calibration_tone.map(|t| {
            let w = TAU * t.frequency;
            let stiffness =
                Complex64::new(osc.omega0 * osc.omega0 - w * w, gamma0 * w).norm() * osc.mass;
            (w * dt, t.amplitude * stiffness)
        });

        let gain = loop_params.gain;
        let n_bath = if cfg.noise.thermal { n_th } else { 0.0 } + n_ba;
        let n_meas = if cfg.noise.imprecision { n_imp } else { 0.0 };
        let expected_var = 2.0
            * osc.zero_point_motion().powi(2)
            * (n_bath + gain * gain * n_meas)
            / (1.0 + gain);

        let mut init_rng = stream(cfg.seed, Stream::InitialState);
        let (x, v) = match cfg.initial_state {
            InitialState::Thermal => {
                let sx = expected_var.sqrt();
                let zx: f64 = init_rng.sample(StandardNormal);
                let zv: f64 = init_rng.sample(StandardNormal);
                (sx * zx, osc.omega0 * sx * zv)
            }
            InitialState::Rest => (0.0, 0.0),
            InitialState::Displaced { x } => (x, 0.0),
            InitialState::Explicit { x, v } => (x, v),
        };

        let settle_time = cfg.settle_time.unwrap_or(if active {
            10.0 / ((1.0 + gain) * gamma0)
        } else {
            0.0
        });
        let scale = [
            osc.thermal_variance().sqrt(),
            sigma_imprecision,
            x.abs(),
            tone.map(|(_, f)| f / (osc.mass * gamma0 * osc.omega0)).unwrap_or(0.0),
        ]
        .into_iter()
        .fold(1e-30, f64::max);

        Ok(Simulator {
            osc: *osc,
            dt,
            settle_samples: (settle_time * cfg.sample_rate).ceil() as usize,
            record_samples: cfg.record_samples(),
            loop_params,
            path,
            propagator: Propagator::new(osc.omega0, gamma0, dt),
            sigma_thermal,
            sigma_backaction,
            sigma_imprecision,
            tone,
            limit: 1e6 * scale,
            thermal: stream(cfg.seed, Stream::Thermal),
            imprecision: stream(cfg.seed, Stream::Imprecision),
            backaction: stream(cfg.seed, Stream::Backaction),
            x,
            v,
        })
    }

    /// Effective loop gain and phase realised by the feedback path at Ω₀.
    pub fn loop_parameters(&self) -> LoopParameters {
        self.loop_params
    }

    pub fn settle_samples(&self) -> usize {
        self.settle_samples
    }

    pub fn record_samples(&self) -> usize {
        self.record_samples
    }

    /// Run the lead-in and then the recorded interval, feeding `sink`.
    pub fn run<S: SampleSink + ?Sized>(&mut self, sink: &mut S) -> Result<()> {
        let total = self.settle_samples + self.record_samples;
        for k in 0..total {
            let sample = self.step(k)?;
            if k >= self.settle_samples {
                sink.record(&Sample {
                    t: (k - self.settle_samples) as f64 * self.dt,
                    ..sample
                });
            }
        }
        Ok(())
    }

    #[inline]
    fn step(&mut self, k: usize) -> Result<Sample> {
        let x = self.x;
        let y = if self.sigma_imprecision > 0.0 {
            let z: f64 = self.imprecision.sample(StandardNormal);
            x + self.sigma_imprecision * z
        } else {
            x
        };
        let f_fb = match &mut self.path {
            Some(path) => path.force(y),
            None => 0.0,
        };
        let drive = match self.tone {
            Some((w, amp)) => amp * (w * k as f64).cos(),
            None => 0.0,
        };
        let v = self.v + (f_fb + drive) * self.dt / self.osc.mass;
        let (mut nx, mut nv) = self.propagator.advance(x, v);
        if self.sigma_thermal > 0.0 {
            let (dx, dv) = self.propagator.noise(&mut self.thermal, self.sigma_thermal);
            nx += dx;
            nv += dv;
        }
        if self.sigma_backaction > 0.0 {
            let (dx, dv) = self.propagator.noise(&mut self.backaction, self.sigma_backaction);
            nx += dx;
            nv += dv;
        }
        if !(nx.abs() < self.limit) {
            return Err(Error::Unstable {
                time: (k + 1) as f64 * self.dt,
                gain: self.loop_params.gain,
                phase: self.loop_params.phase,
            });
        }
        self.x = nx;
        self.v = nv;
        Ok(Sample {
            t: k as f64 * self.dt,
            x,
            y,
            f_fb,
        })
    }
}

/// Simulate and collect the full record in memory.
pub fn simulate(
    osc: &Oscillator,
    meas: &Measurement,
    filter: &FeedbackFilter,
    cfg: &SimulationConfig,
) -> Result<TimeSeries> {
    let mut sim = Simulator::new(osc, meas, filter, cfg)?;
    let mut series = TimeSeries::with_capacity(cfg.dt(), sim.record_samples());
    sim.run(&mut series)?;
    Ok(series)
}

/// Brute-force loop transfer: drive the noiseless oscillator with a sinusoidal
/// force at `drive_freq` (Hz) with and without feedback and return the ratio
/// of the complex displacement responses, closed-loop over open-loop.
///
/// The open-loop leg starts in its exact steady state; the closed-loop leg
/// starts there too and is given forty loaded amplitude-decay times to settle,
/// so this is only practical when (1+g)·Γ₀ is not tiny.
pub fn measure_loop_transfer(
    osc: &Oscillator,
    meas: &Measurement,
    filter: &FeedbackFilter,
    cfg: &SimulationConfig,
    drive_freq: f64,
) -> Result<Complex64> {
    let amplitude = 1e-12;
    let cycles = 400.0;
    let window = (cycles * cfg.sample_rate / drive_freq).ceil();
    let mut base = SimulationConfig {
        duration: window / cfg.sample_rate,
        noise: NoiseSources::none(),
        calibration_tone: Some(CalibrationTone {
            frequency: drive_freq,
            amplitude,
        }),
        ..cfg.clone()
    };

    // Exact steady state of the open-loop kicked system:
    // (e^{iωdt} − Φ)·Z = Φ·e_v·F·dt/m.
    let dt = cfg.dt();
    let w = TAU * drive_freq;
    let gamma0 = osc.damping_rate();
    let force = amplitude
        * osc.mass
        * Complex64::new(osc.omega0 * osc.omega0 - w * w, gamma0 * w).norm();
    let p = Propagator::new(osc.omega0, gamma0, dt);
    let (phi01, phi11) = p.advance(0.0, 1.0);
    let (phi00, phi10) = p.advance(1.0, 0.0);
    let rot = Complex64::from_polar(1.0, w * dt);
    let kick = force * dt / osc.mass;
    let (b0, b1) = (phi01 * kick, phi11 * kick);
    let m = [[rot - phi00, Complex64::from(-phi01)], [Complex64::from(-phi10), rot - phi11]];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let zx = (m[1][1] * b0 - m[0][1] * b1) / det;
    let zv = (m[0][0] * b1 - m[1][0] * b0) / det;
    base.initial_state = InitialState::Explicit { x: zx.re, v: zv.re };

    let mut open_filter = filter.clone();
    open_filter.feedback.enabled = false;
    base.settle_time = Some(0.0);
    let open = response_phasor(osc, meas, &open_filter, &base, drive_freq)?;

    let gain = filter.feedback.effective_gain();
    let settle = if gain > 0.0 {
        80.0 / ((1.0 + gain) * gamma0)
    } else {
        0.0
    };
    base.settle_time = Some(settle);
    let closed = response_phasor(osc, meas, filter, &base, drive_freq)?;
    Ok(closed / open)
}

/// Least-squares phasor X of x(t) ≈ Re(X·e^{iωt}) over the recorded window,
/// with t counted from the start of the run.
fn response_phasor(
    osc: &Oscillator,
    meas: &Measurement,
    filter: &FeedbackFilter,
    cfg: &SimulationConfig,
    freq: f64,
) -> Result<Complex64> {
    let mut sim = Simulator::new(osc, meas, filter, cfg)?;
    let offset = sim.settle_samples() as f64 * cfg.dt();
    let w = TAU * freq;
    let (mut cc, mut cs, mut ss, mut xc, mut xs) = (0.0, 0.0, 0.0, 0.0, 0.0);
    sim.run(&mut |s: &Sample| {
        let (sn, c) = (w * (s.t + offset)).sin_cos();
        cc += c * c;
        cs += c * sn;
        ss += sn * sn;
        xc += s.x * c;
        xs += s.x * sn;
    })?;
    let det = cc * ss - cs * cs;
    let a = (xc * ss - xs * cs) / det;
    let b = (xs * cc - xc * cs) / det;
    Ok(Complex64::new(a, -b))
}
