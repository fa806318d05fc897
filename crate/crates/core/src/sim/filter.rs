//! Digital feedback path: Butterworth bandpass, integer delay line and an
//! optional first-order allpass for fractional delay.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Feedback, Oscillator};

/// Feedback filter realisation and the target loop settings it implements.
///
/// `feedback.gain` is the dimensionless damping gain g; the force-domain gain
/// is derived from it (see [`FeedbackFilter::loop_parameters`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackFilter {
    pub feedback: Feedback,
    /// Lower band edge, Hz.
    pub band_low: f64,
    /// Upper band edge, Hz.
    pub band_high: f64,
    /// Order of the analog lowpass prototype; the bandpass has 2·order poles.
    pub order: usize,
    pub delay_samples: usize,
    /// Coefficient `a` of `(a + z⁻¹)/(1 + a·z⁻¹)`, when present.
    pub allpass: Option<f64>,
    /// Actuator saturation, N.
    pub max_force: Option<f64>,
}

/// Effective loop settings seen by the mechanical mode at Ω₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopParameters {
    /// Dimensionless damping gain g.
    pub gain: f64,
    /// Phase lead of the feedback path at Ω₀, rad.
    pub phase: f64,
    /// Force per metre of apparent displacement applied before filtering, N/m.
    pub force_gain: f64,
    /// Equivalent velocity-damping coefficient g·m·Γ₀, N·s/m.
    pub velocity_gain: f64,
}

impl FeedbackFilter {
    pub fn new(feedback: Feedback, band_low: f64, band_high: f64, order: usize) -> Self {
        FeedbackFilter {
            feedback,
            band_low,
            band_high,
            order,
            delay_samples: 0,
            allpass: None,
            max_force: None,
        }
    }

    /// Bandpass around `center_hz` spanning a factor `ratio` either side.
    pub fn around(feedback: Feedback, center_hz: f64, ratio: f64) -> Self {
        Self::new(feedback, center_hz / ratio, center_hz * ratio, 1)
    }

    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        self.feedback.validate()?;
        if !(self.band_low > 0.0 && self.band_low < self.band_high) {
            return Err(Error::invalid(
                "band_low",
                format!(
                    "band must satisfy 0 < low < high, got {}..{} Hz",
                    self.band_low, self.band_high
                ),
            ));
        }
        if self.band_high >= 0.5 * sample_rate {
            return Err(Error::AboveNyquist {
                freq: self.band_high,
                nyquist: 0.5 * sample_rate,
            });
        }
        if self.order == 0 || self.order > 8 {
            return Err(Error::invalid("order", format!("must be 1..=8, got {}", self.order)));
        }
        if let Some(a) = self.allpass {
            if !(a.abs() < 1.0) {
                return Err(Error::invalid("allpass", format!("|a| must be < 1, got {a}")));
            }
        }
        Ok(())
    }

    /// Second-order sections of the bandpass, normalised to unit gain at the
    /// geometric band centre.
    pub fn sections(&self, sample_rate: f64) -> Result<Vec<Biquad>> {
        self.validate(sample_rate)?;
        let fs2 = 2.0 * sample_rate;
        let warp = |f: f64| fs2 * (PI * f / sample_rate).tan();
        let (wl, wh) = (warp(self.band_low), warp(self.band_high));
        let bw = wh - wl;
        let w0sq = wl * wh;

        let n = self.order;
        let mut poles = Vec::with_capacity(2 * n);
        for k in 0..n {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let p = Complex64::from_polar(1.0, theta);
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0sq).sqrt();
            for s in [(pb + disc) * 0.5, (pb - disc) * 0.5] {
                poles.push((fs2 + s) / (fs2 - s));
            }
        }

        let mut sections = Vec::with_capacity(n);
        let mut reals = Vec::new();
        let mut upper: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
        upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
        for p in &upper {
            sections.push(Biquad::bandpass_section(-2.0 * p.re, p.norm_sqr()));
        }
        reals.extend(poles.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re));
        for pair in reals.chunks(2) {
            let (p1, p2) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
            sections.push(Biquad::bandpass_section(-(p1 + p2), p1 * p2));
        }

        let center = sample_rate / PI * (w0sq.sqrt() / fs2).atan();
        let z = Complex64::from_polar(1.0, TAU * center / sample_rate);
        let mag = sections.iter().map(|s| s.response(z)).product::<Complex64>().norm();
        if let Some(first) = sections.first_mut() {
            first.scale(1.0 / mag);
        }
        Ok(sections)
    }

    /// Exact discrete-time response of filter × delay (× allpass) at `freq` Hz.
    pub fn frequency_response(&self, sample_rate: f64, freq: f64) -> Result<Complex64> {
        let nyquist = 0.5 * sample_rate;
        if !(freq < nyquist) {
            return Err(Error::AboveNyquist { freq, nyquist });
        }
        let sections = self.sections(sample_rate)?;
        let w = TAU * freq / sample_rate;
        let z = Complex64::from_polar(1.0, w);
        let mut h: Complex64 = sections.iter().map(|s| s.response(z)).product();
        h *= Complex64::from_polar(1.0, -w * self.delay_samples as f64);
        if let Some(a) = self.allpass {
            h *= Complex64::from_polar(1.0, allpass_phase(a, w));
        }
        Ok(h)
    }

    /// Effective (g, φ) at Ω₀ and the force-domain gain realising the target g.
    pub fn loop_parameters(&self, osc: &Oscillator, sample_rate: f64) -> Result<LoopParameters> {
        let h = self.frequency_response(sample_rate, osc.freq_hz())?;
        let phase = h.arg();
        let gain = self.feedback.effective_gain();
        let velocity_gain = gain * osc.mass * osc.damping_rate();
        if gain > 0.0 && phase.sin() < 0.05 {
            return Err(Error::invalid(
                "feedback_filter",
                format!(
                    "realised loop phase {:.1} deg at {:.6} Hz does not damp; retune the delay",
                    phase.to_degrees(),
                    osc.freq_hz()
                ),
            ));
        }
        let force_gain = if gain > 0.0 {
            velocity_gain * osc.omega0 / (h.norm() * phase.sin())
        } else {
            0.0
        };
        Ok(LoopParameters {
            gain,
            phase,
            force_gain,
            velocity_gain,
        })
    }

    /// Choose the integer delay and allpass coefficient so that the loop phase
    /// at Ω₀ equals `self.feedback.phase`.
    pub fn tuned(mut self, osc: &Oscillator, sample_rate: f64) -> Result<Self> {
        self.delay_samples = 0;
        self.allpass = None;
        let w = osc.omega0 / sample_rate;
        let bare = self.frequency_response(sample_rate, osc.freq_hz())?.arg();
        let lag = (bare - self.feedback.phase).rem_euclid(TAU);
        let mut samples = lag / w;
        if samples < 0.5 {
            samples += TAU / w;
        }
        let whole = (samples - 0.5).floor();
        let fraction = samples - whole;
        let target = -fraction * w;
        // Allpass phase at w falls monotonically from 0 (a → 1) to −π (a → −1).
        let (mut lo, mut hi) = (-1.0 + 1e-12, 1.0 - 1e-12);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if allpass_phase(mid, w) > target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        self.delay_samples = whole as usize;
        self.allpass = Some(0.5 * (lo + hi));
        Ok(self)
    }

    pub(crate) fn runtime(&self, force_gain: f64, sample_rate: f64) -> Result<FilterState> {
        Ok(FilterState {
            sections: self.sections(sample_rate)?,
            delay: VecDeque::from(vec![0.0; self.delay_samples]),
            allpass: self.allpass.map(|a| (a, 0.0, 0.0)),
            force_gain,
            max_force: self.max_force,
        })
    }
}

/// Phase of `(a + z⁻¹)/(1 + a·z⁻¹)` at normalised angular frequency `w`.
pub fn allpass_phase(a: f64, w: f64) -> f64 {
    -w + 2.0 * (a * w.sin()).atan2(1.0 + a * w.cos())
}

/// Transposed direct-form-II biquad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
    s1: f64,
    s2: f64,
}

impl Biquad {
    /// Section with zeros at z = ±1 and denominator `1 + a1·z⁻¹ + a2·z⁻²`.
    fn bandpass_section(a1: f64, a2: f64) -> Self {
        Biquad {
            b: [1.0, 0.0, -1.0],
            a: [a1, a2],
            s1: 0.0,
            s2: 0.0,
        }
    }

    fn scale(&mut self, k: f64) {
        for b in &mut self.b {
            *b *= k;
        }
    }

    pub fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = 1.0 + zi * (self.a[0] + zi * self.a[1]);
        num / den
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.s1;
        self.s1 = self.b[1] * x - self.a[0] * y + self.s2;
        self.s2 = self.b[2] * x - self.a[1] * y;
        y
    }
}

/// Running state of the feedback path during a simulation.
#[derive(Debug, Clone)]
pub(crate) struct FilterState {
    sections: Vec<Biquad>,
    delay: VecDeque<f64>,
    allpass: Option<(f64, f64, f64)>,
    force_gain: f64,
    max_force: Option<f64>,
}

impl FilterState {
    /// Feedback force for the current apparent displacement sample.
    #[inline]
    pub fn force(&mut self, y: f64) -> f64 {
        let mut u = y;
        for s in &mut self.sections {
            u = s.process(u);
        }
        if !self.delay.is_empty() {
            self.delay.push_back(u);
            u = self.delay.pop_front().unwrap_or(0.0);
        }
        if let Some((a, x_prev, y_prev)) = &mut self.allpass {
            let out = *a * u + *x_prev - *a * *y_prev;
            *x_prev = u;
            *y_prev = out;
            u = out;
        }
        let f = -self.force_gain * u;
        match self.max_force {
            Some(limit) => f.clamp(-limit, limit),
            None => f,
        }
    }
}
