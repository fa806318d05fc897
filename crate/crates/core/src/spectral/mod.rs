//! Power spectral density estimation, displacement calibration and
//! closed-loop spectrum fitting.

mod calibration;
mod fit;

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use calibration::{calibrate, CalibrationResult};
pub use fit::{
    fit_closed_loop, fit_closed_loop_with, fit_lorentzian, occupancy_from_variance, FitOptions,
    FitResult, FixedInputs, LorentzianFit, Occupancy,
};

/// Data taper applied to each segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Periodic Hann, equivalent noise bandwidth 1.5 bins.
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }

    /// Equivalent noise bandwidth in bins.
    pub fn enbw(self) -> f64 {
        match self {
            Window::Hann => 1.5,
            Window::Rectangular => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    pub segment_length: usize,
    pub window: Window,
    /// Fractional overlap of consecutive segments, 0 ≤ overlap ≤ 0.9.
    pub overlap: f64,
}

impl WelchConfig {
    pub fn new(segment_length: usize) -> Self {
        WelchConfig {
            segment_length,
            window: Window::Hann,
            overlap: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_length < 4 {
            return Err(Error::invalid(
                "segment_length",
                format!("must be >= 4, got {}", self.segment_length),
            ));
        }
        if !(0.0..=0.9).contains(&self.overlap) {
            return Err(Error::invalid(
                "overlap",
                format!("must lie in [0, 0.9], got {}", self.overlap),
            ));
        }
        Ok(())
    }

    fn hop(&self) -> usize {
        ((self.segment_length as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }
}

/// Single-sided power spectral density on a uniform grid starting at DC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Hz.
    pub frequencies: Vec<f64>,
    /// Units²/Hz.
    pub psd: Vec<f64>,
    /// Equivalent noise bandwidth, Hz.
    pub resolution_bandwidth: f64,
    /// Number of averaged segments.
    pub averages: usize,
    pub window: Window,
    /// Length of the underlying record, s.
    pub duration: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.psd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psd.is_empty()
    }

    /// Bin spacing, Hz.
    pub fn df(&self) -> f64 {
        if self.frequencies.len() > 1 {
            self.frequencies[1] - self.frequencies[0]
        } else {
            self.resolution_bandwidth / self.window.enbw()
        }
    }

    /// Index of the bin nearest `freq`, if it lies on the grid.
    pub fn bin_of(&self, freq: f64) -> Option<usize> {
        let first = *self.frequencies.first()?;
        let k = ((freq - first) / self.df()).round();
        (k >= 0.0 && (k as usize) < self.len()).then_some(k as usize)
    }

    /// Bins with `low <= f <= high`.
    pub fn band_indices(&self, low: f64, high: f64) -> Result<std::ops::Range<usize>> {
        let start = self.frequencies.partition_point(|&f| f < low);
        let end = self.frequencies.partition_point(|&f| f <= high);
        if start >= end {
            return Err(Error::BandOutsideSpectrum { low, high });
        }
        Ok(start..end)
    }

    /// Sub-spectrum restricted to `[low, high]`.
    pub fn band(&self, low: f64, high: f64) -> Result<Spectrum> {
        let r = self.band_indices(low, high)?;
        Ok(Spectrum {
            frequencies: self.frequencies[r.clone()].to_vec(),
            psd: self.psd[r].to_vec(),
            ..self.clone()
        })
    }

    /// Σ psd·df over `[low, high]`.
    pub fn integrate(&self, low: f64, high: f64) -> Result<f64> {
        let r = self.band_indices(low, high)?;
        Ok(self.psd[r].iter().sum::<f64>() * self.df())
    }

    /// Total power, Σ psd·df.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.df()
    }

    /// Spectrum of the record multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Spectrum {
        let k = factor * factor;
        Spectrum {
            psd: self.psd.iter().map(|p| p * k).collect(),
            ..self.clone()
        }
    }
}

/// Welch estimate over a complete record.
pub fn welch_psd(series: &[f64], sample_rate: f64, cfg: &WelchConfig) -> Result<Spectrum> {
    let mut acc = WelchAccumulator::new(sample_rate, cfg)?;
    for &x in series {
        acc.push(x);
    }
    acc.finish()
}

/// Streaming Welch estimator: segments are transformed as soon as they are
/// complete, so memory is bounded by one segment.
pub struct WelchAccumulator {
    sample_rate: f64,
    cfg: WelchConfig,
    hop: usize,
    window: Vec<f64>,
    window_power: f64,
    buffer: Vec<f64>,
    scratch: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    sum: Vec<f64>,
    segments: usize,
    total: usize,
}

impl WelchAccumulator {
    pub fn new(sample_rate: f64, cfg: &WelchConfig) -> Result<Self> {
        cfg.validate()?;
        if !(sample_rate > 0.0) {
            return Err(Error::invalid("sample_rate", format!("must be > 0, got {sample_rate}")));
        }
        let n = cfg.segment_length;
        let window = cfg.window.coefficients(n);
        let window_power = window.iter().map(|w| w * w).sum();
        Ok(WelchAccumulator {
            sample_rate,
            cfg: *cfg,
            hop: cfg.hop(),
            window,
            window_power,
            buffer: Vec::with_capacity(n),
            scratch: vec![Complex64::default(); n],
            fft: FftPlanner::new().plan_fft_forward(n),
            sum: vec![0.0; n / 2 + 1],
            segments: 0,
            total: 0,
        })
    }

    pub fn push(&mut self, x: f64) {
        self.buffer.push(x);
        self.total += 1;
        if self.buffer.len() == self.cfg.segment_length {
            self.process();
            self.buffer.drain(..self.hop.min(self.buffer.len()));
        }
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    fn process(&mut self) {
        let n = self.buffer.len() as f64;
        let mean = self.buffer.iter().sum::<f64>() / n;
        for ((s, &x), &w) in self.scratch.iter_mut().zip(&self.buffer).zip(&self.window) {
            *s = Complex64::new((x - mean) * w, 0.0);
        }
        self.fft.process(&mut self.scratch);
        for (acc, x) in self.sum.iter_mut().zip(&self.scratch) {
            *acc += x.norm_sqr();
        }
        self.segments += 1;
    }

    pub fn finish(self) -> Result<Spectrum> {
        let n = self.cfg.segment_length;
        if self.segments == 0 {
            return Err(Error::RecordTooShort {
                len: self.total,
                segment: n,
            });
        }
        let norm = 1.0 / (self.sample_rate * self.window_power * self.segments as f64);
        let last = self.sum.len() - 1;
        let psd = self
            .sum
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let one_sided = if k == 0 || (k == last && n.is_multiple_of(2)) { 1.0 } else { 2.0 };
                one_sided * s * norm
            })
            .collect();
        let df = self.sample_rate / n as f64;
        Ok(Spectrum {
            frequencies: (0..=last).map(|k| k as f64 * df).collect(),
            psd,
            resolution_bandwidth: self.cfg.window.enbw() * df,
            averages: self.segments,
            window: self.cfg.window,
            duration: self.total as f64 / self.sample_rate,
        })
    }
}
