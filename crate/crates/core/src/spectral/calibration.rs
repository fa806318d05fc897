use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::Spectrum;
use crate::error::{Error, Result};
use crate::model::Oscillator;

/// Thermal-area integration half-width in open-loop linewidths.
const BAND_LINEWIDTHS: f64 = 20.0;
/// Minimum integration half-width in bins, for peaks narrower than a bin.
const MIN_BAND_BINS: f64 = 8.0;
/// Bins either side of the tone excluded from the thermal sum.
const TONE_GUARD: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Displacement per raw unit, m/unit.
    pub meters_per_unit: f64,
    /// Hz.
    pub tone_frequency: f64,
    /// Background-subtracted thermal area, raw units².
    pub inferred_thermal_area: f64,
    /// Calibrated tone amplitude, m.
    pub tone_amplitude: f64,
    /// Imprecision floor, m²/Hz.
    pub floor: f64,
    /// False when the record is shorter than Q₀/Ω₀.
    pub averaging_sufficient: bool,
}

/// Scale a raw open-loop spectrum so the thermal peak area equals
/// 2·x_zp²·n_th, and read back the tone amplitude in metres.
///
/// The peak area is summed over ±20 linewidths (at least ±8 bins), the
/// imprecision floor is the mean of a ring at 2–4× that half-width, and the
/// Lorentzian fraction outside the band is restored.
pub fn calibrate(
    spectrum: &Spectrum,
    tone_frequency: f64,
    osc: &Oscillator,
) -> Result<CalibrationResult> {
    osc.validate()?;
    let f0 = osc.freq_hz();
    let fwhm = osc.damping_rate() / TAU;
    if (tone_frequency - f0).abs() < fwhm {
        return Err(Error::ToneInsideLinewidth {
            tone: tone_frequency,
            center: f0,
        });
    }
    let df = spectrum.df();
    let tone_bin = spectrum
        .bin_of(tone_frequency)
        .filter(|&k| k > TONE_GUARD && k + TONE_GUARD < spectrum.len())
        .ok_or(Error::BandOutsideSpectrum {
            low: tone_frequency,
            high: tone_frequency,
        })?;
    let tone_bins = tone_bin - TONE_GUARD..=tone_bin + TONE_GUARD;
    if tone_bins.contains(&spectrum.bin_of(f0).unwrap_or(usize::MAX)) {
        return Err(Error::ToneInsideLinewidth {
            tone: tone_frequency,
            center: f0,
        });
    }

    let half = (BAND_LINEWIDTHS * fwhm).max(MIN_BAND_BINS * df);
    let band = spectrum.band_indices(f0 - half, f0 + half)?;
    if band.start == 0 || band.end == spectrum.len() {
        return Err(Error::BandOutsideSpectrum {
            low: f0 - half,
            high: f0 + half,
        });
    }

    let ring: Vec<f64> = [(f0 - 4.0 * half, f0 - 2.0 * half), (f0 + 2.0 * half, f0 + 4.0 * half)]
        .iter()
        .filter_map(|&(lo, hi)| spectrum.band_indices(lo.max(df), hi).ok())
        .flatten()
        .filter(|k| !tone_bins.contains(k))
        .map(|k| spectrum.psd[k])
        .collect();
    if ring.is_empty() {
        return Err(Error::BandOutsideSpectrum {
            low: f0 - 4.0 * half,
            high: f0 + 4.0 * half,
        });
    }
    let floor = ring.iter().sum::<f64>() / ring.len() as f64;

    // Local background under the tone from the bins just outside the guard.
    let side: Vec<f64> = (1..=3)
        .flat_map(|d| [tone_bin.checked_sub(TONE_GUARD + d), Some(tone_bin + TONE_GUARD + d)])
        .flatten()
        .filter(|&k| k < spectrum.len())
        .map(|k| spectrum.psd[k])
        .collect();
    let local = side.iter().sum::<f64>() / side.len() as f64;
    let tone_power = tone_bins
        .clone()
        .map(|k| spectrum.psd[k] - local)
        .sum::<f64>()
        * df;

    let thermal_sum: f64 = band
        .clone()
        .map(|k| {
            if tone_bins.contains(&k) {
                local
            } else {
                spectrum.psd[k]
            }
        })
        .map(|p| p - floor)
        .sum::<f64>()
        * df;
    let fraction = 2.0 / PI * (2.0 * half / fwhm).atan();
    let area = thermal_sum / fraction;
    if !(area > 0.0) || !(tone_power > 0.0) {
        return Err(Error::invalid(
            "spectrum",
            "no thermal peak or tone above the background",
        ));
    }

    let meters_per_unit = (osc.thermal_variance() / area).sqrt();
    Ok(CalibrationResult {
        meters_per_unit,
        tone_frequency,
        inferred_thermal_area: area,
        tone_amplitude: meters_per_unit * (2.0 * tone_power).sqrt(),
        floor: floor * meters_per_unit * meters_per_unit,
        averaging_sufficient: spectrum.duration > osc.q0 / osc.omega0,
    })
}
