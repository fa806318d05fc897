use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::Spectrum;
use crate::error::{Error, Result};
use crate::model::{
    effective_temperature, mean_phonon, LoopModel, Measurement, Oscillator,
};

/// Inputs held fixed while fitting the gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedInputs {
    pub n_th: f64,
    pub n_imp: f64,
    /// rad/s.
    pub gamma0: f64,
    /// rad.
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Fit band in Hz; `None` uses Ω₀/2π ± 25 %.
    pub band: Option<(f64, f64)>,
    /// Fit the floor jointly with g instead of fixing it at 2·S_zp·n_imp.
    pub fit_floor: bool,
    pub max_gain: f64,
    pub max_iterations: usize,
    /// Convergence threshold on ln(1+g).
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            band: None,
            fit_floor: false,
            max_gain: 1e9,
            max_iterations: 100,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub gain: f64,
    /// One-sigma statistical uncertainty of the gain from the Fisher information.
    pub gain_stderr: f64,
    /// Mean phonon number at the fitted gain.
    pub occupancy: f64,
    /// K.
    pub effective_temperature: f64,
    /// Reduced chi-square with variance model²/averages; ≈ 1 for a good fit.
    pub residual: f64,
    /// Fitted damped peak at least twice the floor.
    pub valid: bool,
    /// The optimum lay at negative gain and was clipped to zero.
    pub clipped_at_zero: bool,
    /// Floor used or fitted, m²/Hz.
    pub floor: f64,
    pub iterations: usize,
    pub bins: usize,
    pub fixed_inputs: FixedInputs,
}

/// Fit the apparent-displacement spectrum for g with n_th, n_imp, Γ₀ and φ
/// derived from the device.
pub fn fit_closed_loop(
    spectrum: &Spectrum,
    osc: &Oscillator,
    meas: &Measurement,
    phase: f64,
) -> Result<FitResult> {
    let model = LoopModel::from_device(osc, meas, phase, None)?;
    fit_closed_loop_with(spectrum, &model, &FitOptions::default())
}

struct Band {
    detuning: Vec<f64>,
    data: Vec<f64>,
}

/// Closed-loop fit with explicit fixed inputs.
///
/// Minimises Σ (S − M)²/M² by iteratively reweighted least squares, which
/// converges to the maximum-likelihood gain for averaged periodogram bins.
pub fn fit_closed_loop_with(
    spectrum: &Spectrum,
    model: &LoopModel,
    opts: &FitOptions,
) -> Result<FitResult> {
    let f0 = model.omega0 / TAU;
    let (low, high) = opts.band.unwrap_or((0.75 * f0, 1.25 * f0));
    let range = spectrum.band_indices(low, high)?;
    let band = Band {
        detuning: spectrum.frequencies[range.clone()]
            .iter()
            .map(|f| 2.0 * (TAU * f - model.omega0) / model.gamma0)
            .collect(),
        data: spectrum.psd[range].to_vec(),
    };
    let n = band.data.len();
    let params = if opts.fit_floor { 2 } else { 1 };
    if n <= params + 1 {
        return Err(Error::invalid("band", format!("only {n} bins in {low}..{high} Hz")));
    }

    let peak = 2.0 * model.s_xx_zp * model.n_th;
    let stiffening = 1.0 / model.phase.tan();
    let thermal = |g: f64, d: f64| {
        let s = d - g * stiffening;
        peak / ((1.0 + g) * (1.0 + g) + s * s)
    };
    let fixed_floor = model.floor();
    let floor_for = |g: f64, w: &dyn Fn(usize) -> f64| -> f64 {
        if !opts.fit_floor {
            return fixed_floor;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let wi = w(i);
            num += wi * (band.data[i] - thermal(g, band.detuning[i]));
            den += wi;
        }
        (num / den).max(0.0)
    };

    let u_max = opts.max_gain.ln_1p();
    // Robust start: least squares in log space, floor from unit weights.
    let log_cost = |u: f64| {
        let g = u.exp_m1();
        let c = floor_for(g, &|_| 1.0);
        band.detuning
            .iter()
            .zip(&band.data)
            .filter(|(_, &s)| s > 0.0)
            .map(|(&d, &s)| (s.ln() - (thermal(g, d) + c).ln()).powi(2))
            .sum::<f64>()
    };
    let mut u = minimise(&log_cost, 0.0, u_max, 400);

    let mut floor = floor_for(u.exp_m1(), &|_| 1.0);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let g_prev = u.exp_m1();
        let weights: Vec<f64> = band
            .detuning
            .iter()
            .map(|&d| (thermal(g_prev, d) + floor).powi(-2))
            .collect();
        let cost = |u: f64| {
            let g = u.exp_m1();
            let c = floor_for(g, &|i| weights[i]);
            (0..n)
                .map(|i| weights[i] * (band.data[i] - thermal(g, band.detuning[i]) - c).powi(2))
                .sum::<f64>()
        };
        let next = minimise(&cost, (u - 0.5).max(0.0), (u + 0.5).min(u_max), 40);
        let step = (next - u).abs();
        u = next;
        floor = floor_for(u.exp_m1(), &|i| weights[i]);
        if step < opts.tolerance {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(Error::FitNotConverged {
                iterations,
                last_gain: u.exp_m1(),
            });
        }
    }

    let gain = u.exp_m1();
    let weights_at = |g: f64, c: f64| -> Vec<f64> {
        band.detuning
            .iter()
            .map(|&d| (thermal(g, d) + c).powi(-2))
            .collect()
    };
    let averages = spectrum.averages.max(1) as f64;

    let model_at = |i: usize| thermal(gain, band.detuning[i]) + floor;
    let chi2: f64 = (0..n)
        .map(|i| ((band.data[i] - model_at(i)) / model_at(i)).powi(2))
        .sum();
    let residual = chi2 * averages / (n - params) as f64;

    let h = 1e-6 * (1.0 + gain);
    let fisher: f64 = (0..n)
        .map(|i| {
            let d = band.detuning[i];
            let dm = (thermal(gain + h, d) - thermal((gain - h).max(0.0), d))
                / (gain + h - (gain - h).max(0.0));
            (dm / model_at(i)).powi(2)
        })
        .sum::<f64>()
        * averages;
    // Tapered windows correlate neighbouring bins over about one ENBW.
    let gain_stderr = (spectrum.window.enbw() / fisher).sqrt();

    let clipped_at_zero = gain < 1e-6 && {
        let w = weights_at(0.0, floor);
        let cost = |g: f64| {
            (0..n)
                .map(|i| w[i] * (band.data[i] - thermal(g, band.detuning[i]) - floor).powi(2))
                .sum::<f64>()
        };
        cost(1e-4) > cost(0.0)
    };

    let n_imp = if opts.fit_floor {
        floor / (2.0 * model.s_xx_zp)
    } else {
        model.n_imp
    };
    let occupancy = mean_phonon(model.n_th, n_imp, gain);
    Ok(FitResult {
        gain,
        gain_stderr,
        occupancy,
        effective_temperature: effective_temperature(occupancy, model.omega0),
        residual,
        valid: thermal(gain, gain * stiffening) >= floor,
        clipped_at_zero,
        floor,
        iterations,
        bins: n,
        fixed_inputs: FixedInputs {
            n_th: model.n_th,
            n_imp,
            gamma0: model.gamma0,
            phase: model.phase,
        },
    })
}

/// Grid scan followed by golden-section refinement around the best node.
fn minimise(f: &dyn Fn(f64) -> f64, a: f64, b: f64, nodes: usize) -> f64 {
    if b <= a {
        return a;
    }
    let step = (b - a) / nodes as f64;
    let (best, _) = (0..=nodes)
        .map(|k| (k, f(a + k as f64 * step)))
        .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
    let mut lo = a + (best as f64 - 1.0).max(0.0) * step;
    let mut hi = (a + (best as f64 + 1.0) * step).min(b);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo < 1e-12 * (1.0 + hi.abs()) {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    // A boundary optimum is better represented by the boundary itself.
    [a, mid, b]
        .into_iter()
        .map(|x| (x, f(x)))
        .fold((mid, f64::INFINITY), |acc, (x, v)| if v < acc.1 { (x, v) } else { acc })
        .0
}

/// Lorentzian plus flat floor, `S(f) = floor + (2·area/(π·fwhm))/(1 + (2(f−center)/fwhm)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    /// Hz.
    pub center: f64,
    /// Hz.
    pub fwhm: f64,
    /// Units².
    pub area: f64,
    /// Units²/Hz.
    pub floor: f64,
    pub residual: f64,
}

impl LorentzianFit {
    pub fn evaluate(&self, f: f64) -> f64 {
        let x = 2.0 * (f - self.center) / self.fwhm;
        self.floor + 2.0 * self.area / (PI * self.fwhm) / (1.0 + x * x)
    }
}

/// Fit a single Lorentzian peak on a floor within `[low, high]` Hz by
/// Fisher scoring with 1/model² weights.
pub fn fit_lorentzian(spectrum: &Spectrum, low: f64, high: f64) -> Result<LorentzianFit> {
    let range = spectrum.band_indices(low, high)?;
    let f = &spectrum.frequencies[range.clone()];
    let s = &spectrum.psd[range];
    let n = s.len();
    if n < 6 {
        return Err(Error::invalid("band", format!("only {n} bins in {low}..{high} Hz")));
    }
    let df = spectrum.df();
    let (imax, &smax) = s
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty band");
    let mut sorted = s.to_vec();
    sorted.sort_by(f64::total_cmp);
    let floor0 = sorted[n / 4];
    let area0 = s.iter().map(|v| (v - floor0).max(0.0)).sum::<f64>() * df;
    let fwhm0 = (2.0 * area0 / (PI * (smax - floor0).max(f64::MIN_POSITIVE))).max(df);

    // p = [center, ln fwhm, ln area, floor]
    let mut p = [f[imax], fwhm0.ln(), area0.max(f64::MIN_POSITIVE).ln(), floor0];
    let eval = |p: &[f64; 4], x: f64| {
        let w = p[1].exp();
        let z = 2.0 * (x - p[0]) / w;
        p[3] + 2.0 * p[2].exp() / (PI * w) / (1.0 + z * z)
    };
    let cost = |p: &[f64; 4], w: &[f64]| {
        (0..n).map(|i| w[i] * (s[i] - eval(p, f[i])).powi(2)).sum::<f64>()
    };
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..500 {
        let w: Vec<f64> = f.iter().map(|&x| eval(&p, x).powi(-2)).collect();
        let base = cost(&p, &w);
        let steps = [df * 1e-3, 1e-6, 1e-6, floor0.abs().max(1e-300) * 1e-6];
        let mut jt = vec![[0.0; 4]; n];
        for (j, &h) in steps.iter().enumerate() {
            let mut q = p;
            q[j] += h;
            for i in 0..n {
                jt[i][j] = (eval(&q, f[i]) - eval(&p, f[i])) / h;
            }
        }
        let mut a = [[0.0; 4]; 4];
        let mut b = [0.0; 4];
        for i in 0..n {
            let r = s[i] - eval(&p, f[i]);
            for j in 0..4 {
                b[j] += w[i] * jt[i][j] * r;
                for k in 0..4 {
                    a[j][k] += w[i] * jt[i][j] * jt[i][k];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut m = a;
            for (j, row) in m.iter_mut().enumerate() {
                row[j] *= 1.0 + lambda;
            }
            let Some(delta) = solve4(m, b) else {
                lambda *= 10.0;
                continue;
            };
            let mut q = p;
            for j in 0..4 {
                q[j] += delta[j];
            }
            if q.iter().all(|v| v.is_finite()) && cost(&q, &w) <= base {
                converged = delta[0].abs() < 1e-9 * q[1].exp()
                    && delta[1].abs() < 1e-9
                    && delta[2].abs() < 1e-9
                    && delta[3].abs() <= 1e-9 * q[3].abs() + 1e-300;
                p = q;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || converged {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitNotConverged {
            iterations: 500,
            last_gain: p[1].exp(),
        });
    }
    let fit = LorentzianFit {
        center: p[0],
        fwhm: p[1].exp(),
        area: p[2].exp(),
        floor: p[3],
        residual: 0.0,
    };
    let chi2: f64 = (0..n)
        .map(|i| {
            let m = fit.evaluate(f[i]);
            ((s[i] - m) / m).powi(2)
        })
        .sum();
    Ok(LorentzianFit {
        residual: chi2 * spectrum.averages.max(1) as f64 / (n - 4) as f64,
        ..fit
    })
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let k = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (dst, src) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= k * src;
            }
            b[row] -= k * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let tail: f64 = (row + 1..4).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    /// ⟨x²⟩/(2·x_zp²) − 1/2, clipped at zero.
    pub value: f64,
    /// The raw estimate was below zero.
    pub zero_point: bool,
    /// ⟨x²⟩, m².
    pub mean_square: f64,
}

impl Occupancy {
    /// From a mean square displacement in m².
    pub fn from_mean_square(mean_square: f64, osc: &Oscillator) -> Self {
        let n = mean_square / (2.0 * osc.zero_point_motion().powi(2)) - 0.5;
        Occupancy {
            value: n.max(0.0),
            zero_point: n < 0.0,
            mean_square,
        }
    }
}

/// Phonon number from the mean square of a displacement record in raw units.
pub fn occupancy_from_variance(x: &[f64], osc: &Oscillator, meters_per_unit: f64) -> Occupancy {
    let raw = if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    };
    Occupancy::from_mean_square(raw * meters_per_unit * meters_per_unit, osc)
}
