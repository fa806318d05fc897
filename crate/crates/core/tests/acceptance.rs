//! Acceptance checks. Run with `cargo test --release --test acceptance`; each
//! criterion prints one PASS or FAIL line and the binary exits nonzero if any
//! fails.

use std::f64::consts::TAU;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use coldamp::config::{RunConfig, SweepVariable};
use coldamp::experiments::{power_sweep, run_point, run_sweep, SweepSpec};
use coldamp::io::{write_spectrum, Metadata};
use coldamp::model::{
    absorption_heating, cooling_bound, mean_phonon, optimal_gain, reference, LoopModel,
    Oscillator,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

fn load(name: &str) -> RunConfig {
    RunConfig::load(configs().join(name)).expect("bundled config")
}

/// `|value/target - 1| <= tol`, reported as a short fragment.
fn within(name: &str, value: f64, target: f64, tol: f64, failures: &mut Vec<String>) -> String {
    let dev = value / target - 1.0;
    let s = format!("{name} {value:.4e} vs {target:.4e} ({:+.2}%, tol {:.0}%)", 100.0 * dev, 100.0 * tol);
    if dev.abs() > tol {
        failures.push(s.clone());
    }
    s
}

fn verdict(parts: Vec<String>, failures: Vec<String>) -> Outcome {
    if failures.is_empty() {
        Ok(parts.join("; "))
    } else {
        Err(failures.join("; "))
    }
}

fn device_budget() -> Outcome {
    let osc = Oscillator::from_hz(39.9e3, 2.6e7, 12e-12, 300.0).map_err(|e| e.to_string())?;
    let b = osc.noise_budget();
    let mut f = Vec::new();
    let parts = vec![
        within("x_zp", b.x_zp, 4e-15, 0.10, &mut f),
        within("sqrt S_zp", b.s_xx_zp.sqrt(), 86e-15, 0.03, &mut f),
        within("sqrt S_FF", b.s_ff_th.sqrt(), 43e-18, 0.03, &mut f),
        within("sqrt S_imp,gs", b.s_xx_imp_gs.sqrt(), 0.68e-17, 0.03, &mut f),
        within("n_th", b.n_th, 1.58e8, 0.03, &mut f),
    ];
    verdict(parts, f)
}

fn occupancy_formula() -> Outcome {
    let (n_th, n_imp) = (1.56e8, 0.013);
    let mut f = Vec::new();
    let mut parts = vec![within("<n>(g=1.4e5)", mean_phonon(n_th, n_imp, 1.4e5), 3.0e3, 0.05, &mut f)];

    // Numerical minimum of the curve against the closed-form bound.
    let (mut lo, mut hi) = (1e3f64.ln(), 1e7f64.ln());
    let n = |u: f64| mean_phonon(n_th, n_imp, u.exp());
    for _ in 0..200 {
        let (a, b) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
        if n(a) < n(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let g_min = lo.exp();
    let bound = cooling_bound(n_th, n_imp);
    parts.push(within("min <n>+1/2", n(lo) + 0.5, bound, 0.01, &mut f));
    parts.push(within("2 sqrt(n_th n_imp)", bound, 2.85e3, 0.01, &mut f));
    parts.push(within("g*", g_min, optimal_gain(n_th, n_imp), 1e-3, &mut f));
    verdict(parts, f)
}

fn heating_bound() -> Outcome {
    let geom = reference::geometry();
    let k_per_mw = absorption_heating(&geom) * 1e-3;
    let mut f = Vec::new();
    let mut parts = vec![
        format!("kappa {} W/m/K, alpha {:.0} ppm", geom.thermal_conductivity, geom.absorption * 1e6),
        within("heating K/mW", k_per_mw, 3.7, 0.05, &mut f),
    ];
    if k_per_mw >= 10.0 {
        f.push(format!("{k_per_mw} K/mW exceeds the 10 K/mW bound"));
    }
    parts.push("below 10 K/mW".into());
    verdict(parts, f)
}

/// Q = 1000 oscillator at 1 kHz; `noise` and `extra` are spliced in.
fn toy(gain: f64, duration: &str, segment: usize, noise: &str, floor: &str) -> RunConfig {
    let text = format!(
        r#"{{
  "oscillator": {{"frequency": "1 kHz", "q": 1000, "mass": "1 ng", "temperature": "300 K"}},
  "measurement": {{"power": "1 mW", "wavelength": "850 nm", "reflectance": 0.3,
                   "efficiency": 0.1, "extraneous_imprecision": "{floor}"}},
  "feedback_filter": {{"gain": {gain}, "phase": "90 deg", "band_low": "500 Hz", "band_high": "2 kHz"}},
  "simulation": {{"duration": "{duration}", "seed": 41, "noise": {noise}}},
  "analysis": {{"segment_length": {segment}, "fit_band": ["950 Hz", "1.05 kHz"]}}
}}"#
    );
    RunConfig::parse(&text).expect("toy config")
}

fn toy_oracles() -> Outcome {
    let mut f = Vec::new();
    let mut parts = Vec::new();

    // Open loop, thermal noise only, 2400 s (≈ 15000 energy decay times).
    let cfg = toy(0.0, "2400 s", 1 << 18, r#"{"thermal": true, "imprecision": false}"#, "1 pm/rtHz");
    let osc = cfg.oscillator().map_err(|e| e.to_string())?;
    let out = run_point(&cfg, 41, false).map_err(|e| e.to_string())?;
    parts.push(within("equipartition <n>", out.metrics.n_simulated, osc.thermal_occupation(), 0.05, &mut f));

    let model = LoopModel::from_device(&osc, &cfg.measurement().unwrap(), TAU / 4.0, None)
        .map_err(|e| e.to_string())?;
    let s = &out.spectrum;
    let f0 = osc.freq_hz();
    let fwhm = f0 / osc.q0;
    let mut worst: f64 = 0.0;
    for k in -10..10 {
        let lo = f0 + k as f64 * fwhm;
        let r = s.band_indices(lo, lo + fwhm).map_err(|e| e.to_string())?;
        let measured: f64 = s.psd[r.clone()].iter().sum();
        let expected: f64 = r.map(|i| model.spectrum_x(TAU * s.frequencies[i], 0.0)).sum();
        worst = worst.max((measured / expected - 1.0).abs());
    }
    parts.push(format!("PSD vs Lorentzian over +-10 linewidths: worst 1-linewidth slice {:.2}% (tol 10%)", 100.0 * worst));
    if worst > 0.10 {
        f.push(format!("PSD deviates {:.1}% from the Lorentzian", 100.0 * worst));
    }

    // Closed loop, n_imp ≈ n_th/2000, gains spanning two decades.
    for gain in [0.3, 3.0, 30.0] {
        let cfg = toy(gain, "400 s", 1 << 16, r#"{"thermal": true, "imprecision": true}"#, "182 pm/rtHz");
        let m = run_point(&cfg, 41 + gain as u64, false).map_err(|e| e.to_string())?.metrics;
        parts.push(within(&format!("<n>(g={gain})"), m.n_simulated, m.n_analytic, 0.10, &mut f));
    }
    verdict(parts, f)
}

fn device_scale_fit() -> Outcome {
    let mut cfg = load("closed_loop_demo.json");
    cfg.simulation.as_mut().unwrap().duration = coldamp::units::Quantity::new(60.0);
    let osc = cfg.oscillator().map_err(|e| e.to_string())?;
    let g = cfg.feedback_filter.as_ref().unwrap().gain.get();
    let loaded = (1.0 + g) * osc.damping_rate() / TAU;
    let out = run_point(&cfg, 5, false).map_err(|e| e.to_string())?;
    let fit = out.fit.ok_or_else(|| format!("no fit: {:?}", out.fit_error))?;
    let mut f = Vec::new();
    let mut parts = vec![format!("g {g}, (1+g)Gamma0/2pi {loaded:.2} Hz, 60 s")];
    if !(1.0..=10.0).contains(&loaded) {
        f.push(format!("loaded linewidth {loaded} Hz outside 1-10 Hz"));
    }
    parts.push(within("fitted g", fit.gain, g, 0.10, &mut f));
    parts.push(within("fitted <n>", fit.occupancy, out.metrics.n_analytic, 0.15, &mut f));
    parts.push(format!("simulated <n> {:.4e}", out.metrics.n_simulated));
    verdict(parts, f)
}

fn squashing() -> Outcome {
    let mut cfg = load("fig4.json");
    let sim = cfg.simulation.as_mut().unwrap();
    sim.duration = coldamp::units::Quantity::new(10.0);
    cfg.analysis.as_mut().unwrap().segment_length = 1 << 16;
    let meas = cfg.measurement().map_err(|e| e.to_string())?;
    let osc = cfg.oscillator().map_err(|e| e.to_string())?;
    let n_imp = coldamp::model::imprecision_quanta(meas.total_imprecision().unwrap(), &osc);
    let g_star = optimal_gain(osc.thermal_occupation(), n_imp);
    let gains = [g_star / 3.0, g_star, 3e5];
    let spec = SweepSpec {
        base: cfg,
        variable: SweepVariable::Gain,
        values: gains.to_vec(),
        replicas: 1,
        parallelism: None,
    };
    let res = run_sweep(&spec).map_err(|e| e.to_string())?;
    let m: Vec<_> = (0..3)
        .map(|i| res.point(i).first().copied().copied().ok_or(format!("point {i} failed")))
        .collect::<Result<_, _>>()?;
    let mut f = Vec::new();
    let high = &m[2];
    let depth = (high.analytic_imprecision - high.resonance_psd) / high.resonance_sigma;
    let parts = vec![
        format!("g* {g_star:.3e}"),
        format!(
            "S_yy(f0) at g=3e5 is {:.3e} vs floor {:.3e}, {depth:.1} sigma below",
            high.resonance_psd, high.analytic_imprecision
        ),
        format!(
            "simulated <n>: {:.4e} (g*/3), {:.4e} (g*), {:.4e} (3e5), bound {:.4e}",
            m[0].n_simulated,
            m[1].n_simulated,
            high.n_simulated,
            cooling_bound(osc.thermal_occupation(), n_imp) - 0.5
        ),
        format!(
            "fit valid: {:?} / {:?} / {:?}",
            m[0].fit_valid, m[1].fit_valid, high.fit_valid
        ),
    ];
    if !high.squashed || depth < 3.0 {
        f.push(format!("no squashing at g=3e5 ({depth:.1} sigma)"));
    }
    if m[0].squashed {
        f.push("squashing reported below g*".into());
    }
    if high.n_simulated <= m[1].n_simulated.max(cooling_bound(osc.thermal_occupation(), n_imp) - 0.5) {
        f.push("simulated <n> does not rise beyond g*".into());
    }
    if m[0].fit_valid != Some(true) || high.fit_valid == Some(true) {
        f.push("fit validity does not break down beyond g*".into());
    }
    verdict(parts, f)
}

fn power_structure() -> Outcome {
    let cfg = load("fig3.json");
    let meas = cfg.measurement().map_err(|e| e.to_string())?;
    let spec = SweepSpec::from_config(&cfg).map_err(|e| e.to_string())?;
    let res = power_sweep(&spec).map_err(|e| e.to_string())?;
    let floors: Vec<f64> = res.floors().into_iter().map(|x| x.unwrap_or(f64::NAN)).collect();
    let ext = meas.extraneous_imprecision;
    let p = &res.values;
    let mut f = Vec::new();
    let mut parts = Vec::new();

    // Shot regime: (floor - extraneous)·P is constant well below the crossover.
    let shot: Vec<(f64, f64)> = p.iter().zip(&floors).filter(|(q, _)| **q <= 5e-6).map(|(q, s)| (*q, (s - ext) * q)).collect();
    let ref_shot = meas.with_power(1.0).shot_noise_imprecision().unwrap();
    for (q, v) in &shot {
        parts.push(within(&format!("shot part x P at {:.0e} W", q), *v, ref_shot, 0.10, &mut f));
    }
    let first_up = floors.windows(2).position(|w| w[1] > w[0] * 1.03);
    if let Some(i) = first_up {
        f.push(format!("floor rises between {:e} and {:e} W", p[i], p[i + 1]));
    }
    // Saturation: within 3% of the extraneous floor at and above 1 mW.
    for (q, s) in p.iter().zip(&floors).filter(|(q, _)| **q >= 1e-3) {
        parts.push(within(&format!("floor at {q:.0e} W"), *s, ext, 0.03, &mut f));
    }
    let analytic = res.summary.analytic_crossover.ok_or("no analytic crossover")?;
    let shot_there = meas.with_power(analytic).shot_noise_imprecision().unwrap();
    parts.push(within("shot at analytic crossover / extraneous", shot_there, ext, 1e-9, &mut f));
    let measured = res.summary.measured_crossover.ok_or("no measured crossover")?;
    let (lo, hi) = res.summary.crossover_bracket.ok_or("crossover outside ladder")?;
    parts.push(format!(
        "crossover analytic {:.3} uW, measured {:.3} uW, grid cell [{:.0}, {:.0}] uW",
        analytic * 1e6,
        measured * 1e6,
        lo * 1e6,
        hi * 1e6
    ));
    if !(lo <= analytic && analytic <= hi) {
        f.push("analytic crossover outside the measured grid cell".into());
    }
    verdict(parts, f)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = load("toy_open_loop.json");
    let mut blobs = Vec::new();
    for (k, threads) in [Some(1), Some(4)].into_iter().enumerate() {
        let out = run_point(&cfg, 1, true).map_err(|e| e.to_string())?;
        let d = dir.path().join(k.to_string());
        let meta = Metadata::new().with("config_hash", cfg.hash()).with("seed", 1);
        write_spectrum(&d.join("spectrum.csv"), &out.spectrum, &meta).map_err(|e| e.to_string())?;
        coldamp::io::write_timeseries(&d.join("timeseries.csv"), out.timeseries.as_ref().unwrap(), &meta)
            .map_err(|e| e.to_string())?;
        let mut fig3 = SweepSpec::from_config(&load("fig3.json")).map_err(|e| e.to_string())?;
        fig3.parallelism = threads;
        power_sweep(&fig3).and_then(|r| r.write_dir(&d.join("sweep"))).map_err(|e| e.to_string())?;
        let mut files = Vec::new();
        for name in ["spectrum.csv", "timeseries.csv", "sweep/summary.csv", "sweep/manifest.json", "sweep/spectra/point_006_r00.csv"] {
            files.push(std::fs::read(d.join(name)).map_err(|e| e.to_string())?);
        }
        blobs.push(files);
    }
    let bytes: usize = blobs[0].iter().map(Vec::len).sum();
    if blobs[0] == blobs[1] {
        Ok(format!("5 files, {bytes} bytes, identical across reruns and thread counts"))
    } else {
        Err("outputs differ between reruns".into())
    }
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("device budget", device_budget),
        ("occupancy formula", occupancy_formula),
        ("heating bound", heating_bound),
        ("toy-scale simulation vs theory", toy_oracles),
        ("device-scale closed-loop fit", device_scale_fit),
        ("squashing beyond g*", squashing),
        ("power sweep structure", power_structure),
        ("end-to-end determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>())));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name} [{secs:.1} s]: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} [{secs:.1} s]: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
