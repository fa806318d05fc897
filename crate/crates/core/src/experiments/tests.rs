use super::*;
use crate::config::{FilterSection, RunConfig};
use crate::model::{reference, DeviceGeometry};

/// Q = 1000 toy oscillator at 1 kHz with n_imp ≈ n_th/2000 (g* ≈ 45).
fn toy(duration: &str, segment: usize, gain: f64) -> RunConfig {
    let text = format!(
        r#"{{
  "oscillator": {{"frequency": "1 kHz", "q": 1000, "mass": "1 ng", "temperature": "300 K"}},
  "measurement": {{"power": "1 mW", "wavelength": "850 nm", "reflectance": 0.3,
                   "efficiency": 0.1, "extraneous_imprecision": "182 pm/rtHz"}},
  "feedback_filter": {{"gain": {gain}, "phase": "90 deg", "band_low": "500 Hz", "band_high": "2 kHz"}},
  "simulation": {{"duration": "{duration}", "seed": 11}},
  "analysis": {{"segment_length": {segment}, "fit_band": ["950 Hz", "1.05 kHz"]}}
}}"#
    );
    RunConfig::parse(&text).unwrap()
}

fn spec(cfg: RunConfig, variable: SweepVariable, values: &[f64], replicas: usize) -> SweepSpec {
    SweepSpec {
        base: cfg,
        variable,
        values: values.to_vec(),
        replicas,
        parallelism: None,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

#[test]
fn design_report_reproduces_device_budget() {
    let osc = reference::oscillator();
    let r = design_report(&osc, &reference::geometry(), &reference::measurement(100e-6));
    let ratio = r.get("gamma_th_over_omega0").unwrap();
    assert!((4.0..7.0).contains(&ratio), "{ratio}");
    assert!(rel(r.get("x_zp").unwrap(), 4.19e-15) < 0.01);
    assert!(rel(r.get("sqrt_s_xx_zp").unwrap(), 85.3e-15) < 0.01);
    assert!(rel(r.get("sqrt_s_ff_th").unwrap(), 43.8e-18) < 0.01);
    assert!(rel(r.get("sqrt_s_xx_imp_gs").unwrap(), 0.68e-17) < 0.03);
    assert!(rel(r.get("n_th").unwrap(), 1.567e8) < 0.01);
    assert!(rel(r.get("heating").unwrap(), 3.75e3) < 0.01);
    assert!(!r.decoherence.satisfied);
    assert!(!r.imprecision.satisfied);
    assert!(r.lines().iter().any(|(k, v)| k == "verdict_decoherence" && v.starts_with("violated")));
}

#[test]
fn cold_variant_scales_decoherence_linearly() {
    let osc = reference::oscillator();
    let geom = reference::geometry();
    let meas = reference::measurement(100e-6);
    let warm = design_report(&osc, &geom, &meas);
    let cold = design_report(&osc.with_temperature(4.0), &geom, &meas);
    for key in ["gamma_th", "gamma_th_over_omega0", "n_th"] {
        let r = warm.get(key).unwrap() / cold.get(key).unwrap();
        assert!(rel(r, 75.0) < 1e-12, "{key}: {r}");
    }
    let gs = warm.get("sqrt_s_xx_imp_gs").unwrap() / cold.get("sqrt_s_xx_imp_gs").unwrap();
    assert!(rel(gs * gs, 1.0 / 75.0) < 1e-12);
    assert_eq!(warm.get("x_zp"), cold.get("x_zp"));
    assert!(rel(cold.decoherence.ratio, warm.decoherence.ratio / 75.0) < 1e-12);
    assert!(cold.decoherence.satisfied);
}

#[test]
fn zero_absorption_gives_no_heating() {
    let geom = DeviceGeometry { absorption: 0.0, ..reference::geometry() };
    let r = design_report(&reference::oscillator(), &geom, &reference::measurement(1e-4));
    assert_eq!(r.get("heating"), Some(0.0));
}

#[test]
fn seeds_are_split_per_run() {
    let s = spec(toy("1 s", 4096, 1.0), SweepVariable::Gain, &[1.0, 2.0], 3);
    assert_eq!(s.seed(0, 0), 11);
    let mut all: Vec<u64> = (0..2).flat_map(|i| (0..3).map(move |r| (i, r))).map(|(i, r)| s.seed(i, r)).collect();
    all.sort_unstable();
    all.dedup();
    assert_eq!(all.len(), 6);
}

#[test]
fn sweep_values_must_be_monotone() {
    let s = spec(toy("1 s", 4096, 1.0), SweepVariable::Gain, &[1.0, 3.0, 2.0], 1);
    assert!(matches!(run_sweep(&s), Err(Error::Config(_))));
    let s = spec(toy("1 s", 4096, 1.0), SweepVariable::Gain, &[], 1);
    assert!(s.validate().is_err());
    let s = spec(toy("1 s", 4096, 1.0), SweepVariable::Gain, &[3.0, 2.0], 0);
    assert!(s.validate().is_err());
}

#[test]
fn config_at_sets_the_swept_variable() {
    let s = spec(toy("1 s", 4096, 1.0), SweepVariable::Gain, &[0.0, 5.0], 1);
    let off = s.config_at(0.0);
    let f: &FilterSection = off.feedback_filter.as_ref().unwrap();
    assert!(!f.enabled);
    assert_eq!(s.config_at(5.0).feedback_filter.unwrap().gain.get(), 5.0);
    let p = spec(toy("1 s", 4096, 0.0), SweepVariable::Power, &[1e-5], 1);
    assert_eq!(p.config_at(1e-5).measurement().unwrap().power, 1e-5);
    let t = spec(toy("1 s", 4096, 0.0), SweepVariable::Temperature, &[4.0], 1);
    assert_eq!(t.config_at(4.0).oscillator().unwrap().bath_temperature, 4.0);
}

#[test]
fn single_point_sweep_matches_run_point() {
    let cfg = toy("4 s", 16384, 5.0);
    let s = spec(cfg.clone(), SweepVariable::Gain, &[5.0], 1);
    let res = gain_sweep(&s).unwrap();
    let direct = run_point(&s.config_at(5.0), 11, false).unwrap();
    assert_eq!(res.records[0].outcome.as_ref().unwrap(), &direct.metrics);
}

#[test]
fn sweep_output_is_independent_of_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(toy("2 s", 8192, 2.0), SweepVariable::Gain, &[2.0, 8.0], 2);
    let mut outputs = Vec::new();
    for (k, threads) in [Some(1), Some(3), None].into_iter().enumerate() {
        s.parallelism = threads;
        let out = dir.path().join(k.to_string());
        gain_sweep(&s).unwrap().write_dir(&out).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        for name in ["manifest.json", "summary.csv", "spectra/point_001_r01.csv"] {
            files.push((name.into(), std::fs::read(out.join(name)).unwrap()));
        }
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let summary = String::from_utf8(outputs[0][1].1.clone()).unwrap();
    assert!(summary.contains(&format!("# config_hash: {}", s.base.hash())));
    assert_eq!(summary.lines().filter(|l| !l.starts_with('#')).count(), 5);
}

#[test]
fn failed_points_are_recorded() {
    let s = spec(toy("1 s", 4096, 1.0), SweepVariable::Gain, &[1.0, 1e7], 1);
    let res = gain_sweep(&s).unwrap();
    assert_eq!(res.records.len(), 2);
    assert!(res.records[0].outcome.is_ok());
    let err = res.records[1].outcome.as_ref().unwrap_err();
    assert!(err.contains("diverged"), "{err}");
    assert_eq!(res.failures(), 1);

    let dir = tempfile::tempdir().unwrap();
    res.write_dir(dir.path()).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["points"][1]["status"], "failed");
    assert_eq!(manifest["config_hash"], s.base.hash());
}

#[test]
fn power_sweep_without_extraneous_floor_scales_inversely() {
    let mut cfg = toy("2 s", 4096, 0.0);
    cfg.feedback_filter = None;
    cfg.measurement.as_mut().unwrap().extraneous_imprecision = Quantity::new(0.0);
    // At toy scale the thermal tail would dominate the floor band.
    cfg.simulation.as_mut().unwrap().noise.thermal = false;
    let powers = [1e-6, 1e-5, 1e-4, 1e-3];
    let res = power_sweep(&spec(cfg, SweepVariable::Power, &powers, 1)).unwrap();
    let floors = res.floors();
    for (p, f) in powers.iter().zip(&floors) {
        let m = res.point(powers.iter().position(|q| q == p).unwrap())[0];
        let f = f.unwrap();
        assert!(rel(f, m.analytic_imprecision) < 0.03, "{p}: {f} vs {}", m.analytic_imprecision);
        assert!(rel(f * p, floors[0].unwrap() * powers[0]) < 0.05);
    }
    assert_eq!(res.summary.analytic_crossover, None);
}

#[test]
fn power_sweep_rejects_closed_loop() {
    let s = spec(toy("1 s", 4096, 3.0), SweepVariable::Power, &[1e-4], 1);
    assert!(matches!(power_sweep(&s), Err(Error::Config(_))));
}

#[test]
fn open_loop_point_reaches_equipartition_and_calibrates() {
    let mut cfg = toy("60 s", 65536, 0.0);
    cfg.feedback_filter = None;
    let sim = cfg.simulation.as_mut().unwrap();
    sim.calibration_tone = Some(crate::config::ToneSection {
        frequency: Quantity::new(1350.0),
        amplitude: Quantity::new(1e-9),
    });
    let out = run_point(&cfg, 5, false).unwrap();
    let m = out.metrics;
    assert_eq!(m.gain, 0.0);
    assert!(rel(m.n_simulated, m.n_th) < 0.1, "{} vs {}", m.n_simulated, m.n_th);
    assert!(rel(m.n_analytic, m.n_th) < 1e-9);
    let cal = out.calibration.unwrap();
    assert!(rel(cal.meters_per_unit, 1.0) < 0.05, "{}", cal.meters_per_unit);
    assert!(out.fit.is_none());
    assert!(!m.squashed);
}

#[test]
fn cooling_curve_agrees_three_ways() {
    let gains = [0.0, 1.0, 10.0, 30.0];
    let s = spec(toy("120 s", 131072, 1.0), SweepVariable::Gain, &gains, 1);
    let res = gain_sweep(&s).unwrap();
    assert_eq!(res.failures(), 0);
    for (g, [fit, sim, analytic]) in gains.iter().zip(res.occupancies()) {
        let (sim, analytic) = (sim.unwrap(), analytic.unwrap());
        assert!(rel(sim, analytic) < 0.15, "g={g}: sim {sim} vs analytic {analytic}");
        if *g > 0.0 {
            assert!(res.point(gains.iter().position(|x| x == g).unwrap())[0].fit_valid.unwrap());
            let fit = fit.unwrap();
            assert!(rel(fit, sim) < 0.15, "g={g}: fit {fit} vs sim {sim}");
        } else {
            assert!(fit.is_none());
        }
    }
    let (g_min, _) = res.summary.min_fitted.unwrap();
    assert_eq!(g_min, 30.0);
    assert_eq!(res.summary.degradation_onset, None);
}

#[test]
fn effective_averages_account_for_overlap() {
    let rect = WelchConfig {
        segment_length: 1024,
        window: crate::spectral::Window::Rectangular,
        overlap: 0.0,
    };
    assert_eq!(effective_averages(&rect, 10), 10.0);
    let hann = WelchConfig::new(1024);
    let k = effective_averages(&hann, 100);
    assert!((k - 100.0 / 1.0556).abs() < 0.5, "{k}");
}
