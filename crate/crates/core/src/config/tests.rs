use super::*;
use proptest::prelude::*;

fn bundled(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    std::fs::read_to_string(path).unwrap()
}

const MINIMAL: &str = r#"{
  "oscillator": {
    "frequency": "39.9 kHz",
    "q": 2.6e7,
    "mass": "12 ng",
    "temperature": "300 K"
  }
}"#;

#[test]
fn bundled_configs_parse() {
    for name in ["trampoline.json", "toy_open_loop.json", "closed_loop_demo.json", "fig3.json", "fig4.json"] {
        RunConfig::parse(&bundled(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn trampoline_values_are_in_si() {
    let cfg = RunConfig::parse(&bundled("trampoline.json")).unwrap();
    let osc = cfg.oscillator().unwrap();
    assert!((osc.freq_hz() - 39.9e3).abs() < 1e-9);
    assert!((osc.mass - 12e-12).abs() < 1e-24);
    let meas = cfg.measurement().unwrap();
    assert!((meas.extraneous_imprecision - 1e-28).abs() < 1e-40);
    assert!((meas.power - 100e-6).abs() < 1e-18);
    let geom = cfg.geometry().unwrap();
    assert!((geom.absorption - 10e-6).abs() < 1e-18);
    assert!((geom.thermal_conductivity - 3.0).abs() < 1e-12);
}

#[test]
fn mass_units_are_interchangeable() {
    let a = RunConfig::parse(MINIMAL).unwrap();
    let b = RunConfig::parse(&MINIMAL.replace("\"12 ng\"", "\"1.2e-11 kg\"")).unwrap();
    assert_eq!(a.oscillator().unwrap(), b.oscillator().unwrap());
    assert_eq!(a.hash(), b.hash());
}

#[test]
fn missing_mass_names_the_field() {
    let text = MINIMAL.replace("    \"mass\": \"12 ng\",\n", "");
    let err = RunConfig::parse(&text).unwrap_err().to_string();
    assert!(err.contains("mass") && err.contains("line"), "{err}");
}

#[test]
fn invalid_value_reports_field_and_line() {
    let text = MINIMAL.replace("\"12 ng\"", "\"-12 ng\"");
    let err = RunConfig::parse(&text).unwrap_err().to_string();
    assert!(err.contains("oscillator.mass (line 5)"), "{err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let text = MINIMAL.replace("\"q\": 2.6e7", "\"q\": 2.6e7, \"colour\": \"red\"");
    let err = RunConfig::parse(&text).unwrap_err().to_string();
    assert!(err.contains("colour") && err.contains("line 4"), "{err}");
}

#[test]
fn bare_numbers_need_units() {
    let text = MINIMAL.replace("\"300 K\"", "300");
    let err = RunConfig::parse(&text).unwrap_err().to_string();
    assert!(err.contains("needs a unit"), "{err}");
}

#[test]
fn sweep_values_follow_variable_units() {
    let cfg = RunConfig::parse(&bundled("fig3.json")).unwrap();
    let sweep = cfg.sweep.as_ref().unwrap();
    assert_eq!(sweep.variable, SweepVariable::Power);
    assert!((sweep.values[0] - 1e-6).abs() < 1e-18);
    assert_eq!(sweep.replicas, 1);
    let text = bundled("fig3.json").replace("\"1 uW\"", "1");
    assert!(RunConfig::parse(&text).is_err());
    let text = bundled("fig3.json").replace("\"2 uW\"", "\"0.5 uW\"");
    let err = RunConfig::parse(&text).unwrap_err().to_string();
    assert!(err.contains("monotone"), "{err}");
}

#[test]
fn filter_above_nyquist_is_rejected() {
    let text = bundled("closed_loop_demo.json").replace("\"50 kHz\"", "\"700 kHz\"");
    let err = RunConfig::parse(&text).unwrap_err().to_string();
    assert!(err.contains("feedback_filter.band_high"), "{err}");
}

#[test]
fn canonical_form_round_trips_and_hash_tracks_edits() {
    for name in ["trampoline.json", "fig3.json", "fig4.json", "toy_open_loop.json"] {
        let cfg = RunConfig::parse(&bundled(name)).unwrap();
        let again = RunConfig::parse(&cfg.canonical_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.canonical_json(), again.canonical_json());
        assert_eq!(cfg.hash().len(), 16);
    }
    let a = RunConfig::parse(&bundled("toy_open_loop.json")).unwrap();
    let b = a.clone().with_seed(2);
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn tuned_filter_realises_requested_phase() {
    let cfg = RunConfig::parse(&bundled("fig4.json")).unwrap();
    let osc = cfg.oscillator().unwrap();
    let filter = cfg.feedback_filter(&osc).unwrap();
    let fs = cfg.sample_rate(&osc);
    let lp = filter.loop_parameters(&osc, fs).unwrap();
    assert!((lp.phase - 1.4207963).abs() < 1e-6);
    let model = cfg.fit_model(&osc, lp.phase).unwrap();
    assert_eq!(model.n_th, 1.56e8);
    assert_eq!(model.n_imp, 0.013);
    assert!((model.gamma0 - std::f64::consts::TAU * 1.5e-3).abs() < 1e-12);
    let device = LoopModel::from_device(&osc, &cfg.measurement().unwrap(), lp.phase, None).unwrap();
    assert!((device.n_imp / 0.013 - 1.0).abs() < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_quantities_round_trip(
        f in 1.0f64..1e7,
        q in 1.0f64..1e9,
        m in 1e-18f64..1e-3,
        t in 0.0f64..1e3,
        p in 1e-9f64..1.0,
        s in 1e-34f64..1e-20,
    ) {
        let text = format!(r#"{{
            "oscillator": {{"frequency": "{f} Hz", "q": {q}, "mass": "{m} kg", "temperature": "{t} K"}},
            "measurement": {{"power": "{p} W", "wavelength": "850 nm", "reflectance": 0.3,
                             "efficiency": 0.1, "extraneous_imprecision": "{s} m^2/Hz"}}
        }}"#);
        let cfg = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(cfg.oscillator.mass.get(), m);
        prop_assert_eq!(cfg.oscillator.frequency.get(), f);
        let again = RunConfig::parse(&cfg.canonical_json()).unwrap();
        prop_assert_eq!(&cfg, &again);
        prop_assert_eq!(cfg.hash(), again.hash());
    }
}
