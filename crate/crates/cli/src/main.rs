use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coldamp::config::RunConfig;
use coldamp::experiments::{self, SweepSpec};
use coldamp::io::{self, Metadata};
use coldamp::model::{effective_temperature, Oscillator};
use coldamp::spectral::{calibrate, fit_closed_loop_with, fit_lorentzian, Spectrum};
use coldamp::Error;

#[derive(Parser)]
#[command(name = "coldamp", version, about = "Feedback cooling of a nanomechanical oscillator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Noise budget and ground-state verdicts for a device.
    Design(Common),
    /// Simulate one run and write its record, spectrum and report.
    Simulate(Common),
    /// Calibrate or fit an existing spectrum file.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Spectrum CSV as written by `simulate`.
        #[arg(long)]
        spectrum: PathBuf,
        /// Metres per raw unit, applied when the spectrum carries no tone.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Run the sweep described in the config.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads (default: one per core).
        #[arg(long)]
        parallelism: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override `simulation.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> coldamp::Result<RunConfig> {
        let cfg = RunConfig::load(&self.config)?;
        Ok(match self.seed {
            Some(seed) => cfg.with_seed(seed),
            None => cfg,
        })
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Unstable { .. } => 3,
        Error::FitNotConverged { .. }
        | Error::BandOutsideSpectrum { .. }
        | Error::ToneInsideLinewidth { .. } => 4,
        Error::Io { .. } | Error::Parse { .. } => 5,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Design(c) => design(c),
        Command::Simulate(c) => simulate(c),
        Command::Analyze { common, spectrum, scale } => analyze(common, spectrum, *scale),
        Command::Sweep { common, parallelism } => sweep(common, *parallelism),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn base_meta(cfg: &RunConfig) -> Metadata {
    let mut m = Metadata::new().with("config_hash", cfg.hash());
    if let Some(s) = &cfg.simulation {
        m.push("seed", s.seed);
    }
    m
}

fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

fn emit(path: &Path, meta: &Metadata, lines: &[(String, String)]) -> coldamp::Result<()> {
    for (k, v) in lines {
        println!("{k}: {v}");
    }
    io::write_report(path, meta, lines)
}

fn design(c: &Common) -> coldamp::Result<()> {
    let cfg = c.load()?;
    let osc = cfg.oscillator()?;
    let meas = cfg.measurement()?;
    let geom = cfg
        .geometry()
        .ok_or_else(|| Error::Config("missing section `geometry`".into()))?;
    let report = experiments::design_report(&osc, &geom, &meas);
    emit(&c.out.join("design.txt"), &base_meta(&cfg), &report.lines())
}

fn fit_lines(
    lines: &mut Vec<(String, String)>,
    fit: &coldamp::spectral::FitResult,
) {
    let mut push = |k: &str, v: String| lines.push((k.to_string(), v));
    push("fit_gain", sci(fit.gain));
    push("fit_gain_stderr", sci(fit.gain_stderr));
    push("occupancy_fit", sci(fit.occupancy));
    push("effective_temperature_fit", format!("{} K", sci(fit.effective_temperature)));
    push("fit_valid", fit.valid.to_string());
    push("fit_residual", sci(fit.residual));
    push("fit_bins", fit.bins.to_string());
}

fn lorentzian_lines(
    lines: &mut Vec<(String, String)>,
    spectrum: &Spectrum,
    cfg: &RunConfig,
    osc: &Oscillator,
) {
    let f0 = osc.freq_hz();
    let fwhm = f0 / osc.q0;
    let (lo, hi) = cfg
        .fit_options()
        .band
        .unwrap_or((f0 - 20.0 * fwhm, f0 + 20.0 * fwhm));
    if let Ok(l) = fit_lorentzian(spectrum, lo, hi) {
        lines.push(("linewidth_fit".into(), format!("{} Hz", sci(l.fwhm))));
        lines.push(("linewidth_config".into(), format!("{} Hz", sci(fwhm))));
        lines.push(("center_fit".into(), format!("{} Hz", sci(l.center))));
    }
}

fn simulate(c: &Common) -> coldamp::Result<()> {
    let cfg = c.load()?;
    let osc = cfg.oscillator()?;
    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| Error::Config("missing section `simulation`".into()))?;
    let out = experiments::run_point(&cfg, sim.seed, sim.write_timeseries)?;
    let meta = base_meta(&cfg);
    if let Some(ts) = &out.timeseries {
        io::write_timeseries(&c.out.join("timeseries.csv"), ts, &meta)?;
    }
    let spectrum = out.report_spectrum(&cfg, &osc);
    io::write_spectrum(&c.out.join("spectrum.csv"), &spectrum, &meta)?;

    let m = &out.metrics;
    let mut lines: Vec<(String, String)> = vec![
        ("gain".into(), sci(m.gain)),
        ("phase".into(), format!("{} rad", sci(m.phase))),
        ("n_th".into(), sci(m.n_th)),
        ("n_imp".into(), sci(m.n_imp)),
        ("occupancy_analytic".into(), sci(m.n_analytic)),
        ("occupancy_simulated".into(), sci(m.n_simulated)),
        (
            "effective_temperature_simulated".into(),
            format!("{} K", sci(effective_temperature(m.n_simulated, osc.omega0))),
        ),
        ("imprecision_analytic".into(), format!("{} m^2/Hz", sci(m.analytic_imprecision))),
    ];
    if let Some(f) = m.measured_floor {
        lines.push(("imprecision_measured".into(), format!("{} m^2/Hz", sci(f))));
    }
    lines.push(("resonance_psd".into(), format!("{} m^2/Hz", sci(m.resonance_psd))));
    lines.push(("squashed".into(), m.squashed.to_string()));
    if let Some(fit) = &out.fit {
        fit_lines(&mut lines, fit);
    } else {
        lorentzian_lines(&mut lines, &out.spectrum, &cfg, &osc);
    }
    if let Some(cal) = &out.calibration {
        lines.push(("meters_per_unit".into(), sci(cal.meters_per_unit)));
        lines.push(("averaging_sufficient".into(), cal.averaging_sufficient.to_string()));
    }
    if let Some(e) = &out.fit_error {
        lines.push(("fit_error".into(), e.to_string()));
    }
    emit(&c.out.join("report.txt"), &meta, &lines)?;
    out.fit_error.map_or(Ok(()), Err)
}

fn analyze(c: &Common, path: &Path, scale: f64) -> coldamp::Result<()> {
    let cfg = c.load()?;
    let osc = cfg.oscillator()?;
    let (raw, _) = io::read_spectrum(path)?;
    let filter = cfg.feedback_filter(&osc)?;
    let lp = filter.loop_parameters(&osc, cfg.sample_rate(&osc))?;
    let tone = cfg
        .simulation
        .as_ref()
        .and_then(|s| s.calibration_tone)
        .map(|t| t.frequency.get());

    let mut lines = Vec::new();
    let meters_per_unit = match tone {
        Some(f) if lp.gain == 0.0 => {
            let cal = calibrate(&raw, f, &osc)?;
            lines.push(("averaging_sufficient".into(), cal.averaging_sufficient.to_string()));
            cal.meters_per_unit
        }
        _ => scale,
    };
    lines.insert(0, ("meters_per_unit".into(), sci(meters_per_unit)));
    let spectrum = raw.scaled(meters_per_unit);
    if lp.gain > 0.0 {
        let model = cfg.fit_model(&osc, lp.phase)?;
        let fit = fit_closed_loop_with(&spectrum, &model, &cfg.fit_options())?;
        fit_lines(&mut lines, &fit);
    } else {
        lorentzian_lines(&mut lines, &spectrum, &cfg, &osc);
    }
    let meta = base_meta(&cfg).with("spectrum", path.display());
    emit(&c.out.join("analysis.txt"), &meta, &lines)
}

fn sweep(c: &Common, parallelism: Option<usize>) -> coldamp::Result<()> {
    let cfg = c.load()?;
    let mut spec = SweepSpec::from_config(&cfg)?;
    spec.parallelism = parallelism;
    let result = experiments::sweep(&spec)?;
    result.write_dir(&c.out)?;
    let s = &result.summary;
    println!("config_hash: {}", result.config_hash);
    println!("points: {}", result.records.len());
    println!("failed: {}", result.failures());
    println!("fit_failed: {}", result.fit_failures());
    let opt = |v: Option<f64>| v.map(sci).unwrap_or_else(|| "-".into());
    if let Some(p) = s.analytic_crossover {
        println!("crossover_analytic: {} W", sci(p));
        println!("crossover_measured: {} W", opt(s.measured_crossover));
    }
    if let Some((g, n)) = s.min_fitted {
        println!("min_fitted: n = {} at g = {}", sci(n), sci(g));
        println!("degradation_onset: {}", opt(s.degradation_onset));
    }
    for r in &result.records {
        if let Some(e) = r.outcome.as_ref().err().or(r.fit_error.as_ref()) {
            eprintln!("point {} replica {} {}: {e}", r.index, r.replica, r.status());
        }
    }
    Ok(())
}
