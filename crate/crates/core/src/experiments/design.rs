use serde::Serialize;

use crate::model::{
    absorption_heating, imprecision_quanta, mean_phonon, optimal_gain, q_scaling_estimate,
    DeviceGeometry, Measurement, Oscillator,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetRow {
    pub key: &'static str,
    pub value: f64,
    pub unit: &'static str,
}

/// A ground-state condition `lhs < rhs` with its margin `lhs / rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub satisfied: bool,
    pub ratio: f64,
}

impl Verdict {
    fn below(lhs: f64, rhs: f64, strict: bool) -> Self {
        let ratio = lhs / rhs;
        Verdict {
            satisfied: if strict { ratio < 1.0 } else { ratio <= 1.0 },
            ratio,
        }
    }

    fn describe(&self) -> String {
        let word = if self.satisfied { "satisfied" } else { "violated" };
        format!("{word} (ratio {:.3e})", self.ratio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignReport {
    pub rows: Vec<BudgetRow>,
    /// Γ_th < Ω₀: the bath decoheres the mode more slowly than one period.
    pub decoherence: Verdict,
    /// S_imp ≤ 4·x_zp²/Γ_th: zero-point motion is resolved within 1/Γ_th.
    pub imprecision: Verdict,
}

impl DesignReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.key == key).map(|r| r.value)
    }

    /// `key: value unit` lines for a text report.
    pub fn lines(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .rows
            .iter()
            .map(|r| {
                let v = format!("{:.4e}", r.value);
                let v = if r.unit.is_empty() { v } else { format!("{v} {}", r.unit) };
                (r.key.to_string(), v)
            })
            .collect();
        out.push(("verdict_decoherence".into(), self.decoherence.describe()));
        out.push(("verdict_imprecision".into(), self.imprecision.describe()));
        out
    }
}

/// Noise budget, heating estimate and ground-state verdicts for a device.
pub fn design_report(osc: &Oscillator, geom: &DeviceGeometry, meas: &Measurement) -> DesignReport {
    let b = osc.noise_budget();
    let s_imp = meas.total_imprecision().unwrap_or(f64::INFINITY);
    let n_imp = imprecision_quanta(s_imp, osc);
    let n_ba = meas
        .backaction_quanta(n_imp, Default::default())
        .unwrap_or(0.0);
    let g_opt = optimal_gain(b.n_th, n_imp);

    let row = |key, value, unit| BudgetRow { key, value, unit };
    let rows = vec![
        row("frequency", osc.freq_hz(), "Hz"),
        row("q", osc.q0, ""),
        row("mass", osc.mass, "kg"),
        row("temperature", osc.bath_temperature, "K"),
        row("gamma_th_over_omega0", b.gamma_th / osc.omega0, ""),
        row("gamma_th", b.gamma_th, "1/s"),
        row("x_zp", b.x_zp, "m"),
        row("sqrt_s_xx_zp", b.s_xx_zp.sqrt(), "m/rtHz"),
        row("sqrt_s_ff_th", b.s_ff_th.sqrt(), "N/rtHz"),
        row("sqrt_s_xx_imp_gs", b.s_xx_imp_gs.sqrt(), "m/rtHz"),
        row("n_th", b.n_th, ""),
        row("heating", absorption_heating(geom), "K/W"),
        row("q_estimate", q_scaling_estimate(geom), ""),
        row("power", meas.power, "W"),
        row("sqrt_s_xx_imp", s_imp.sqrt(), "m/rtHz"),
        row("n_imp", n_imp, ""),
        row("n_ba", n_ba, ""),
        row("optimal_gain", g_opt, ""),
        row("min_occupancy", mean_phonon(b.n_th, n_imp, g_opt), ""),
    ];
    DesignReport {
        rows,
        decoherence: Verdict::below(b.gamma_th, osc.omega0, true),
        imprecision: Verdict::below(s_imp, b.s_xx_imp_gs, false),
    }
}
