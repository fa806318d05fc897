//! Exact one-step transition of a damped harmonic oscillator driven by white
//! acceleration noise (a two-dimensional Ornstein–Uhlenbeck process).

use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub(crate) struct Propagator {
    /// State transition matrix over one step, row-major.
    phi: [[f64; 2]; 2],
    /// Cholesky factor (l11, l21, l22) of the one-step noise covariance per
    /// unit white-noise intensity.
    chol: [f64; 3],
}

fn transition(omega0: f64, gamma: f64, t: f64) -> [[f64; 2]; 2] {
    let wd = (omega0 * omega0 - 0.25 * gamma * gamma).sqrt();
    let decay = (-0.5 * gamma * t).exp();
    let (s, c) = (wd * t).sin_cos();
    let k = 0.5 * gamma / wd;
    [
        [decay * (c + k * s), decay * s / wd],
        [-decay * omega0 * omega0 * s / wd, decay * (c - k * s)],
    ]
}

impl Propagator {
    /// Requires an underdamped mode (Q > 1/2).
    pub fn new(omega0: f64, gamma: f64, dt: f64) -> Self {
        let phi = transition(omega0, gamma, dt);
        // Q = ∫₀^dt b(s)·b(s)ᵀ ds with b(s) the velocity column of Φ(s);
        // composite Simpson is far below f64 resolution for ω·dt ≲ 1.
        const PANELS: usize = 512;
        let h = dt / PANELS as f64;
        let mut q = [0.0f64; 3];
        for i in 0..=PANELS {
            let w = if i == 0 || i == PANELS {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let m = transition(omega0, gamma, i as f64 * h);
            let (bx, bv) = (m[0][1], m[1][1]);
            q[0] += w * bx * bx;
            q[1] += w * bx * bv;
            q[2] += w * bv * bv;
        }
        for v in &mut q {
            *v *= h / 3.0;
        }
        let l11 = q[0].sqrt();
        let l21 = q[1] / l11;
        let l22 = (q[2] - l21 * l21).max(0.0).sqrt();
        Propagator {
            phi,
            chol: [l11, l21, l22],
        }
    }

    #[inline]
    pub fn advance(&self, x: f64, v: f64) -> (f64, f64) {
        let p = &self.phi;
        (p[0][0] * x + p[0][1] * v, p[1][0] * x + p[1][1] * v)
    }

    /// Correlated (x, v) increment for white acceleration noise of two-sided
    /// intensity `sigma²` (⟨a(t)a(t')⟩ = σ²·δ(t−t')).
    #[inline]
    pub fn noise<R: Rng>(&self, rng: &mut R, sigma: f64) -> (f64, f64) {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let [l11, l21, l22] = self.chol;
        (sigma * l11 * z1, sigma * (l21 * z1 + l22 * z2))
    }

    #[cfg(test)]
    pub fn covariance(&self) -> [f64; 3] {
        let [l11, l21, l22] = self.chol;
        [l11 * l11, l11 * l21, l21 * l21 + l22 * l22]
    }

    #[cfg(test)]
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        self.phi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // The stationary covariance Σ = diag(D/(2ΓΩ²), D/(2Γ)) must satisfy the
    // discrete Lyapunov equation Σ = ΦΣΦᵀ + Q.
    #[test]
    fn stationary_covariance_is_preserved() {
        for (omega, gamma, dt) in [(6283.0, 62.8, 1.0 / 32e3), (2.5e5, 1e-2, 1.0 / 1.28e6), (10.0, 3.0, 0.05)] {
            let p = Propagator::new(omega, gamma, dt);
            let phi = p.matrix();
            let q = p.covariance();
            let sxx = 1.0 / (2.0 * gamma * omega * omega);
            let svv = 1.0 / (2.0 * gamma);
            let pxx = phi[0][0] * phi[0][0] * sxx + phi[0][1] * phi[0][1] * svv + q[0];
            let pxv = phi[0][0] * phi[1][0] * sxx + phi[0][1] * phi[1][1] * svv + q[1];
            let pvv = phi[1][0] * phi[1][0] * sxx + phi[1][1] * phi[1][1] * svv + q[2];
            assert!(((pxx - sxx) / sxx).abs() < 1e-9, "{pxx} {sxx}");
            assert!((pxv / (sxx * svv).sqrt()).abs() < 1e-9);
            assert!(((pvv - svv) / svv).abs() < 1e-9);
        }
    }

    #[test]
    fn free_ringdown_matches_closed_form() {
        let (omega, gamma) = (100.0, 0.5);
        let p = Propagator::new(omega, gamma, 1e-3);
        let (mut x, mut v) = (1.0, 0.0);
        for _ in 0..1000 {
            (x, v) = p.advance(x, v);
        }
        let expect = transition(omega, gamma, 1.0);
        assert!((x - expect[0][0]).abs() < 1e-12);
        assert!((v - expect[1][0]).abs() < 1e-9);
    }
}
