//! CODATA 2018 exact/recommended constants.

/// Physical constants used by the closed-form expressions.
///
/// Computations take the constants through [`PhysicalConstants::CODATA`]; the
/// struct exists so tests can evaluate formulas with alternate values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Reduced Planck constant, J·s.
    pub hbar: f64,
    /// Boltzmann constant, J/K.
    pub k_b: f64,
    /// Speed of light in vacuum, m/s.
    pub c: f64,
}

impl PhysicalConstants {
    pub const CODATA: PhysicalConstants = PhysicalConstants {
        hbar: 1.054_571_817e-34,
        k_b: 1.380_649e-23,
        c: 299_792_458.0,
    };
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::CODATA
    }
}

pub const HBAR: f64 = PhysicalConstants::CODATA.hbar;
pub const K_B: f64 = PhysicalConstants::CODATA.k_b;
pub const C: f64 = PhysicalConstants::CODATA.c;
