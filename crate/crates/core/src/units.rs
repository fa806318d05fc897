//! Parsing of `number + unit` strings into SI values.
//!
//! Physical quantities in run configurations must carry an explicit unit,
//! e.g. `"12 ng"`, `"39.9 kHz"`, `"10 fm/rtHz"` or `"0.9 GPa"`. Dimensionless
//! quantities may be bare numbers or use `%`, `ppm` or `ppb`.

use std::fmt;
use std::marker::PhantomData;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Mass,
    Time,
    Frequency,
    Temperature,
    Power,
    Pressure,
    Force,
    Angle,
    ThermalConductivity,
    /// Single-sided displacement spectral density, m²/Hz.
    DisplacementPsd,
    /// Single-sided force spectral density, N²/Hz.
    ForcePsd,
    Dimensionless,
}

impl Dimension {
    /// Unit written by canonical serialisation.
    pub fn si_unit(self) -> &'static str {
        match self {
            Dimension::Length => "m",
            Dimension::Mass => "kg",
            Dimension::Time => "s",
            Dimension::Frequency => "Hz",
            Dimension::Temperature => "K",
            Dimension::Power => "W",
            Dimension::Pressure => "Pa",
            Dimension::Force => "N",
            Dimension::Angle => "rad",
            Dimension::ThermalConductivity => "W/(m K)",
            Dimension::DisplacementPsd => "m^2/Hz",
            Dimension::ForcePsd => "N^2/Hz",
            Dimension::Dimensionless => "",
        }
    }
}

/// SI prefixes as decimal exponents, so conversion is a single correctly
/// rounded decimal parse.
const PREFIXES: &[(&str, i32)] = &[
    ("y", -24),
    ("z", -21),
    ("a", -18),
    ("f", -15),
    ("p", -12),
    ("n", -9),
    ("u", -6),
    ("µ", -6),
    ("μ", -6),
    ("m", -3),
    ("c", -2),
    ("k", 3),
    ("M", 6),
    ("G", 9),
    ("T", 12),
];

#[derive(Debug, Clone, Copy)]
enum Factor {
    Pow10(i32),
    /// Amplitude density: the value times 10^k is squared.
    SquaredPow10(i32),
    Scale(f64),
}

fn prefixed(unit: &str, base: &str) -> Option<i32> {
    if unit == base {
        return Some(0);
    }
    let prefix = unit.strip_suffix(base)?;
    PREFIXES.iter().find(|(p, _)| *p == prefix).map(|(_, e)| *e)
}

/// Split a leading decimal number into mantissa text and exponent.
fn split_number(s: &str) -> Option<(&str, i32, &str)> {
    let bytes = s.as_bytes();
    let mut i = 0;
    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
        i += 1;
    }
    let digits_start = i;
    while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
        i += 1;
    }
    if i == digits_start || !s[digits_start..i].bytes().any(|b| b.is_ascii_digit()) {
        return None;
    }
    let mantissa = &s[..i];
    let mut exponent = 0;
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        let exp_start = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_start {
            exponent = s[i + 1..j].parse().ok()?;
            i = j;
        }
    }
    Some((mantissa, exponent, s[i..].trim()))
}

fn unit_factor(unit: &str, dim: Dimension) -> Option<Factor> {
    let compact: String = unit
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '*' && *c != '·')
        .collect();
    let u = compact.as_str();
    let pow = |base: &str| prefixed(u, base).map(Factor::Pow10);
    match dim {
        Dimension::Length => pow("m"),
        Dimension::Mass => prefixed(u, "g").map(|e| Factor::Pow10(e - 3)),
        Dimension::Time => pow("s"),
        Dimension::Frequency => pow("Hz"),
        Dimension::Temperature => pow("K"),
        Dimension::Power => pow("W"),
        Dimension::Pressure => pow("Pa"),
        Dimension::Force => pow("N"),
        Dimension::Angle => match u {
            "deg" | "°" => Some(Factor::Scale(std::f64::consts::PI / 180.0)),
            _ => pow("rad"),
        },
        Dimension::ThermalConductivity => match u {
            "W/(mK)" | "W/m/K" | "Wm^-1K^-1" => Some(Factor::Pow10(0)),
            _ => None,
        },
        Dimension::DisplacementPsd => spectral_density(u, "m"),
        Dimension::ForcePsd => spectral_density(u, "N"),
        Dimension::Dimensionless => match u {
            "" => Some(Factor::Pow10(0)),
            "%" => Some(Factor::Pow10(-2)),
            "ppm" => Some(Factor::Pow10(-6)),
            "ppb" => Some(Factor::Pow10(-9)),
            _ => None,
        },
    }
}

/// `<p>m^2/Hz` (power density) or `<p>m/rtHz` (amplitude density, squared).
fn spectral_density(u: &str, base: &str) -> Option<Factor> {
    if let Some(head) = u.strip_suffix("^2/Hz").or_else(|| u.strip_suffix("²/Hz")) {
        return prefixed(head, base).map(|e| Factor::Pow10(2 * e));
    }
    for tail in ["/rtHz", "/sqrt(Hz)", "/√Hz", "/sqrtHz"] {
        if let Some(head) = u.strip_suffix(tail) {
            return prefixed(head, base).map(Factor::SquaredPow10);
        }
    }
    None
}

/// Parse a quantity string into its SI value.
///
/// Amplitude spectral densities (`fm/rtHz`) are squared, so the returned value
/// is always a power spectral density.
pub fn parse_quantity(s: &str, dim: Dimension) -> Result<f64, String> {
    let trimmed = s.trim();
    let (mantissa, exponent, unit) =
        split_number(trimmed).ok_or_else(|| format!("`{s}` does not start with a number"))?;
    if unit.is_empty() && dim != Dimension::Dimensionless {
        return Err(format!(
            "`{s}` has no unit; expected a quantity in {}",
            dim.si_unit()
        ));
    }
    let factor = unit_factor(unit, dim)
        .ok_or_else(|| format!("unknown unit `{unit}` in `{s}` (expected {:?})", dim))?;
    let decimal = |shift: i32| -> Result<f64, String> {
        format!("{mantissa}e{}", exponent + shift)
            .parse::<f64>()
            .map_err(|e| format!("`{s}`: {e}"))
    };
    let si = match factor {
        Factor::Pow10(k) => decimal(k)?,
        Factor::SquaredPow10(k) => decimal(k)?.powi(2),
        Factor::Scale(f) => decimal(0)? * f,
    };
    if !si.is_finite() {
        return Err(format!("`{s}` is not a finite quantity"));
    }
    Ok(si)
}

/// Canonical text for an SI value: shortest round-trip exponent form.
pub fn format_si(value: f64, dim: Dimension) -> String {
    let unit = dim.si_unit();
    if unit.is_empty() {
        format!("{value:e}")
    } else {
        format!("{value:e} {unit}")
    }
}

/// Marker types tying a [`Quantity`] to its [`Dimension`].
pub trait Unit {
    const DIM: Dimension;
}

macro_rules! units {
    ($($name:ident => $dim:ident),* $(,)?) => {
        $(
            #[derive(Debug, Clone, Copy, PartialEq)]
            pub struct $name;
            impl Unit for $name {
                const DIM: Dimension = Dimension::$dim;
            }
        )*
    };
}

units! {
    Meters => Length,
    Kilograms => Mass,
    Seconds => Time,
    Hertz => Frequency,
    Kelvin => Temperature,
    Watts => Power,
    Pascals => Pressure,
    Newtons => Force,
    Radians => Angle,
    WattsPerMeterKelvin => ThermalConductivity,
    MetersSquaredPerHz => DisplacementPsd,
    Ratio => Dimensionless,
}

/// An SI value that deserialises from a unit-annotated string and serialises
/// back to its canonical SI form.
#[derive(Clone, Copy, PartialEq)]
pub struct Quantity<U> {
    pub value: f64,
    unit: PhantomData<U>,
}

impl<U> Quantity<U> {
    pub const fn new(value: f64) -> Self {
        Quantity {
            value,
            unit: PhantomData,
        }
    }

    pub fn get(self) -> f64 {
        self.value
    }
}

impl<U: Unit> fmt::Debug for Quantity<U> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_si(self.value, U::DIM))
    }
}

impl<U: Unit> fmt::Display for Quantity<U> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_si(self.value, U::DIM))
    }
}

impl<U: Unit> Serialize for Quantity<U> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if U::DIM == Dimension::Dimensionless {
            serializer.serialize_f64(self.value)
        } else {
            serializer.serialize_str(&format_si(self.value, U::DIM))
        }
    }
}

impl<'de, U: Unit> Deserialize<'de> for Quantity<U> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct QuantityVisitor<U>(PhantomData<U>);

        impl<U: Unit> Visitor<'_> for QuantityVisitor<U> {
            type Value = Quantity<U>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                if U::DIM == Dimension::Dimensionless {
                    f.write_str("a number")
                } else {
                    write!(f, "a quantity string with a unit convertible to {}", U::DIM.si_unit())
                }
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                parse_quantity(v, U::DIM).map(Quantity::new).map_err(E::custom)
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Self::Value, E> {
                if U::DIM == Dimension::Dimensionless {
                    Ok(Quantity::new(v))
                } else {
                    Err(E::custom(format!(
                        "bare number {v} needs a unit ({})",
                        U::DIM.si_unit()
                    )))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Self::Value, E> {
                self.visit_f64(v as f64)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Self::Value, E> {
                self.visit_f64(v as f64)
            }
        }

        deserializer.deserialize_any(QuantityVisitor(PhantomData))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn prefixes_and_bases() {
        let cases = [
            ("12 ng", Dimension::Mass, 12e-12),
            ("0.012 ug", Dimension::Mass, 12e-12),
            ("1.2e-11 kg", Dimension::Mass, 1.2e-11),
            ("39.9 kHz", Dimension::Frequency, 39.9e3),
            ("1.5mHz", Dimension::Frequency, 1.5e-3),
            ("850 nm", Dimension::Length, 850e-9),
            ("1.7 mm", Dimension::Length, 1.7e-3),
            ("3 m", Dimension::Length, 3.0),
            ("60 µW", Dimension::Power, 60e-6),
            ("0.9 GPa", Dimension::Pressure, 0.9e9),
            ("300 K", Dimension::Temperature, 300.0),
            ("5 mK", Dimension::Temperature, 5e-3),
            ("90 deg", Dimension::Angle, std::f64::consts::FRAC_PI_2),
            ("3 W/(m K)", Dimension::ThermalConductivity, 3.0),
            ("3 W/m/K", Dimension::ThermalConductivity, 3.0),
            ("10 ppm", Dimension::Dimensionless, 10e-6),
            ("10 fm/rtHz", Dimension::DisplacementPsd, 1e-28),
            ("10 fm/√Hz", Dimension::DisplacementPsd, 1e-28),
            ("1e-28 m^2/Hz", Dimension::DisplacementPsd, 1e-28),
            ("100 fm^2/Hz", Dimension::DisplacementPsd, 1e-28),
            ("-2 s", Dimension::Time, -2.0),
        ];
        for (s, dim, expect) in cases {
            let v = parse_quantity(s, dim).unwrap();
            assert!(rel(v, expect) < 1e-12, "{s}: {v} vs {expect}");
        }
    }

    #[test]
    fn rejects_missing_and_wrong_units() {
        assert!(parse_quantity("12", Dimension::Mass).is_err());
        assert!(parse_quantity("12 Hz", Dimension::Mass).is_err());
        assert!(parse_quantity("kHz", Dimension::Frequency).is_err());
        assert!(parse_quantity("3 xm", Dimension::Length).is_err());
        assert!(parse_quantity("1e400 m", Dimension::Length).is_err());
    }

    #[test]
    fn canonical_form_round_trips_exactly() {
        for (v, dim) in [
            (1.2e-11, Dimension::Mass),
            (2.0 * std::f64::consts::PI * 39.9e3, Dimension::Frequency),
            (1.885e-28, Dimension::DisplacementPsd),
            (0.1, Dimension::Dimensionless),
        ] {
            let text = format_si(v, dim);
            assert_eq!(parse_quantity(&text, dim).unwrap(), v, "{text}");
        }
    }

    #[test]
    fn serde_quantity() {
        let q: Quantity<Kilograms> = serde_json::from_str("\"12 ng\"").unwrap();
        assert!(rel(q.get(), 12e-12) < 1e-12);
        let back = serde_json::to_string(&q).unwrap();
        let again: Quantity<Kilograms> = serde_json::from_str(&back).unwrap();
        assert_eq!(q, again);
        let err = serde_json::from_str::<Quantity<Kilograms>>("12").unwrap_err();
        assert!(err.to_string().contains("needs a unit"));
        let r: Quantity<Ratio> = serde_json::from_str("0.3").unwrap();
        assert_eq!(r.get(), 0.3);
    }
}
