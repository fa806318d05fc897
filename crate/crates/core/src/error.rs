use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shot-noise imprecision is undefined at zero optical power")]
    ZeroPower,

    #[error("back-action is undefined for zero imprecision quanta")]
    ZeroImprecision,

    #[error("feedback phase {phase} rad makes cot(phase) diverge")]
    SingularPhase { phase: f64 },

    #[error("frequency {freq} Hz is at or above the Nyquist frequency {nyquist} Hz")]
    AboveNyquist { freq: f64, nyquist: f64 },

    #[error(
        "sample rate {sample_rate} Hz is below 10 samples per mechanical period ({required} Hz required)"
    )]
    SampleRateTooLow { sample_rate: f64, required: f64 },

    #[error(
        "feedback loop diverged at t = {time:.6} s (loop gain g = {gain:.4e}, loop phase = {phase:.4} rad)"
    )]
    Unstable { time: f64, gain: f64, phase: f64 },

    #[error("record of {len} samples is shorter than one segment of {segment} samples")]
    RecordTooShort { len: usize, segment: usize },

    #[error("calibration tone at {tone} Hz lies within the thermal linewidth around {center} Hz")]
    ToneInsideLinewidth { tone: f64, center: f64 },

    #[error("spectrum does not cover the requested band {low}..{high} Hz")]
    BandOutsideSpectrum { low: f64, high: f64 },

    #[error("fit did not converge after {iterations} iterations (last gain {last_gain:.6e})")]
    FitNotConverged { iterations: usize, last_gain: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data file {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
