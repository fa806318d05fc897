//! CSV artefacts. Every file starts with `# key: value` metadata lines (config
//! hash, seed, provenance of the numbers) followed by a header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::TimeSeries;
use crate::spectral::{Spectrum, Window};

/// Ordered `key: value` metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metadata(pub Vec<(String, String)>);

impl Metadata {
    pub fn new() -> Self {
        Metadata(Vec::new())
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.push(key, value);
        self
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        for (k, v) in &self.0 {
            writeln!(out, "# {k}: {v}")?;
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Write a table: metadata, header, then rows formatted with `{:e}`.
pub fn write_table(
    path: &Path,
    meta: &Metadata,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let io_err = |e| Error::io(path, e);
    let mut out = create(path)?;
    meta.write(&mut out).map_err(io_err)?;
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    let mut line = String::new();
    for row in rows {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v:e}"));
        }
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Write mixed-type rows (already formatted cells).
pub fn write_text_table(
    path: &Path,
    meta: &Metadata,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    let io_err = |e| Error::io(path, e);
    let mut out = create(path)?;
    meta.write(&mut out).map_err(io_err)?;
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    for row in rows {
        writeln!(out, "{}", row.join(",")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_timeseries(path: &Path, ts: &TimeSeries, meta: &Metadata) -> Result<()> {
    let meta = meta.clone().with("dt_s", format!("{:e}", ts.dt));
    write_table(
        path,
        &meta,
        &["t_s", "x_m", "y_m", "f_fb_n"],
        (0..ts.len()).map(|k| vec![k as f64 * ts.dt, ts.x[k], ts.y[k], ts.f_fb[k]]),
    )
}

pub fn write_spectrum(path: &Path, s: &Spectrum, meta: &Metadata) -> Result<()> {
    let meta = meta
        .clone()
        .with("resolution_bandwidth_hz", format!("{:e}", s.resolution_bandwidth))
        .with("averages", s.averages)
        .with("window", s.window.name())
        .with("duration_s", format!("{:e}", s.duration));
    write_table(
        path,
        &meta,
        &["frequency_hz", "psd"],
        s.frequencies.iter().zip(&s.psd).map(|(&f, &p)| vec![f, p]),
    )
}

/// Read a table written by [`write_table`].
pub fn read_table(path: &Path) -> Result<(Metadata, Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let mut meta = Metadata::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some((k, v)) = line.trim_start_matches('#').split_once(':') {
            meta.push(k.trim(), v.trim());
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let row = record
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| parse_err(format!("row {}: `{c}` is not a number", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((meta, header, rows))
}

/// Read a spectrum file. Missing metadata falls back to a Hann window and a
/// single average.
pub fn read_spectrum(path: &Path) -> Result<(Spectrum, Metadata)> {
    let (meta, header, rows) = read_table(path)?;
    let parse_err = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        reason,
    };
    if header.len() < 2 {
        return Err(parse_err("expected columns frequency_hz,psd".into()));
    }
    if rows.len() < 2 {
        return Err(parse_err("fewer than two spectrum rows".into()));
    }
    let frequencies: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let psd: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    if !frequencies.windows(2).all(|w| w[1] > w[0]) {
        return Err(parse_err("frequencies are not strictly increasing".into()));
    }
    if psd.iter().any(|p| !(*p >= 0.0)) {
        return Err(parse_err("negative or non-finite psd value".into()));
    }
    let window = match meta.get("window") {
        Some("rectangular") => Window::Rectangular,
        _ => Window::Hann,
    };
    let df = frequencies[1] - frequencies[0];
    let number = |key: &str| meta.get(key).and_then(|v| v.parse::<f64>().ok());
    let spectrum = Spectrum {
        resolution_bandwidth: number("resolution_bandwidth_hz").unwrap_or(window.enbw() * df),
        averages: number("averages").map(|a| a as usize).unwrap_or(1),
        duration: number("duration_s").unwrap_or(1.0 / df),
        window,
        frequencies,
        psd,
    };
    Ok((spectrum, meta))
}

/// Plain `key: value` report.
pub fn write_report(path: &Path, meta: &Metadata, lines: &[(String, String)]) -> Result<()> {
    let io_err = |e| Error::io(path, e);
    let mut out = create(path)?;
    meta.write(&mut out).map_err(io_err)?;
    for (k, v) in lines {
        writeln!(out, "{k}: {v}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/psd.csv");
        let s = Spectrum {
            frequencies: vec![0.0, 0.5, 1.0, 1.5],
            psd: vec![1e-28, 1e-26 / 3.0, 0.1 + 0.2, 7.0],
            resolution_bandwidth: 0.75,
            averages: 12,
            window: Window::Hann,
            duration: 24.0,
        };
        let meta = Metadata::new().with("config_hash", "abc").with("seed", 9);
        write_spectrum(&path, &s, &meta).unwrap();
        let (back, m) = read_spectrum(&path).unwrap();
        assert_eq!(back, s);
        assert_eq!(m.get("config_hash"), Some("abc"));
        assert_eq!(m.get("seed"), Some("9"));
    }

    #[test]
    fn malformed_rows_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "# a: b\nfrequency_hz,psd\n1,2\n2,oops\n").unwrap();
        let err = read_spectrum(&path).unwrap_err().to_string();
        assert!(err.contains("oops"), "{err}");
        std::fs::write(&path, "frequency_hz,psd\n2,1\n1,1\n").unwrap();
        assert!(read_spectrum(&path).is_err());
    }

    #[test]
    fn timeseries_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ts.csv");
        let ts = TimeSeries {
            dt: 0.5,
            x: vec![1.0, 2.0],
            y: vec![1.5, 2.5],
            f_fb: vec![0.0, -1e-12],
        };
        write_timeseries(&path, &ts, &Metadata::new().with("seed", 1)).unwrap();
        let (meta, header, rows) = read_table(&path).unwrap();
        assert_eq!(header, ["t_s", "x_m", "y_m", "f_fb_n"]);
        assert_eq!(rows[1], vec![0.5, 2.0, 2.5, -1e-12]);
        assert_eq!(meta.get("dt_s"), Some("5e-1"));
    }
}
