//! CSV and key/value serialization of traces, spectra and fit results.
//!
//! All CSV files carry `#`-prefixed metadata headers followed by a column
//! header line. Frequencies on disk are in Hz, times in seconds; the
//! spectral convention is recorded in the metadata so round trips preserve
//! it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::filter::FrequencyResponse;
use crate::spectrum::{CrossSpectrum, SpectralConvention, Spectrum};
use crate::trace::{Samples, TimeTrace};
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// Atomic write: stage next to the target, then rename into place.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let display = path.display().to_string();
    let tmp = path.with_extension("tmp-partial");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&display, e))?;
        f.write_all(content.as_bytes())
            .map_err(|e| Error::io(&display, e))?;
        f.sync_all().map_err(|e| Error::io(&display, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(&display, e))
}

struct CsvBody {
    meta: BTreeMap<String, String>,
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_csv(path: &Path) -> Result<CsvBody> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let mut meta = BTreeMap::new();
    let mut columns = Vec::new();
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if columns.is_empty() {
            columns = line.split(',').map(|c| c.trim().to_string()).collect();
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|c| {
                c.trim().parse::<f64>().map_err(|e| {
                    Error::parse(&display, format!("line {}: {e}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != columns.len() {
            return Err(Error::parse(
                &display,
                format!("line {}: expected {} columns", lineno + 1, columns.len()),
            ));
        }
        rows.push(row);
    }
    if columns.is_empty() {
        return Err(Error::parse(&display, "missing column header"));
    }
    Ok(CsvBody {
        meta,
        columns,
        rows,
    })
}

/// Write a time trace as `t_s,re[,im]`.
pub fn write_trace(path: &Path, trace: &TimeTrace) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# label = {}\n", trace.label));
    out.push_str(&format!("# units = {}\n", trace.units));
    out.push_str(&format!("# sample_rate_hz = {}\n", fmt(trace.sample_rate)));
    out.push_str(&format!("# start_time_s = {}\n", fmt(trace.start_time)));
    let dt = trace.dt();
    match &trace.samples {
        Samples::Real(v) => {
            out.push_str("t_s,re\n");
            for (k, x) in v.iter().enumerate() {
                out.push_str(&format!(
                    "{},{}\n",
                    fmt(trace.start_time + k as f64 * dt),
                    fmt(*x)
                ));
            }
        }
        Samples::Complex(v) => {
            out.push_str("t_s,re,im\n");
            for (k, x) in v.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{}\n",
                    fmt(trace.start_time + k as f64 * dt),
                    fmt(x.re),
                    fmt(x.im)
                ));
            }
        }
    }
    write_atomic(path, &out)
}

/// Read a time trace written by [`write_trace`].
pub fn read_trace(path: &Path) -> Result<TimeTrace> {
    let display = path.display().to_string();
    let body = read_csv(path)?;
    let rate: f64 = body
        .meta
        .get("sample_rate_hz")
        .ok_or_else(|| Error::parse(&display, "missing sample_rate_hz"))?
        .parse()
        .map_err(|e| Error::parse(&display, format!("sample_rate_hz: {e}")))?;
    let label = body.meta.get("label").cloned().unwrap_or_default();
    let units = body.meta.get("units").cloned().unwrap_or_default();
    let start: f64 = body
        .meta
        .get("start_time_s")
        .map(|s| s.parse().unwrap_or(0.0))
        .unwrap_or(0.0);
    let mut trace = match body.columns.len() {
        2 => TimeTrace::real(rate, body.rows.iter().map(|r| r[1]).collect(), label)?,
        3 => TimeTrace::complex(
            rate,
            body.rows
                .iter()
                .map(|r| Complex64::new(r[1], r[2]))
                .collect(),
            label,
        )?,
        n => {
            return Err(Error::parse(
                &display,
                format!("expected 2 or 3 columns, found {n}"),
            ))
        }
    };
    trace.start_time = start;
    Ok(trace.with_units(units))
}

fn convention_tag(c: SpectralConvention) -> &'static str {
    match c {
        SpectralConvention::TwoSidedAngular => "two_sided_angular",
        SpectralConvention::SingleSidedHertz => "single_sided_hertz",
    }
}

fn parse_convention(s: &str, path: &str) -> Result<SpectralConvention> {
    match s {
        "two_sided_angular" => Ok(SpectralConvention::TwoSidedAngular),
        "single_sided_hertz" => Ok(SpectralConvention::SingleSidedHertz),
        other => Err(Error::parse(path, format!("unknown convention '{other}'"))),
    }
}

/// Hz value stored on disk for a grid point under a given convention.
fn grid_to_hz(g: f64, c: SpectralConvention) -> f64 {
    match c {
        SpectralConvention::TwoSidedAngular => g / TWO_PI,
        SpectralConvention::SingleSidedHertz => g,
    }
}

fn grid_from_hz(f: f64, c: SpectralConvention) -> f64 {
    match c {
        SpectralConvention::TwoSidedAngular => f * TWO_PI,
        SpectralConvention::SingleSidedHertz => f,
    }
}

/// Write a real spectrum as `freq_hz,value[,sigma]`.
pub fn write_spectrum(path: &Path, s: &Spectrum) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# label = {}\n", s.label));
    out.push_str(&format!("# convention = {}\n", convention_tag(s.convention)));
    out.push_str(&format!("# n_averages = {}\n", s.n_averages));
    match &s.stderr {
        Some(err) => {
            out.push_str("freq_hz,value,sigma\n");
            for ((g, v), e) in s.grid.iter().zip(&s.values).zip(err) {
                out.push_str(&format!(
                    "{},{},{}\n",
                    fmt(grid_to_hz(*g, s.convention)),
                    fmt(*v),
                    fmt(*e)
                ));
            }
        }
        None => {
            out.push_str("freq_hz,value\n");
            for (g, v) in s.grid.iter().zip(&s.values) {
                out.push_str(&format!(
                    "{},{}\n",
                    fmt(grid_to_hz(*g, s.convention)),
                    fmt(*v)
                ));
            }
        }
    }
    write_atomic(path, &out)
}

/// Read a spectrum written by [`write_spectrum`].
pub fn read_spectrum(path: &Path) -> Result<Spectrum> {
    let display = path.display().to_string();
    let body = read_csv(path)?;
    let convention = parse_convention(
        body.meta
            .get("convention")
            .ok_or_else(|| Error::parse(&display, "missing convention"))?,
        &display,
    )?;
    let grid = body
        .rows
        .iter()
        .map(|r| grid_from_hz(r[0], convention))
        .collect();
    let values = body.rows.iter().map(|r| r[1]).collect();
    let mut s = Spectrum::new(grid, values, convention)?;
    if body.columns.len() == 3 {
        s.stderr = Some(body.rows.iter().map(|r| r[2]).collect());
    }
    if let Some(n) = body.meta.get("n_averages") {
        s.n_averages = n
            .parse()
            .map_err(|e| Error::parse(&display, format!("n_averages: {e}")))?;
    }
    s.label = body.meta.get("label").cloned().unwrap_or_default();
    Ok(s)
}

/// Write a cross spectrum as `freq_hz,re,im[,sigma]`.
pub fn write_cross_spectrum(path: &Path, s: &CrossSpectrum) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# label = {}\n", s.label));
    out.push_str(&format!("# convention = {}\n", convention_tag(s.convention)));
    out.push_str(&format!("# n_averages = {}\n", s.n_averages));
    match &s.stderr {
        Some(err) => {
            out.push_str("freq_hz,re,im,sigma\n");
            for ((g, v), e) in s.grid.iter().zip(&s.values).zip(err) {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt(grid_to_hz(*g, s.convention)),
                    fmt(v.re),
                    fmt(v.im),
                    fmt(*e)
                ));
            }
        }
        None => {
            out.push_str("freq_hz,re,im\n");
            for (g, v) in s.grid.iter().zip(&s.values) {
                out.push_str(&format!(
                    "{},{},{}\n",
                    fmt(grid_to_hz(*g, s.convention)),
                    fmt(v.re),
                    fmt(v.im)
                ));
            }
        }
    }
    write_atomic(path, &out)
}

/// Read a cross spectrum written by [`write_cross_spectrum`].
pub fn read_cross_spectrum(path: &Path) -> Result<CrossSpectrum> {
    let display = path.display().to_string();
    let body = read_csv(path)?;
    let convention = parse_convention(
        body.meta
            .get("convention")
            .ok_or_else(|| Error::parse(&display, "missing convention"))?,
        &display,
    )?;
    let grid = body
        .rows
        .iter()
        .map(|r| grid_from_hz(r[0], convention))
        .collect();
    let values = body
        .rows
        .iter()
        .map(|r| Complex64::new(r[1], r[2]))
        .collect();
    let mut s = CrossSpectrum::new(grid, values, convention)?;
    if body.columns.len() == 4 {
        s.stderr = Some(body.rows.iter().map(|r| r[3]).collect());
    }
    if let Some(n) = body.meta.get("n_averages") {
        s.n_averages = n
            .parse()
            .map_err(|e| Error::parse(&display, format!("n_averages: {e}")))?;
    }
    s.label = body.meta.get("label").cloned().unwrap_or_default();
    Ok(s)
}

/// Import a transfer function measured as `frequency_hz,re,im`.
pub fn read_frequency_response(path: &Path) -> Result<FrequencyResponse> {
    let display = path.display().to_string();
    let body = read_csv(path)?;
    if body.columns.len() != 3 {
        return Err(Error::parse(
            &display,
            "expected columns frequency_hz,re,im",
        ));
    }
    let grid = body.rows.iter().map(|r| r[0] * TWO_PI).collect();
    let values = body
        .rows
        .iter()
        .map(|r| Complex64::new(r[1], r[2]))
        .collect();
    FrequencyResponse::new(grid, values)
}

/// Write a flat `key = value` report (iteration order is the caller's).
pub fn write_key_values(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(&format!("{k} = {v}\n"));
    }
    write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let samples: Vec<Complex64> = (0..100)
            .map(|k| Complex64::new((k as f64).sin(), (k as f64).cos()))
            .collect();
        let t = TimeTrace::complex(977e3, samples, "i_r")
            .unwrap()
            .with_units("V");
        write_trace(&path, &t).unwrap();
        let back = read_trace(&path).unwrap();
        assert_eq!(back.label, "i_r");
        assert_eq!(back.units, "V");
        assert_relative_eq!(back.sample_rate, 977e3);
        for (a, b) in t.to_complex().iter().zip(back.to_complex().iter()) {
            assert_relative_eq!(a.re, b.re, max_relative = 1e-11);
            assert_relative_eq!(a.im, b.im, max_relative = 1e-11);
        }
    }

    #[test]
    fn spectrum_round_trip_preserves_convention() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.csv");
        let grid: Vec<f64> = (1..50).map(|k| k as f64 * 100.0).collect();
        let values: Vec<f64> = grid.iter().map(|w| 1.0 / w).collect();
        let mut s = Spectrum::new(grid, values, SpectralConvention::TwoSidedAngular).unwrap();
        s.stderr = Some(s.values.iter().map(|v| v * 0.1).collect());
        s.n_averages = 32;
        s.label = "test".into();
        write_spectrum(&path, &s).unwrap();
        let back = read_spectrum(&path).unwrap();
        assert_eq!(back.convention, s.convention);
        assert_eq!(back.n_averages, 32);
        for (a, b) in s.grid.iter().zip(back.grid.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-11);
        }
        assert!(back.stderr.is_some());
    }

    #[test]
    fn cross_spectrum_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cross.csv");
        let grid: Vec<f64> = (1..50).map(|k| k as f64 * 100.0).collect();
        let values: Vec<Complex64> = grid
            .iter()
            .map(|w| Complex64::new(1.0 / w, -2.0 / w))
            .collect();
        let s = CrossSpectrum::new(grid, values, SpectralConvention::TwoSidedAngular).unwrap();
        write_cross_spectrum(&path, &s).unwrap();
        let back = read_cross_spectrum(&path).unwrap();
        for (a, b) in s.values.iter().zip(back.values.iter()) {
            assert_relative_eq!(a.im, b.im, max_relative = 1e-11);
        }
    }

    #[test]
    fn frequency_response_import() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resp.csv");
        let mut text = String::from("frequency_hz,re,im\n");
        for k in 1..100 {
            let f = k as f64 * 1e3;
            text.push_str(&format!("{f},{},{}\n", 1.0 / k as f64, 0.1));
        }
        write_atomic(&path, &text).unwrap();
        let resp = read_frequency_response(&path).unwrap();
        let v = resp.eval(TWO_PI * 1e3).unwrap();
        assert_relative_eq!(v.re, 1.0, max_relative = 1e-9);
        assert_relative_eq!(v.im, 0.1, max_relative = 1e-9);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_trace(Path::new("/nonexistent/trace.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/trace.csv"));
    }

    #[test]
    fn malformed_number_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        write_atomic(
            &path,
            "# sample_rate_hz = 1000\nt_s,re\n0.0,1.0\n0.001,oops\n",
        )
        .unwrap();
        let err = read_trace(&path).unwrap_err();
        assert!(err.to_string().contains("line 4"));
    }
}
