use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Parses comma- or whitespace-separated numeric rows of equal width into a
/// matrix. Blank lines and lines starting with `#` are skipped.
pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let expected = *width.get_or_insert(fields.len());
        if fields.len() != expected {
            return Err(Error::Format(format!(
                "line {}: {} fields, expected {expected}",
                lineno + 1,
                fields.len()
            )));
        }
        for f in fields {
            let v: f64 = f.parse().map_err(|_| {
                Error::Format(format!("line {}: cannot parse {f:?} as a number", lineno + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!("line {}: non-finite value {f}", lineno + 1)));
            }
            data.push(v);
        }
        rows += 1;
    }
    match width {
        Some(w) if rows > 0 => Matrix::from_vec(rows, w, data),
        _ => Err(Error::Format("no data rows".into())),
    }
}

/// Like [`parse_matrix`], splitting the first `n_in` columns off as inputs
/// and requiring exactly `n_out` more as targets.
pub fn parse_delimited(text: &str, n_in: usize, n_out: usize) -> Result<Dataset> {
    if n_in == 0 || n_out == 0 {
        return Err(Error::Config("delimited data needs n_in >= 1 and n_out >= 1".into()));
    }
    let m = parse_matrix(text)?;
    if m.cols() != n_in + n_out {
        return Err(Error::Format(format!(
            "rows have {} fields, expected {}",
            m.cols(),
            n_in + n_out
        )));
    }
    Dataset::new(m.select_cols(0, n_in)?, m.select_cols(n_in, n_out)?, "delimited")
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    parse_matrix(&fs::read_to_string(path)?)
}

pub fn load_delimited(path: impl AsRef<Path>, n_in: usize, n_out: usize) -> Result<Dataset> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut ds = parse_delimited(&text, n_in, n_out)?;
    ds.name = path.as_ref().display().to_string();
    Ok(ds)
}

/// Writes inputs then targets, comma-separated, with shortest round-trip
/// formatting.
pub fn write_delimited(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for i in 0..ds.len() {
        let fields: Vec<String> = ds
            .inputs
            .row(i)
            .iter()
            .chain(ds.targets.row(i))
            .map(|v| v.to_string())
            .collect();
        let _ = writeln!(out, "{}", fields.join(","));
    }
    fs::write(path, out)?;
    Ok(())
}
