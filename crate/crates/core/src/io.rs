//! Shared helpers for the line-delimited JSON and CSV file formats.

use std::io::BufRead;

use crate::{Error, Result};

/// Formats `x` with 17 significant digits, enough to reproduce every `f64`
/// bit-exactly when parsed back. The output is always a valid JSON number.
pub fn fmt_sig17(x: f64) -> String {
    debug_assert!(x.is_finite());
    let sci = format!("{x:.16e}");
    let exp: i32 = sci
        .split_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .unwrap_or(0);
    if (-5..=16).contains(&exp) {
        let prec = (16 - exp).max(0) as usize;
        format!("{x:.prec$}")
    } else {
        sci
    }
}

/// JSON string literal for `s`, with escaping.
pub fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

/// Iterates over the non-blank lines of `reader`, passing the 1-based line
/// number. Errors returned by `f` are tagged with that line number.
pub fn for_each_line<R, F>(reader: R, mut f: F) -> Result<()>
where
    R: BufRead,
    F: FnMut(usize, &str) -> Result<()>,
{
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::from(e).at_line(line_no))?;
        if line.trim().is_empty() {
            continue;
        }
        f(line_no, &line).map_err(|e| match e {
            e @ Error::AtLine { .. } => e,
            e => e.at_line(line_no),
        })?;
    }
    Ok(())
}

/// Parses one JSON line into `T`, mapping syntax errors to `Malformed`.
pub fn parse_json_line<T: serde::de::DeserializeOwned>(line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Malformed(e.to_string()))
}

pub fn ensure_finite(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}
