use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::Deserialize;

use super::{CorrelationMatrix, Dimension, PerDimension, RawScoreRecord, ScoredSample};
use crate::io::{ensure_finite, fmt_sig17, for_each_line, json_str, parse_json_line};
use crate::{Error, Result};

#[derive(Deserialize)]
struct ScoreLine {
    prompt_id: String,
    video_id: String,
    scores: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
struct ScoredLine {
    prompt_id: String,
    video_id: String,
    normalized: BTreeMap<String, f64>,
    omniscore: f64,
}

fn dimension_table(map: BTreeMap<String, f64>) -> Result<PerDimension<f64>> {
    let mut parsed = BTreeMap::new();
    for (name, value) in map {
        let dim: Dimension = name.parse()?;
        parsed.insert(dim, ensure_finite(dim.as_str(), value)?);
    }
    PerDimension::try_from_fn(|d| parsed.get(&d).copied())
}

fn check_unique(
    seen: &mut HashSet<(String, String)>,
    prompt_id: &str,
    video_id: &str,
) -> Result<()> {
    if !seen.insert((prompt_id.to_string(), video_id.to_string())) {
        return Err(Error::DuplicateRecord {
            prompt_id: prompt_id.to_string(),
            video_id: video_id.to_string(),
        });
    }
    Ok(())
}

/// Reads a raw score file: one JSON object per line with `prompt_id`,
/// `video_id` and a `scores` object holding all seven dimensions.
pub fn parse_score_file<R: BufRead>(source: R) -> Result<Vec<RawScoreRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for_each_line(source, |_, line| {
        let ScoreLine {
            prompt_id,
            video_id,
            scores,
        } = parse_json_line(line)?;
        let raw = dimension_table(scores)?;
        check_unique(&mut seen, &prompt_id, &video_id)?;
        records.push(RawScoreRecord {
            prompt_id,
            video_id,
            raw,
        });
        Ok(())
    })?;
    Ok(records)
}

fn write_dimension_object<W: Write>(out: &mut W, values: &PerDimension<f64>) -> Result<()> {
    out.write_all(b"{")?;
    for (i, (d, v)) in values.iter().enumerate() {
        if i > 0 {
            out.write_all(b",")?;
        }
        write!(
            out,
            "\"{}\":{}",
            d.as_str(),
            fmt_sig17(ensure_finite(d.as_str(), v)?)
        )?;
    }
    out.write_all(b"}")?;
    Ok(())
}

/// Writes records in the raw score file format, dimensions in canonical
/// order.
pub fn write_score_file<W: Write>(out: &mut W, records: &[RawScoreRecord]) -> Result<()> {
    for r in records {
        write!(
            out,
            "{{\"prompt_id\":{},\"video_id\":{},\"scores\":",
            json_str(&r.prompt_id),
            json_str(&r.video_id)
        )?;
        write_dimension_object(out, &r.raw)?;
        out.write_all(b"}\n")?;
    }
    Ok(())
}

/// Writes scored samples: normalised dimensions plus the OmniScore.
pub fn write_scored_file<W: Write>(out: &mut W, samples: &[ScoredSample]) -> Result<()> {
    for s in samples {
        write!(
            out,
            "{{\"prompt_id\":{},\"video_id\":{},\"normalized\":",
            json_str(&s.prompt_id),
            json_str(&s.video_id)
        )?;
        write_dimension_object(out, &s.normalized)?;
        writeln!(out, ",\"omniscore\":{}}}", fmt_sig17(s.omniscore))?;
    }
    Ok(())
}

pub fn parse_scored_file<R: BufRead>(source: R) -> Result<Vec<ScoredSample>> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for_each_line(source, |_, line| {
        let ScoredLine {
            prompt_id,
            video_id,
            normalized,
            omniscore,
        } = parse_json_line(line)?;
        let normalized = dimension_table(normalized)?;
        let omniscore = ensure_finite("omniscore", omniscore)?;
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(omniscore) || !normalized.0.iter().copied().all(in_unit) {
            return Err(Error::Malformed("scored values must lie in [0, 1]".into()));
        }
        check_unique(&mut seen, &prompt_id, &video_id)?;
        samples.push(ScoredSample {
            prompt_id,
            video_id,
            normalized,
            omniscore,
        });
        Ok(())
    })?;
    Ok(samples)
}

/// Writes the correlation matrix as a labelled 7x7 CSV table. Undefined
/// entries are written as `NA`.
pub fn write_correlation_csv<W: Write>(out: &mut W, matrix: &CorrelationMatrix) -> Result<()> {
    write!(out, "dimension")?;
    for d in Dimension::ALL {
        write!(out, ",{d}")?;
    }
    writeln!(out)?;
    for row in Dimension::ALL {
        write!(out, "{row}")?;
        for col in Dimension::ALL {
            match matrix.get(row, col) {
                Some(r) => write!(out, ",{}", fmt_sig17(r))?,
                None => write!(out, ",NA")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
