//! Per-dimension score normalisation and OmniScore aggregation.
//!
//! Raw scorer outputs are mapped into `[0, 1]` per dimension with a
//! min/max table, then combined into a single OmniScore as a weighted
//! average. With the default weights the six quality dimensions count four
//! times as much as semantic alignment, for a total weight of 25.

mod analysis;
mod dimension;
mod file;

use std::collections::BTreeMap;

pub use analysis::{
    correlation_matrix, gap_vs_n, omniscore_groups, CorrelationMatrix, GapRow, GapSampling,
};
pub use dimension::{Dimension, PerDimension};
pub use file::{
    parse_score_file, parse_scored_file, write_correlation_csv, write_score_file, write_scored_file,
};

use crate::{Error, Result};

/// One video's raw, un-normalised scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScoreRecord {
    pub prompt_id: String,
    pub video_id: String,
    pub raw: PerDimension<f64>,
}

/// Closed interval `[min, max]` a raw score is rescaled from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRange {
    pub min: f64,
    pub max: f64,
}

impl ScoreRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        let range = ScoreRange { min, max };
        range.validate()?;
        Ok(range)
    }

    fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::InvalidConfig(format!(
                "normalization range requires finite min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Per-dimension rescaling ranges. Dimensions without an entry are taken to
/// already lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationTable {
    pub ranges: PerDimension<Option<ScoreRange>>,
}

impl Default for NormalizationTable {
    fn default() -> Self {
        let mut ranges = PerDimension::splat(None);
        ranges[Dimension::SubjectConsistency] = Some(ScoreRange {
            min: 0.1462,
            max: 1.0,
        });
        ranges[Dimension::TemporalFlickering] = Some(ScoreRange {
            min: 0.6293,
            max: 1.0,
        });
        ranges[Dimension::MotionSmoothness] = Some(ScoreRange {
            min: 0.706,
            max: 0.9975,
        });
        ranges[Dimension::SemanticAlignment] = Some(ScoreRange {
            min: 0.0,
            max: 0.364,
        });
        NormalizationTable { ranges }
    }
}

impl NormalizationTable {
    pub fn validate(&self) -> Result<()> {
        self.ranges
            .0
            .iter()
            .flatten()
            .try_for_each(ScoreRange::validate)
    }
}

/// Rescales a raw score into `[0, 1]`, clamping values outside the
/// configured range.
pub fn normalize(raw: f64, dim: Dimension, table: &NormalizationTable) -> f64 {
    let scaled = match table.ranges[dim] {
        Some(ScoreRange { min, max }) => (raw - min) / (max - min),
        None => raw,
    };
    scaled.clamp(0.0, 1.0)
}

/// Aggregation weights plus the normalisation table they apply to.
#[derive(Debug, Clone, PartialEq)]
pub struct OmniScoreConfig {
    pub weights: PerDimension<f64>,
    pub normalization: NormalizationTable,
}

impl Default for OmniScoreConfig {
    fn default() -> Self {
        let weights = PerDimension::from_fn(|d| if d.is_quality() { 4.0 } else { 1.0 });
        OmniScoreConfig {
            weights,
            normalization: NormalizationTable::default(),
        }
    }
}

impl OmniScoreConfig {
    pub fn validate(&self) -> Result<()> {
        for (d, w) in self.weights.iter() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "weight for {d} must be finite and nonnegative, got {w}"
                )));
            }
        }
        if self.total_weight() <= 0.0 {
            return Err(Error::InvalidConfig("weights must not all be zero".into()));
        }
        self.normalization.validate()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.0.iter().sum()
    }

    /// Applies `key=value` overrides on top of the defaults.
    ///
    /// Recognised keys are `weight.<dimension>`, `min.<dimension>` and
    /// `max.<dimension>`. Blank lines and lines starting with `#` are
    /// ignored. A dimension without a default range needs both `min` and
    /// `max`.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut config = OmniScoreConfig::default();
        let mut mins: BTreeMap<Dimension, f64> = BTreeMap::new();
        let mut maxs: BTreeMap<Dimension, f64> = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parse = || -> Result<()> {
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::InvalidConfig(format!("expected key=value, got {line:?}"))
                })?;
                let (key, value) = (key.trim(), value.trim());
                let value: f64 = value
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("{key}: not a number: {value:?}")))?;
                let (kind, dim) = key
                    .split_once('.')
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown key {key:?}")))?;
                let dim: Dimension = dim.parse()?;
                match kind {
                    "weight" => config.weights[dim] = value,
                    "min" => {
                        mins.insert(dim, value);
                    }
                    "max" => {
                        maxs.insert(dim, value);
                    }
                    _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
                }
                Ok(())
            };
            parse().map_err(|e| e.at_line(idx + 1))?;
        }
        for d in Dimension::ALL {
            let (min, max) = (mins.get(&d).copied(), maxs.get(&d).copied());
            if min.is_none() && max.is_none() {
                continue;
            }
            let base = config.normalization.ranges[d];
            let range = match (min.or(base.map(|r| r.min)), max.or(base.map(|r| r.max))) {
                (Some(min), Some(max)) => ScoreRange { min, max },
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "{d} has no default range; both min.{d} and max.{d} are required"
                    )))
                }
            };
            config.normalization.ranges[d] = Some(range);
        }
        config.validate()?;
        Ok(config)
    }
}

/// Weighted average of normalised dimension scores.
pub fn omniscore(normalized: &PerDimension<f64>, config: &OmniScoreConfig) -> f64 {
    let weighted: f64 = normalized
        .0
        .iter()
        .zip(config.weights.0.iter())
        .map(|(x, w)| x * w)
        .sum();
    weighted / config.total_weight()
}

/// A video with its normalised dimension scores and OmniScore.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub prompt_id: String,
    pub video_id: String,
    pub normalized: PerDimension<f64>,
    pub omniscore: f64,
}

impl ScoredSample {
    pub fn from_raw(record: &RawScoreRecord, config: &OmniScoreConfig) -> Self {
        let normalized =
            PerDimension::from_fn(|d| normalize(record.raw[d], d, &config.normalization));
        ScoredSample {
            prompt_id: record.prompt_id.clone(),
            video_id: record.video_id.clone(),
            omniscore: omniscore(&normalized, config),
            normalized,
        }
    }
}

pub fn score_records(
    records: &[RawScoreRecord],
    config: &OmniScoreConfig,
) -> Result<Vec<ScoredSample>> {
    config.validate()?;
    Ok(records
        .iter()
        .map(|r| ScoredSample::from_raw(r, config))
        .collect())
}

/// Groups samples by prompt, ordered by prompt id. Input order is kept
/// within each group.
pub fn group_by_prompt(samples: &[ScoredSample]) -> BTreeMap<&str, Vec<&ScoredSample>> {
    let mut groups: BTreeMap<&str, Vec<&ScoredSample>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.prompt_id.as_str()).or_default().push(s);
    }
    groups
}
