//! OmniScore histogram and per-pair re-weighting.
//!
//! Every scored sample (not only the ones that end up in pairs) goes into a
//! fixed-width frequency histogram. A pair's probability is the geometric
//! mean of its two members' bin frequencies, and its training weight is
//! `(beta / prob) ^ alpha`, so pairs built from rare scores weigh more.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::io::{fmt_sig17, for_each_line, parse_json_line};
use crate::pairing::{write_pair_fields, PairLine, PreferencePair};
use crate::{Error, Result};

pub const DEFAULT_BIN_WIDTH: f64 = 0.01;

/// Fixed-width frequency table over `[origin, origin + num_bins * width)`.
/// The top bin is closed so that a score of exactly 1.0 lands in it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistogram {
    bin_width: f64,
    origin: f64,
    num_bins: usize,
    frequencies: BTreeMap<usize, f64>,
}

impl ScoreHistogram {
    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    /// Number of bins spanning `[0, 1]`.
    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Frequencies of the nonempty bins, keyed by bin index.
    pub fn frequencies(&self) -> &BTreeMap<usize, f64> {
        &self.frequencies
    }

    pub fn bin_lower(&self, bin: usize) -> f64 {
        self.origin + bin as f64 * self.bin_width
    }

    pub fn bin_upper(&self, bin: usize) -> f64 {
        self.bin_lower(bin + 1)
    }

    pub fn bin_index(&self, score: f64) -> Result<usize> {
        bin_index(score, self.origin, self.bin_width, self.num_bins)
    }

    /// Frequency of the bin containing `score` (zero for an empty bin).
    pub fn frequency(&self, score: f64) -> Result<f64> {
        let bin = self.bin_index(score)?;
        Ok(self.frequencies.get(&bin).copied().unwrap_or(0.0))
    }

    pub fn max_frequency(&self) -> f64 {
        self.frequencies.values().copied().fold(0.0, f64::max)
    }

    /// CSV export: one `bin_lower,bin_upper,frequency` row per bin,
    /// including empty bins.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "bin_lower,bin_upper,frequency")?;
        for bin in 0..self.num_bins {
            let freq = self.frequencies.get(&bin).copied().unwrap_or(0.0);
            writeln!(
                out,
                "{},{},{}",
                fmt_sig17(self.bin_lower(bin)),
                fmt_sig17(self.bin_upper(bin)),
                fmt_sig17(freq)
            )?;
        }
        Ok(())
    }
}

fn bin_index(score: f64, origin: f64, width: f64, num_bins: usize) -> Result<usize> {
    if !(score.is_finite() && (0.0..=1.0).contains(&score)) {
        return Err(Error::InvalidParameter(format!(
            "score {score} outside [0, 1]"
        )));
    }
    let lower = |b: usize| origin + b as f64 * width;
    let top = num_bins - 1;
    let mut bin = (((score - origin) / width).floor().max(0.0) as usize).min(top);
    // Division rounding can land one bin off; settle against the exported
    // bin edges so that lower(bin) <= score < lower(bin + 1).
    if bin < top && score >= lower(bin + 1) {
        bin += 1;
    } else if bin > 0 && score < lower(bin) {
        bin -= 1;
    }
    Ok(bin)
}

/// Histogram of `scores` with the given bin width, origin 0.
pub fn build_histogram(scores: &[f64], bin_width: f64) -> Result<ScoreHistogram> {
    if scores.is_empty() {
        return Err(Error::Empty("histogram scores"));
    }
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    let origin = 0.0;
    // Tolerance keeps e.g. 1/0.01 = 100.00000000000001 at 100 bins.
    let num_bins = ((1.0 - origin) / bin_width - 1e-9).ceil().max(1.0) as usize;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &s in scores {
        *counts
            .entry(bin_index(s, origin, bin_width, num_bins)?)
            .or_default() += 1;
    }
    let total = scores.len() as f64;
    let frequencies = counts
        .into_iter()
        .map(|(bin, count)| (bin, count as f64 / total))
        .collect();
    Ok(ScoreHistogram {
        bin_width,
        origin,
        num_bins,
        frequencies,
    })
}

/// Geometric mean of the bin frequencies of the winner and loser scores.
pub fn pair_probability(hist: &ScoreHistogram, s_w: f64, s_l: f64) -> Result<f64> {
    let p = |s: f64| -> Result<f64> {
        match hist.frequency(s)? {
            f if f > 0.0 => Ok(f),
            _ => Err(Error::EmptyBin(s)),
        }
    };
    Ok((p(s_w)? * p(s_l)?).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    Constant(f64),
    /// Frequency of the most populated histogram bin.
    MaxBinFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReweightConfig {
    pub alpha: f64,
    pub beta: BetaMode,
}

impl Default for ReweightConfig {
    fn default() -> Self {
        ReweightConfig {
            alpha: 0.72,
            beta: BetaMode::Constant(1.0),
        }
    }
}

impl ReweightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if let BetaMode::Constant(b) = self.beta {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "beta must be > 0, got {b}"
                )));
            }
        }
        Ok(())
    }

    pub fn resolve_beta(&self, hist: &ScoreHistogram) -> f64 {
        match self.beta {
            BetaMode::Constant(b) => b,
            BetaMode::MaxBinFrequency => hist.max_frequency(),
        }
    }
}

/// `(beta / prob) ^ alpha`.
pub fn pair_weight(prob: f64, config: &ReweightConfig, hist: &ScoreHistogram) -> Result<f64> {
    config.validate()?;
    if !(prob.is_finite() && prob > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "pair probability must be > 0, got {prob}"
        )));
    }
    Ok((config.resolve_beta(hist) / prob).powf(config.alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPair {
    pub pair: PreferencePair,
    pub weight: f64,
}

/// Attaches a training weight to every pair.
pub fn weight_pairs(
    pairs: &[PreferencePair],
    hist: &ScoreHistogram,
    config: &ReweightConfig,
) -> Result<Vec<WeightedPair>> {
    pairs
        .iter()
        .map(|pair| {
            let prob = pair_probability(hist, pair.s_w, pair.s_l)?;
            Ok(WeightedPair {
                pair: pair.clone(),
                weight: pair_weight(prob, config, hist)?,
            })
        })
        .collect()
}

/// Pair file format plus a `weight` field.
pub fn write_weighted_pair_file<W: Write>(out: &mut W, pairs: &[WeightedPair]) -> Result<()> {
    for wp in pairs {
        write_pair_fields(out, &wp.pair)?;
        writeln!(out, ",\"weight\":{}}}", fmt_sig17(wp.weight))?;
    }
    Ok(())
}

pub fn parse_weighted_pair_file<R: BufRead>(source: R) -> Result<Vec<WeightedPair>> {
    let mut pairs = Vec::new();
    for_each_line(source, |_, line| {
        let (pair, weight) = parse_json_line::<PairLine>(line)?.into_pair()?;
        let weight = weight.ok_or_else(|| Error::Malformed("missing field `weight`".into()))?;
        if weight <= 0.0 {
            return Err(Error::Malformed(format!(
                "weight must be positive, got {weight}"
            )));
        }
        pairs.push(WeightedPair { pair, weight });
        Ok(())
    })?;
    Ok(pairs)
}
