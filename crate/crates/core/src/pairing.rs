//! Preference-pair construction from scored samples.
//!
//! For each prompt, samples are ranked by OmniScore and turned into
//! (winner, loser) pairs under one of four strategies. Only strictly ordered
//! pairs are ever emitted; equal scores never form a pair.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::Deserialize;

use crate::io::{ensure_finite, fmt_sig17, for_each_line, json_str, parse_json_line};
use crate::scores::ScoredSample;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub prompt_id: String,
    pub winner_id: String,
    pub loser_id: String,
    pub s_w: f64,
    pub s_l: f64,
    pub gap: f64,
}

impl PreferencePair {
    fn new(winner: &ScoredSample, loser: &ScoredSample) -> Self {
        PreferencePair {
            prompt_id: winner.prompt_id.clone(),
            winner_id: winner.video_id.clone(),
            loser_id: loser.video_id.clone(),
            s_w: winner.omniscore,
            s_l: loser.omniscore,
            gap: winner.omniscore - loser.omniscore,
        }
    }

    fn ids(&self) -> (&str, &str, &str) {
        (&self.winner_id, &self.loser_id, &self.prompt_id)
    }

    /// Canonical order: gap descending, then winner id, loser id, prompt id.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        other
            .gap
            .total_cmp(&self.gap)
            .then_with(|| self.ids().cmp(&other.ids()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PairingStrategy {
    /// Highest-scoring sample against the lowest-scoring one.
    #[default]
    BestVsWorst,
    /// Highest-scoring sample against every strictly lower sample.
    BestVsWorse,
    /// Every strictly higher sample against the lowest-scoring one.
    BetterVsWorst,
    /// Every ordered pair with a strictly higher winner.
    BetterVsWorse,
}

impl PairingStrategy {
    pub const ALL: [PairingStrategy; 4] = [
        PairingStrategy::BestVsWorst,
        PairingStrategy::BestVsWorse,
        PairingStrategy::BetterVsWorst,
        PairingStrategy::BetterVsWorse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PairingStrategy::BestVsWorst => "best_vs_worst",
            PairingStrategy::BestVsWorse => "best_vs_worse",
            PairingStrategy::BetterVsWorst => "better_vs_worst",
            PairingStrategy::BetterVsWorse => "better_vs_worse",
        }
    }
}

impl fmt::Display for PairingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PairingStrategy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown pairing strategy {s:?}")))
    }
}

// Ties on score resolve to the lexicographically smallest video id, for
// both the best and the worst sample.
fn best<'a>(group: &[&'a ScoredSample]) -> &'a ScoredSample {
    group
        .iter()
        .copied()
        .min_by(|a, b| {
            b.omniscore
                .total_cmp(&a.omniscore)
                .then_with(|| a.video_id.cmp(&b.video_id))
        })
        .expect("nonempty group")
}

fn worst<'a>(group: &[&'a ScoredSample]) -> &'a ScoredSample {
    group
        .iter()
        .copied()
        .min_by(|a, b| {
            a.omniscore
                .total_cmp(&b.omniscore)
                .then_with(|| a.video_id.cmp(&b.video_id))
        })
        .expect("nonempty group")
}

fn validate_group(group: &[&ScoredSample]) -> Result<()> {
    let first = group.first().ok_or(Error::Empty("pairing group"))?;
    let mut ids = HashSet::new();
    for s in group {
        if s.prompt_id != first.prompt_id {
            return Err(Error::MixedPrompts {
                expected: first.prompt_id.clone(),
                found: s.prompt_id.clone(),
            });
        }
        ensure_finite("omniscore", s.omniscore)?;
        if !ids.insert(s.video_id.as_str()) {
            return Err(Error::DuplicateRecord {
                prompt_id: s.prompt_id.clone(),
                video_id: s.video_id.clone(),
            });
        }
    }
    Ok(())
}

/// Builds the preference pairs of one prompt's samples under `strategy`,
/// in canonical order.
pub fn select_pairs(
    group: &[&ScoredSample],
    strategy: PairingStrategy,
) -> Result<Vec<PreferencePair>> {
    validate_group(group)?;
    let mut pairs = Vec::new();
    match strategy {
        PairingStrategy::BestVsWorst => {
            let (w, l) = (best(group), worst(group));
            if w.omniscore > l.omniscore {
                pairs.push(PreferencePair::new(w, l));
            }
        }
        PairingStrategy::BestVsWorse => {
            let w = best(group);
            pairs.extend(
                group
                    .iter()
                    .filter(|l| w.omniscore > l.omniscore)
                    .map(|l| PreferencePair::new(w, l)),
            );
        }
        PairingStrategy::BetterVsWorst => {
            let l = worst(group);
            pairs.extend(
                group
                    .iter()
                    .filter(|w| w.omniscore > l.omniscore)
                    .map(|w| PreferencePair::new(w, l)),
            );
        }
        PairingStrategy::BetterVsWorse => {
            for w in group {
                pairs.extend(
                    group
                        .iter()
                        .filter(|l| w.omniscore > l.omniscore)
                        .map(|l| PreferencePair::new(w, l)),
                );
            }
        }
    }
    pairs.sort_by(PreferencePair::canonical_cmp);
    Ok(pairs)
}

/// Drops the `floor(drop_ratio * len)` pairs with the smallest gap. Among
/// equal gaps the lexicographically smaller (winner, loser, prompt) ids go
/// first. The survivors are returned in canonical order.
pub fn filter_pairs(pairs: Vec<PreferencePair>, drop_ratio: f64) -> Result<Vec<PreferencePair>> {
    if !(0.0..1.0).contains(&drop_ratio) {
        return Err(Error::InvalidParameter(format!(
            "drop ratio must lie in [0, 1), got {drop_ratio}"
        )));
    }
    let drop = drop_count(pairs.len(), drop_ratio);
    let mut ascending = pairs;
    ascending.sort_by(|a, b| a.gap.total_cmp(&b.gap).then_with(|| a.ids().cmp(&b.ids())));
    let mut kept = ascending.split_off(drop);
    kept.sort_by(PreferencePair::canonical_cmp);
    Ok(kept)
}

pub fn drop_count(len: usize, drop_ratio: f64) -> usize {
    ((drop_ratio * len as f64).floor() as usize).min(len)
}

#[derive(Deserialize)]
pub(crate) struct PairLine {
    pub prompt_id: String,
    pub winner_id: String,
    pub loser_id: String,
    pub s_w: f64,
    pub s_l: f64,
    pub gap: f64,
    #[serde(default)]
    pub weight: Option<f64>,
}

impl PairLine {
    pub(crate) fn into_pair(self) -> Result<(PreferencePair, Option<f64>)> {
        let s_w = ensure_finite("s_w", self.s_w)?;
        let s_l = ensure_finite("s_l", self.s_l)?;
        let gap = ensure_finite("gap", self.gap)?;
        if s_w <= s_l || gap <= 0.0 {
            return Err(Error::Malformed(format!(
                "pair must satisfy s_w > s_l, got {s_w} vs {s_l}"
            )));
        }
        let weight = self
            .weight
            .map(|w| ensure_finite("weight", w))
            .transpose()?;
        let pair = PreferencePair {
            prompt_id: self.prompt_id,
            winner_id: self.winner_id,
            loser_id: self.loser_id,
            s_w,
            s_l,
            gap,
        };
        Ok((pair, weight))
    }
}

pub(crate) fn write_pair_fields<W: Write>(out: &mut W, p: &PreferencePair) -> Result<()> {
    write!(
        out,
        "{{\"prompt_id\":{},\"winner_id\":{},\"loser_id\":{},\"s_w\":{},\"s_l\":{},\"gap\":{}",
        json_str(&p.prompt_id),
        json_str(&p.winner_id),
        json_str(&p.loser_id),
        fmt_sig17(p.s_w),
        fmt_sig17(p.s_l),
        fmt_sig17(p.gap)
    )?;
    Ok(())
}

/// Writes one JSON object per pair, numbers with 17 significant digits.
pub fn write_pair_file<W: Write>(out: &mut W, pairs: &[PreferencePair]) -> Result<()> {
    for p in pairs {
        write_pair_fields(out, p)?;
        out.write_all(b"}\n")?;
    }
    Ok(())
}

pub fn parse_pair_file<R: BufRead>(source: R) -> Result<Vec<PreferencePair>> {
    let mut pairs = Vec::new();
    for_each_line(source, |_, line| {
        let (pair, _) = parse_json_line::<PairLine>(line)?.into_pair()?;
        pairs.push(pair);
        Ok(())
    })?;
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::PerDimension;
    use proptest::prelude::*;

    fn samples(prompt: &str, scores: &[f64]) -> Vec<ScoredSample> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoredSample {
                prompt_id: prompt.into(),
                video_id: format!("v{i}"),
                normalized: PerDimension::splat(s),
                omniscore: s,
            })
            .collect()
    }

    fn refs(v: &[ScoredSample]) -> Vec<&ScoredSample> {
        v.iter().collect()
    }

    fn pair(w: &str, l: &str, gap: f64) -> PreferencePair {
        PreferencePair {
            prompt_id: "p".into(),
            winner_id: w.into(),
            loser_id: l.into(),
            s_w: 0.5 + gap / 2.0,
            s_l: 0.5 - gap / 2.0,
            gap,
        }
    }

    #[test]
    fn best_vs_worst_single_pair() {
        let g = samples("p", &[0.9, 0.7, 0.5, 0.3]);
        let pairs = select_pairs(&refs(&g), PairingStrategy::BestVsWorst).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].s_w, pairs[0].s_l), (0.9, 0.3));
        assert_eq!(
            (pairs[0].winner_id.as_str(), pairs[0].loser_id.as_str()),
            ("v0", "v3")
        );
    }

    #[test]
    fn strategy_counts() {
        let g = samples("p", &[0.9, 0.7, 0.5, 0.3]);
        let count = |s| select_pairs(&refs(&g), s).unwrap().len();
        assert_eq!(count(PairingStrategy::BetterVsWorse), 6);
        assert_eq!(count(PairingStrategy::BestVsWorse), 3);
        assert_eq!(count(PairingStrategy::BetterVsWorst), 3);
    }

    #[test]
    fn ties_never_pair() {
        let g = samples("p", &[0.4, 0.4, 0.4]);
        for s in PairingStrategy::ALL {
            assert!(select_pairs(&refs(&g), s).unwrap().is_empty());
        }
    }

    #[test]
    fn argmax_tie_breaks_by_video_id() {
        let mut g = samples("p", &[0.8, 0.2, 0.8, 0.2]);
        g[0].video_id = "zz".into();
        let pairs = select_pairs(&refs(&g), PairingStrategy::BestVsWorst).unwrap();
        assert_eq!(pairs[0].winner_id, "v2");
        assert_eq!(pairs[0].loser_id, "v1");
        let pairs = select_pairs(&refs(&g), PairingStrategy::BestVsWorse).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(pairs.iter().all(|p| p.winner_id == "v2"));
    }

    #[test]
    fn canonical_order() {
        let g = samples("p", &[0.9, 0.7, 0.5, 0.3]);
        let pairs = select_pairs(&refs(&g), PairingStrategy::BetterVsWorse).unwrap();
        for w in pairs.windows(2) {
            assert_ne!(w[0].canonical_cmp(&w[1]), Ordering::Greater);
        }
        assert_eq!((pairs[0].s_w, pairs[0].s_l), (0.9, 0.3));
    }

    #[test]
    fn mixed_prompts_and_empty_rejected() {
        let mut g = samples("p", &[0.9, 0.1]);
        g[1].prompt_id = "q".into();
        assert!(matches!(
            select_pairs(&refs(&g), PairingStrategy::BestVsWorst),
            Err(Error::MixedPrompts { .. })
        ));
        assert!(select_pairs(&[], PairingStrategy::BestVsWorst).is_err());
    }

    #[test]
    fn filter_examples() {
        let pairs = vec![
            pair("a", "b", 0.1),
            pair("c", "d", 0.5),
            pair("e", "f", 0.2),
            pair("g", "h", 0.3),
        ];
        let gaps = |ps: &[PreferencePair]| ps.iter().map(|p| p.gap).collect::<Vec<_>>();

        let unchanged = filter_pairs(pairs.clone(), 0.0).unwrap();
        assert_eq!(gaps(&unchanged), [0.5, 0.3, 0.2, 0.1]);
        assert_eq!(gaps(&filter_pairs(pairs.clone(), 0.5).unwrap()), [0.5, 0.3]);
        assert_eq!(gaps(&filter_pairs(pairs.clone(), 0.75).unwrap()), [0.5]);
        assert!(filter_pairs(pairs.clone(), 1.0).is_err());
        assert!(filter_pairs(pairs, -0.1).is_err());
    }

    #[test]
    fn filter_tie_drops_smaller_ids_first() {
        let pairs = vec![
            pair("b", "x", 0.2),
            pair("a", "x", 0.2),
            pair("c", "x", 0.4),
        ];
        let kept = filter_pairs(pairs, 0.5).unwrap();
        let winners: Vec<_> = kept.iter().map(|p| p.winner_id.as_str()).collect();
        assert_eq!(winners, ["c", "b"]);
    }

    #[test]
    fn pair_file_round_trip() {
        let pairs = vec![pair("a", "b", 0.1), pair("c\"q", "d", 0.37)];
        let mut buf = Vec::new();
        write_pair_file(&mut buf, &pairs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"prompt_id\":\"p\",\"winner_id\":\"a\",\"loser_id\":\"b\",\"s_w\":0.55000000000000004,"), "{text}");
        assert_eq!(parse_pair_file(buf.as_slice()).unwrap(), pairs);
    }

    #[test]
    fn pair_file_rejects_inverted_pair() {
        let line =
            r#"{"prompt_id":"p","winner_id":"a","loser_id":"b","s_w":0.2,"s_l":0.4,"gap":-0.2}"#;
        assert!(parse_pair_file(line.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn emitted_pairs_are_strict_and_permutation_invariant(
            scores in proptest::collection::vec((0u8..6).prop_map(|k| f64::from(k) / 5.0), 1..9),
            seed in any::<u64>(),
        ) {
            let g = samples("p", &scores);
            let mut shuffled = g.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut crate::rng::seeded(seed));
            for s in PairingStrategy::ALL {
                let a = select_pairs(&refs(&g), s).unwrap();
                let b = select_pairs(&refs(&shuffled), s).unwrap();
                prop_assert!(a.iter().all(|p| p.s_w > p.s_l && p.gap > 0.0));
                prop_assert_eq!(&a, &b);
            }
        }

        #[test]
        fn filter_output_size(n in 0usize..40, ratio in 0.0f64..0.999) {
            let pairs: Vec<_> = (0..n).map(|i| pair(&format!("w{i}"), "l", 0.01 + (i % 7) as f64 / 10.0)).collect();
            let kept = filter_pairs(pairs.clone(), ratio).unwrap();
            prop_assert_eq!(kept.len(), n - (ratio * n as f64).floor() as usize);
            let min_kept = kept.iter().map(|p| p.gap).fold(f64::INFINITY, f64::min);
            let dropped = pairs.iter().filter(|p| !kept.contains(p));
            for p in dropped {
                prop_assert!(p.gap <= min_kept);
            }
        }
    }
}
