//! Dataset analyses over scored samples: dimension correlations and the
//! growth of the best-minus-worst OmniScore gap with the number of samples
//! per prompt.

use std::collections::BTreeMap;

use itertools::Itertools;
use rand::seq::SliceRandom;

use super::{Dimension, ScoredSample};
use crate::rng;
use crate::{Error, Result};

const D: usize = Dimension::COUNT;

/// Pearson correlations between the normalised dimensions. `None` marks
/// an entry that is undefined because a dimension has zero variance.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    entries: [[Option<f64>; D]; D],
}

impl CorrelationMatrix {
    pub fn get(&self, row: Dimension, col: Dimension) -> Option<f64> {
        self.entries[row.index()][col.index()]
    }
}

/// Running means and co-moments, updated one sample at a time.
#[derive(Debug, Clone)]
struct CoMoments {
    n: usize,
    mean: [f64; D],
    comoment: [[f64; D]; D],
}

#[allow(clippy::needless_range_loop)]
impl CoMoments {
    fn new() -> Self {
        CoMoments {
            n: 0,
            mean: [0.0; D],
            comoment: [[0.0; D]; D],
        }
    }

    fn push(&mut self, x: &[f64; D]) {
        self.n += 1;
        let n = self.n as f64;
        let mut before = [0.0; D];
        for i in 0..D {
            before[i] = x[i] - self.mean[i];
            self.mean[i] += before[i] / n;
        }
        for i in 0..D {
            for j in i..D {
                self.comoment[i][j] += before[i] * (x[j] - self.mean[j]);
            }
        }
    }

    fn correlation(&self) -> CorrelationMatrix {
        let mut entries = [[None; D]; D];
        for i in 0..D {
            for j in i..D {
                let (vi, vj) = (self.comoment[i][i], self.comoment[j][j]);
                if vi > 0.0 && vj > 0.0 {
                    let r = if i == j {
                        1.0
                    } else {
                        (self.comoment[i][j] / (vi.sqrt() * vj.sqrt())).clamp(-1.0, 1.0)
                    };
                    entries[i][j] = Some(r);
                    entries[j][i] = Some(r);
                }
            }
        }
        CorrelationMatrix { entries }
    }
}

/// Pearson correlation matrix of the normalised dimension scores, computed
/// in a single streaming pass.
pub fn correlation_matrix(samples: &[ScoredSample]) -> Result<CorrelationMatrix> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "correlation needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let mut acc = CoMoments::new();
    for s in samples {
        acc.push(&s.normalized.0);
    }
    Ok(acc.correlation())
}

/// How subsets of size `n` are drawn from each prompt's samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapSampling {
    /// Average over every size-`n` subset.
    Exhaustive,
    /// `draws` random orderings per prompt; the size-`n` subset is the
    /// first `n` elements, so subsets are nested across `n`.
    Nested { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapRow {
    pub n: usize,
    pub mean_gap: f64,
}

const MAX_EXHAUSTIVE_SUBSETS: usize = 1 << 20;

fn range_of(values: impl IntoIterator<Item = f64>) -> f64 {
    let (lo, hi) = values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    hi - lo
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Mean `max - min` OmniScore over size-`n` subsets of each prompt's
/// samples, averaged over prompts, for every requested `n`.
pub fn gap_vs_n(
    groups: &BTreeMap<String, Vec<f64>>,
    n_values: &[usize],
    sampling: GapSampling,
) -> Result<Vec<GapRow>> {
    if groups.is_empty() {
        return Err(Error::Empty("no prompt groups"));
    }
    let max_n = n_values.iter().copied().max().unwrap_or(0);
    if n_values.contains(&0) {
        return Err(Error::InvalidParameter(
            "subset size n must be at least 1".into(),
        ));
    }
    for (prompt_id, scores) in groups {
        if scores.len() < max_n {
            return Err(Error::GroupTooSmall {
                prompt_id: prompt_id.clone(),
                size: scores.len(),
                requested: max_n,
            });
        }
    }

    let mut sums = vec![0.0; n_values.len()];
    let mut count = 0usize;
    match sampling {
        GapSampling::Exhaustive => {
            for scores in groups.values() {
                for (slot, &n) in sums.iter_mut().zip(n_values) {
                    if binomial(scores.len(), n) > MAX_EXHAUSTIVE_SUBSETS {
                        return Err(Error::InvalidParameter(format!(
                            "C({}, {n}) subsets is too many for exhaustive enumeration",
                            scores.len()
                        )));
                    }
                    let (total, subsets) = scores
                        .iter()
                        .copied()
                        .combinations(n)
                        .fold((0.0, 0usize), |(t, c), subset| {
                            (t + range_of(subset), c + 1)
                        });
                    *slot += total / subsets as f64;
                }
                count += 1;
            }
        }
        GapSampling::Nested { draws, seed } => {
            if draws == 0 {
                return Err(Error::InvalidParameter("draws must be at least 1".into()));
            }
            for (prompt_id, scores) in groups {
                for draw in 0..draws {
                    let mut rng =
                        rng::seeded(rng::derive(seed, [rng::hash_str(prompt_id), draw as u64]));
                    let mut order = scores.clone();
                    order.shuffle(&mut rng);
                    for (slot, &n) in sums.iter_mut().zip(n_values) {
                        *slot += range_of(order[..n].iter().copied());
                    }
                    count += 1;
                }
            }
        }
    }
    Ok(n_values
        .iter()
        .zip(sums)
        .map(|(&n, sum)| GapRow {
            n,
            mean_gap: sum / count as f64,
        })
        .collect())
}

/// OmniScores grouped by prompt id.
pub fn omniscore_groups(samples: &[ScoredSample]) -> BTreeMap<String, Vec<f64>> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in samples {
        groups
            .entry(s.prompt_id.clone())
            .or_default()
            .push(s.omniscore);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::PerDimension;
    use rand::Rng;

    fn sample(values: [f64; D]) -> ScoredSample {
        ScoredSample {
            prompt_id: "p".into(),
            video_id: "v".into(),
            normalized: PerDimension(values),
            omniscore: 0.0,
        }
    }

    /// Textbook two-pass Pearson coefficient.
    fn pearson_two_pass(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va.sqrt() * vb.sqrt())
    }

    fn random_samples(n: usize, seed: u64) -> Vec<ScoredSample> {
        let mut rng = rng::seeded(seed);
        (0..n)
            .map(|_| {
                let base: f64 = rng.random();
                sample(std::array::from_fn(|i| {
                    let noise: f64 = rng.random();
                    (base * (i as f64 / 6.0) + noise * (1.0 - i as f64 / 6.0)).clamp(0.0, 1.0)
                }))
            })
            .collect()
    }

    #[test]
    fn self_correlation_is_one_and_matrix_symmetric() {
        let m = correlation_matrix(&random_samples(200, 3)).unwrap();
        for a in Dimension::ALL {
            assert_eq!(m.get(a, a), Some(1.0));
            for b in Dimension::ALL {
                assert_eq!(m.get(a, b), m.get(b, a));
                let r = m.get(a, b).unwrap();
                assert!((-1.0..=1.0).contains(&r));
            }
        }
    }

    #[test]
    fn anti_correlated_dimension() {
        let mut rng = rng::seeded(11);
        let samples: Vec<_> = (0..50)
            .map(|_| {
                let a: f64 = rng.random();
                let mut v: [f64; D] = std::array::from_fn(|_| rng.random());
                v[0] = a;
                v[1] = 1.0 - a;
                sample(v)
            })
            .collect();
        let m = correlation_matrix(&samples).unwrap();
        let r = m
            .get(Dimension::MotionSmoothness, Dimension::TemporalFlickering)
            .unwrap();
        assert!((r + 1.0).abs() < 1e-12, "{r}");
    }

    #[test]
    fn independent_dimensions_are_uncorrelated() {
        let mut rng = rng::seeded(2024);
        let samples: Vec<_> = (0..10_000)
            .map(|_| sample(std::array::from_fn(|_| rng.random())))
            .collect();
        let m = correlation_matrix(&samples).unwrap();
        let a: Vec<f64> = samples.iter().map(|s| s.normalized.0[0]).collect();
        let b: Vec<f64> = samples.iter().map(|s| s.normalized.0[1]).collect();
        let oracle = pearson_two_pass(&a, &b);
        assert!(oracle.abs() < 0.05, "{oracle}");
        let r = m
            .get(Dimension::MotionSmoothness, Dimension::TemporalFlickering)
            .unwrap();
        assert!((r - oracle).abs() < 1e-10);
    }

    #[test]
    fn streaming_matches_two_pass() {
        for seed in 0..5 {
            let samples = random_samples(500, seed);
            let m = correlation_matrix(&samples).unwrap();
            for a in Dimension::ALL {
                for b in Dimension::ALL {
                    let xa: Vec<f64> = samples.iter().map(|s| s.normalized[a]).collect();
                    let xb: Vec<f64> = samples.iter().map(|s| s.normalized[b]).collect();
                    let oracle = pearson_two_pass(&xa, &xb);
                    assert!((m.get(a, b).unwrap() - oracle).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_variance_is_undefined() {
        let mut rng = rng::seeded(5);
        let samples: Vec<_> = (0..20)
            .map(|_| {
                let mut v: [f64; D] = std::array::from_fn(|_| rng.random());
                v[Dimension::DynamicDegree.index()] = 0.25;
                sample(v)
            })
            .collect();
        let m = correlation_matrix(&samples).unwrap();
        for d in Dimension::ALL {
            assert_eq!(m.get(Dimension::DynamicDegree, d), None);
        }
        assert!(m
            .get(Dimension::ImagingQuality, Dimension::AestheticQuality)
            .is_some());
    }

    #[test]
    fn too_few_samples() {
        assert!(correlation_matrix(&random_samples(1, 0)).is_err());
    }

    fn one_group(scores: &[f64]) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([("p".to_string(), scores.to_vec())])
    }

    #[test]
    fn exhaustive_pairs_mean_gap() {
        // gaps of all six pairs: 0.2, 0.4, 0.6, 0.2, 0.4, 0.2
        let oracle = (0.2 + 0.4 + 0.6 + 0.2 + 0.4 + 0.2) / 6.0;
        let rows = gap_vs_n(
            &one_group(&[0.2, 0.4, 0.6, 0.8]),
            &[1, 2, 4],
            GapSampling::Exhaustive,
        )
        .unwrap();
        assert_eq!(rows[0].mean_gap, 0.0);
        assert!((rows[1].mean_gap - oracle).abs() < 1e-12);
        assert!((rows[1].mean_gap - 1.0 / 3.0).abs() < 1e-12);
        assert!((rows[2].mean_gap - 0.6).abs() < 1e-12);
    }

    #[test]
    fn nested_extremes() {
        let mut groups = one_group(&[0.3, 0.9, 0.1, 0.5]);
        groups.insert("q".into(), vec![0.5, 0.55, 0.45, 0.6]);
        let rows = gap_vs_n(&groups, &[1, 4], GapSampling::Nested { draws: 8, seed: 1 }).unwrap();
        assert_eq!(rows[0].mean_gap, 0.0);
        let full = ((0.9 - 0.1) + (0.6 - 0.45)) / 2.0;
        assert!((rows[1].mean_gap - full).abs() < 1e-12);
    }

    #[test]
    fn nested_gap_is_nondecreasing() {
        let mut rng = rng::seeded(9);
        let groups: BTreeMap<String, Vec<f64>> = (0..30)
            .map(|k| (format!("p{k}"), (0..8).map(|_| rng.random()).collect()))
            .collect();
        let ns: Vec<usize> = (1..=8).collect();
        for sampling in [
            GapSampling::Nested { draws: 3, seed: 4 },
            GapSampling::Exhaustive,
        ] {
            let rows = gap_vs_n(&groups, &ns, sampling).unwrap();
            for w in rows.windows(2) {
                assert!(w[0].mean_gap <= w[1].mean_gap, "{sampling:?}: {w:?}");
            }
        }
    }

    #[test]
    fn group_too_small() {
        let err = gap_vs_n(&one_group(&[0.1, 0.2]), &[3], GapSampling::Exhaustive).unwrap_err();
        assert!(matches!(
            err,
            Error::GroupTooSmall {
                size: 2,
                requested: 3,
                ..
            }
        ));
        assert!(gap_vs_n(&one_group(&[0.1]), &[0], GapSampling::Exhaustive).is_err());
    }
}
