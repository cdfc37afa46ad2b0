//! Per-pair delay peak extraction and the consistency-constrained search
//! over delay-set combinations.
//!
//! With `N` microphones there are `N*(N-1)/2` pair correlations but only
//! `N-1` independent delays; this module works with the delays against
//! microphone 0 and treats every other pair delay as derived:
//! `dt[i][j] = dt[0][j] - dt[0][i]`. The strongest correlation peak of a
//! pair is not always the true delay, so up to `M` candidate peaks are kept
//! per pair and the search looks for the combination whose derived delays
//! all agree with peaks actually observed in the corresponding pair
//! correlations. Among consistent combinations the one with the greatest
//! summed peak value wins. The redundancy (21 cross-checks for 8
//! microphones) makes an accidental match on noise very unlikely.

use alloc::vec;
use alloc::vec::Vec;

use crate::spectral::CrossCorrelation;

/// Default number of candidate peaks kept per pair correlation.
pub const DEFAULT_PEAKS_PER_PAIR: usize = 8;
/// Default agreement tolerance for derived delays, in samples. True delays
/// are fractional, so two independently rounded measurements can differ by
/// one sample.
pub const DEFAULT_CONSISTENCY_TOL: i64 = 1;
/// Default minimum lag distance between returned peaks.
pub const DEFAULT_MIN_SEPARATION: i64 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TdoaError {
    ZeroPeakCount,
    /// Primary peak lists must cover pairs (0, 1) .. (0, n-1) in order.
    MismatchedPairs {
        index: usize,
        found: (usize, usize),
    },
    NoPrimaryPairs,
    IndexOutOfRange {
        i: usize,
        j: usize,
        mics: usize,
    },
}

impl core::fmt::Display for TdoaError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::ZeroPeakCount => write!(f, "peak count must be at least 1"),
            Self::MismatchedPairs { index, found } => write!(
                f,
                "peak list {index} covers pair ({}, {}), expected (0, {})",
                found.0,
                found.1,
                index + 1
            ),
            Self::NoPrimaryPairs => write!(f, "need at least one primary pair"),
            Self::IndexOutOfRange { i, j, mics } => {
                write!(
                    f,
                    "dependent pair ({i}, {j}) invalid for {mics} microphones"
                )
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TdoaError {}

/// One candidate delay: a correlation lag and its value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub lag: i64,
    pub value: f64,
}

/// Up to `M` candidate peaks for one microphone pair, strongest first.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakList {
    pub pair: (usize, usize),
    peaks: Vec<Peak>,
}

impl PeakList {
    /// Builds a list from arbitrary peaks, sorting strongest-first
    /// (ties broken by ascending lag).
    pub fn new(pair: (usize, usize), mut peaks: Vec<Peak>) -> Self {
        peaks.sort_unstable_by(|a, b| b.value.total_cmp(&a.value).then_with(|| a.lag.cmp(&b.lag)));
        Self { pair, peaks }
    }

    pub fn peaks(&self) -> &[Peak] {
        &self.peaks
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    /// True if some peak lies within `tol` samples of `lag`.
    pub fn matches_within(&self, lag: i64, tol: i64) -> bool {
        self.peaks.iter().any(|p| (p.lag - lag).abs() <= tol)
    }
}

/// A consistent set of delays against microphone 0, in samples:
/// `delays[k]` is the delay of pair `(0, k+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaSet {
    pub delays: Vec<i64>,
    /// Sum of the selected peak values.
    pub score: f64,
    pub frame_index: u64,
}

impl TdoaSet {
    /// Number of microphones the set spans.
    pub fn mics(&self) -> usize {
        self.delays.len() + 1
    }
}

/// Derived delay between microphones `i` and `j` (0-based, both nonzero):
/// `dt[i][j] = dt[0][j] - dt[0][i]`.
pub fn dependent_delay(set: &TdoaSet, i: usize, j: usize) -> Result<i64, TdoaError> {
    let mics = set.mics();
    if i == 0 || j == 0 || i >= j || j >= mics {
        return Err(TdoaError::IndexOutOfRange { i, j, mics });
    }
    Ok(set.delays[j - 1] - set.delays[i - 1])
}

/// Extracts up to `max_peaks` local maxima from a correlation, strongest
/// first, each at least `min_separation` lags away from any stronger
/// returned peak. Only strictly positive values qualify.
pub fn extract_peaks(
    corr: &CrossCorrelation,
    max_peaks: usize,
    min_separation: i64,
) -> Result<PeakList, TdoaError> {
    if max_peaks == 0 {
        return Err(TdoaError::ZeroPeakCount);
    }
    let values = corr.values();
    let mut candidates: Vec<Peak> = Vec::new();
    for (idx, &v) in values.iter().enumerate() {
        if v <= 0.0 {
            continue;
        }
        let left_ok = idx == 0 || values[idx - 1] <= v;
        let right_ok = idx + 1 == values.len() || values[idx + 1] <= v;
        if left_ok && right_ok {
            candidates.push(Peak {
                lag: idx as i64 - corr.max_lag(),
                value: v,
            });
        }
    }
    candidates.sort_unstable_by(|a, b| b.value.total_cmp(&a.value).then_with(|| a.lag.cmp(&b.lag)));

    let mut selected: Vec<Peak> = Vec::with_capacity(max_peaks);
    for cand in candidates {
        if selected.len() == max_peaks {
            break;
        }
        if selected
            .iter()
            .all(|p| (p.lag - cand.lag).abs() >= min_separation)
        {
            selected.push(cand);
        }
    }
    Ok(PeakList {
        pair: corr.pair,
        peaks: selected,
    })
}

/// Searches every combination of primary-pair peaks for the best-scoring
/// one whose derived delays all agree with observed peaks.
///
/// `primary[k]` must hold the peaks of pair `(0, k+1)`. For every derived
/// pair the search asks `dependent_peaks(i, j)` for that pair's peak list
/// (computed on demand, memoized here), and a combination is consistent only
/// if each derived delay lies within `tol` samples of some peak in the
/// corresponding list. A combination is accepted only if its score exceeds
/// `min_score` (the detection gate); pass 0.0 to disable gating.
///
/// The walk is depth-first over value-sorted candidates with a
/// branch-and-bound cutoff on the best completable score, which returns
/// exactly what full enumeration would: the first combination, in candidate
/// order, attaining the greatest score above the gate — or `None` when no
/// consistent combination beats it.
pub fn consistency_search<F>(
    primary: &[PeakList],
    tol: i64,
    min_score: f64,
    mut dependent_peaks: F,
) -> Result<Option<TdoaSet>, TdoaError>
where
    F: FnMut(usize, usize) -> PeakList,
{
    if primary.is_empty() {
        return Err(TdoaError::NoPrimaryPairs);
    }
    for (k, list) in primary.iter().enumerate() {
        if list.pair != (0, k + 1) {
            return Err(TdoaError::MismatchedPairs {
                index: k,
                found: list.pair,
            });
        }
    }
    let levels = primary.len();
    if primary.iter().any(PeakList::is_empty) {
        return Ok(None);
    }

    // Optimistic completion bound: the best value still reachable from each
    // level onward. suffix_best[k] = sum of strongest peaks of levels k..
    let mut suffix_best = vec![0.0; levels + 1];
    for k in (0..levels).rev() {
        suffix_best[k] = suffix_best[k + 1] + primary[k].peaks()[0].value;
    }

    let mut search = Search {
        primary,
        tol,
        dependents: vec![None; levels * levels],
        fetch: &mut dependent_peaks,
        suffix_best,
        best_score: min_score,
        best: None,
        chosen: vec![0; levels],
    };
    search.descend(0, 0.0);

    Ok(search.best.map(|delays| TdoaSet {
        delays,
        score: search.best_score,
        frame_index: 0,
    }))
}

struct Search<'a, F> {
    primary: &'a [PeakList],
    tol: i64,
    /// Memoized dependent-pair peak lists, indexed `(i-1) * levels + (j-1)`
    /// for microphone indices `1 <= i < j <= levels`.
    dependents: Vec<Option<PeakList>>,
    fetch: &'a mut F,
    suffix_best: Vec<f64>,
    best_score: f64,
    best: Option<Vec<i64>>,
    chosen: Vec<i64>,
}

impl<F: FnMut(usize, usize) -> PeakList> Search<'_, F> {
    fn descend(&mut self, level: usize, partial: f64) {
        if level == self.primary.len() {
            if partial > self.best_score {
                self.best_score = partial;
                self.best = Some(self.chosen.clone());
            }
            return;
        }
        // Even the strongest remaining peaks cannot beat the incumbent.
        if partial + self.suffix_best[level] <= self.best_score {
            return;
        }
        for idx in 0..self.primary[level].peaks().len() {
            let peak = self.primary[level].peaks()[idx];
            if self.consistent_with_prefix(level, peak.lag) {
                self.chosen[level] = peak.lag;
                self.descend(level + 1, partial + peak.value);
            }
        }
    }

    /// Checks the candidate delay for pair (0, level+1) against every
    /// already-chosen level: the derived delay must match an observed peak
    /// of that microphone pair.
    fn consistent_with_prefix(&mut self, level: usize, lag: i64) -> bool {
        for prev in 0..level {
            let derived = lag - self.chosen[prev];
            let (i, j) = (prev + 1, level + 1);
            let slot = (i - 1) * self.primary.len() + (j - 1);
            if self.dependents[slot].is_none() {
                self.dependents[slot] = Some((self.fetch)(i, j));
            }
            let list = self.dependents[slot].as_ref().unwrap();
            if !list.matches_within(derived, self.tol) {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::spectral::{CorrelationKind, CrossCorrelation};

    fn corr_from_values(values: Vec<f64>, max_lag: i64) -> CrossCorrelation {
        CrossCorrelation::from_values((0, 1), CorrelationKind::Weighted, max_lag, values).unwrap()
    }

    #[test]
    fn single_impulse_yields_one_peak() {
        let mut values = vec![0.0; 41];
        values[23] = 2.5; // lag +3 with max_lag 20
        let corr = corr_from_values(values, 20);
        let list = extract_peaks(&corr, 8, 2).unwrap();
        assert_eq!(list.peaks(), &[Peak { lag: 3, value: 2.5 }]);
    }

    #[test]
    fn peaks_sorted_by_value_and_limited() {
        let mut values = vec![0.0; 41];
        values[10] = 5.0; // lag -10
        values[20] = 4.0; // lag 0
        values[30] = 3.0; // lag +10
        let corr = corr_from_values(values.clone(), 20);
        let list = extract_peaks(&corr, 2, 2).unwrap();
        let lags: Vec<i64> = list.peaks().iter().map(|p| p.lag).collect();
        assert_eq!(lags, vec![-10, 0]);

        // Brute-force oracle: all positive lags sorted by value.
        let mut oracle: Vec<(f64, i64)> = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, &v)| (v, i as i64 - 20))
            .collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0));
        assert_eq!(list.peaks()[0].lag, oracle[0].1);
        assert_eq!(list.peaks()[1].lag, oracle[1].1);
    }

    #[test]
    fn monotone_shoulders_are_not_peaks() {
        let mut values = vec![0.0; 21];
        values[10] = 5.0; // lag 0
        values[11] = 4.9; // falling shoulder
        values[12] = 4.8;
        let corr = corr_from_values(values, 10);
        let list = extract_peaks(&corr, 8, 2).unwrap();
        let lags: Vec<i64> = list.peaks().iter().map(|p| p.lag).collect();
        assert_eq!(lags, vec![0], "only the local maximum qualifies");
    }

    #[test]
    fn min_separation_thins_nearby_maxima() {
        let mut values = vec![0.0; 21];
        values[10] = 5.0; // lag 0
        values[12] = 4.9; // lag 2, separate local maximum
        let corr = corr_from_values(values, 10);

        let close = extract_peaks(&corr, 8, 3).unwrap();
        let lags: Vec<i64> = close.peaks().iter().map(|p| p.lag).collect();
        assert_eq!(lags, vec![0], "lag 2 is within 3 of the stronger peak");

        let loose = extract_peaks(&corr, 8, 2).unwrap();
        let lags: Vec<i64> = loose.peaks().iter().map(|p| p.lag).collect();
        assert_eq!(lags, vec![0, 2], "separation of exactly 2 is allowed");
    }

    #[test]
    fn zero_peak_count_is_an_error() {
        let corr = corr_from_values(vec![0.0; 21], 10);
        assert!(matches!(
            extract_peaks(&corr, 0, 2),
            Err(TdoaError::ZeroPeakCount)
        ));
    }

    #[test]
    fn dependent_delay_arithmetic() {
        let set = TdoaSet {
            delays: vec![4, 10],
            score: 0.0,
            frame_index: 0,
        };
        assert_eq!(dependent_delay(&set, 1, 2).unwrap(), 6);

        let zeros = TdoaSet {
            delays: vec![0, 0, 0],
            score: 0.0,
            frame_index: 0,
        };
        for i in 1..3 {
            for j in (i + 1)..4 {
                assert_eq!(dependent_delay(&zeros, i, j).unwrap(), 0);
            }
        }
    }

    #[test]
    fn dependent_delay_rejects_bad_indices() {
        let set = TdoaSet {
            delays: vec![4, 10],
            score: 0.0,
            frame_index: 0,
        };
        assert!(dependent_delay(&set, 1, 1).is_err());
        assert!(dependent_delay(&set, 0, 2).is_err());
        assert!(dependent_delay(&set, 1, 3).is_err());
        assert!(dependent_delay(&set, 2, 1).is_err());
    }

    /// Exhaustive enumeration with the same candidate order and the same
    /// strict-improvement rule as the branch-and-bound walk.
    fn exhaustive_search(
        primary: &[PeakList],
        tol: i64,
        min_score: f64,
        dependents: &dyn Fn(usize, usize) -> PeakList,
    ) -> Option<TdoaSet> {
        let levels = primary.len();
        if primary.iter().any(PeakList::is_empty) {
            return None;
        }
        let mut best: Option<(f64, Vec<i64>)> = None;
        let mut idx = vec![0usize; levels];
        loop {
            let chosen: Vec<Peak> = (0..levels).map(|k| primary[k].peaks()[idx[k]]).collect();
            let consistent = (0..levels).all(|a| {
                ((a + 1)..levels).all(|b| {
                    let derived = chosen[b].lag - chosen[a].lag;
                    dependents(a + 1, b + 1).matches_within(derived, tol)
                })
            });
            if consistent {
                let score: f64 = chosen.iter().map(|p| p.value).sum();
                let beats = score > best.as_ref().map_or(min_score, |(s, _)| *s);
                if beats {
                    best = Some((score, chosen.iter().map(|p| p.lag).collect()));
                }
            }
            // Odometer increment, last level fastest.
            let mut k = levels;
            loop {
                if k == 0 {
                    return best.map(|(score, delays)| TdoaSet {
                        delays,
                        score,
                        frame_index: 0,
                    });
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < primary[k].peaks().len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    fn peaklist(pair: (usize, usize), entries: &[(i64, f64)]) -> PeakList {
        PeakList::new(
            pair,
            entries
                .iter()
                .map(|&(lag, value)| Peak { lag, value })
                .collect(),
        )
    }

    #[test]
    fn finds_planted_consistent_set() {
        // True delays 4, -3, 7 for pairs (0,1), (0,2), (0,3) plus decoys.
        let primary = vec![
            peaklist((0, 1), &[(4, 1.0), (-9, 0.9)]),
            peaklist((0, 2), &[(5, 0.95), (-3, 0.9)]),
            peaklist((0, 3), &[(7, 1.0), (0, 0.2)]),
        ];
        let truth = [4i64, -3, 7];
        let fetch = |i: usize, j: usize| peaklist((i, j), &[(truth[j - 1] - truth[i - 1], 0.5)]);
        let set = consistency_search(&primary, 0, 0.0, fetch)
            .unwrap()
            .unwrap();
        assert_eq!(set.delays, vec![4, -3, 7]);
        // (4) + (-3) + (7) with values 1.0 + 0.9 + 1.0
        assert!((set.score - 2.9).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_decoys_are_rejected() {
        let primary = vec![
            peaklist((0, 1), &[(4, 1.0)]),
            peaklist((0, 2), &[(-3, 0.9)]),
            peaklist((0, 3), &[(7, 1.0)]),
        ];
        // Dependent peaks nowhere near the derived delays.
        let fetch = |i: usize, j: usize| peaklist((i, j), &[(50, 1.0)]);
        assert!(consistency_search(&primary, 1, 0.0, fetch)
            .unwrap()
            .is_none());
    }

    #[test]
    fn higher_scoring_consistent_set_wins() {
        // Two fully consistent sets: all-zero lags (values 1.0 each) and
        // lags 10/20/30 (values 2.0 each).
        let primary = vec![
            peaklist((0, 1), &[(0, 1.0), (10, 2.0)]),
            peaklist((0, 2), &[(0, 1.0), (20, 2.0)]),
            peaklist((0, 3), &[(0, 1.0), (30, 2.0)]),
        ];
        let fetch = |i: usize, j: usize| {
            // Both 0 and the derived lags of the strong set are observed.
            peaklist((i, j), &[(0, 0.5), ((j - i) as i64 * 10, 0.5)])
        };
        let set = consistency_search(&primary, 0, 0.0, fetch)
            .unwrap()
            .unwrap();
        assert_eq!(set.delays, vec![10, 20, 30]);
        assert!((set.score - 6.0).abs() < 1e-12);
    }

    #[test]
    fn gate_rejects_weak_sets() {
        let primary = vec![peaklist((0, 1), &[(0, 0.1)]), peaklist((0, 2), &[(0, 0.1)])];
        let fetch = |i: usize, j: usize| peaklist((i, j), &[(0, 0.1)]);
        assert!(consistency_search(&primary, 1, 1.0, fetch)
            .unwrap()
            .is_none());
        assert!(consistency_search(&primary, 1, 0.0, fetch)
            .unwrap()
            .is_some());
    }

    #[test]
    fn rejects_mislabeled_pairs() {
        let primary = vec![peaklist((0, 2), &[(0, 1.0)])];
        let fetch = |i: usize, j: usize| peaklist((i, j), &[]);
        assert!(matches!(
            consistency_search(&primary, 1, 0.0, fetch),
            Err(TdoaError::MismatchedPairs { index: 0, .. })
        ));
    }

    fn random_instance(rng: &mut Rng, mics: usize, peaks: usize) -> Vec<PeakList> {
        (1..mics)
            .map(|i| {
                let entries: Vec<Peak> = (0..peaks)
                    .map(|_| Peak {
                        lag: rng.range(-20.0, 21.0) as i64,
                        value: rng.uniform(),
                    })
                    .collect();
                PeakList::new((0, i), entries)
            })
            .collect()
    }

    #[test]
    fn branch_and_bound_equals_exhaustive_enumeration() {
        let mut rng = Rng::new(0xfeed);
        let mut detections = 0usize;
        for _ in 0..500 {
            let mics = 3 + (rng.next_u64() % 3) as usize; // 3..=5
            let peaks = 1 + (rng.next_u64() % 4) as usize; // 1..=4
            let primary = random_instance(&mut rng, mics, peaks);

            // Shared random dependent lists.
            let mut dep_map: Vec<PeakList> = Vec::new();
            for i in 1..mics {
                for j in (i + 1)..mics {
                    let entries: Vec<Peak> = (0..peaks)
                        .map(|_| Peak {
                            lag: rng.range(-40.0, 41.0) as i64,
                            value: rng.uniform(),
                        })
                        .collect();
                    dep_map.push(PeakList::new((i, j), entries));
                }
            }
            let lookup =
                |i: usize, j: usize| dep_map.iter().find(|l| l.pair == (i, j)).unwrap().clone();

            let fast = consistency_search(&primary, 1, 0.0, lookup).unwrap();
            let slow = exhaustive_search(&primary, 1, 0.0, &lookup);
            assert_eq!(fast, slow, "branch-and-bound diverged from enumeration");
            if fast.is_some() {
                detections += 1;
            }
        }
        // Sanity: the random instances must exercise both outcomes.
        assert!(
            detections > 10,
            "too few consistent instances: {detections}"
        );
        assert!(
            detections < 490,
            "instances almost always consistent: {detections}"
        );
    }

    #[test]
    fn returned_sets_satisfy_every_pair_constraint() {
        let mut rng = Rng::new(0xabc);
        for _ in 0..200 {
            let mics = 4 + (rng.next_u64() % 2) as usize;
            let primary = random_instance(&mut rng, mics, 3);
            let mut dep_map: Vec<PeakList> = Vec::new();
            for i in 1..mics {
                for j in (i + 1)..mics {
                    let entries: Vec<Peak> = (0..6)
                        .map(|_| Peak {
                            lag: rng.range(-40.0, 41.0) as i64,
                            value: rng.uniform(),
                        })
                        .collect();
                    dep_map.push(PeakList::new((i, j), entries));
                }
            }
            let lookup =
                |i: usize, j: usize| dep_map.iter().find(|l| l.pair == (i, j)).unwrap().clone();
            if let Some(set) = consistency_search(&primary, 1, 0.0, lookup).unwrap() {
                for i in 1..mics {
                    for j in (i + 1)..mics {
                        let derived = dependent_delay(&set, i, j).unwrap();
                        let list = dep_map.iter().find(|l| l.pair == (i, j)).unwrap();
                        assert!(
                            list.matches_within(derived, 1),
                            "returned set violates pair ({i}, {j})"
                        );
                    }
                }
                // Primary delays must come from the extracted peaks.
                for (k, &d) in set.delays.iter().enumerate() {
                    assert!(primary[k].peaks().iter().any(|p| p.lag == d));
                }
            }
        }
    }

    #[test]
    fn boosting_winner_peak_never_demotes_it() {
        let mut rng = Rng::new(0x77);
        for _ in 0..100 {
            let mics = 4;
            let primary = random_instance(&mut rng, mics, 3);
            let mut dep_map: Vec<PeakList> = Vec::new();
            for i in 1..mics {
                for j in (i + 1)..mics {
                    let entries: Vec<Peak> = (0..6)
                        .map(|_| Peak {
                            lag: rng.range(-40.0, 41.0) as i64,
                            value: rng.uniform(),
                        })
                        .collect();
                    dep_map.push(PeakList::new((i, j), entries));
                }
            }
            let lookup =
                |i: usize, j: usize| dep_map.iter().find(|l| l.pair == (i, j)).unwrap().clone();
            let Some(before) = consistency_search(&primary, 1, 0.0, lookup).unwrap() else {
                continue;
            };

            // Double the value of the first selected peak.
            let boosted: Vec<PeakList> = primary
                .iter()
                .enumerate()
                .map(|(k, list)| {
                    let peaks = list
                        .peaks()
                        .iter()
                        .map(|&p| {
                            if k == 0 && p.lag == before.delays[0] {
                                Peak {
                                    lag: p.lag,
                                    value: p.value * 2.0,
                                }
                            } else {
                                p
                            }
                        })
                        .collect();
                    PeakList::new(list.pair, peaks)
                })
                .collect();
            let lookup2 =
                |i: usize, j: usize| dep_map.iter().find(|l| l.pair == (i, j)).unwrap().clone();
            let after = consistency_search(&boosted, 1, 0.0, lookup2)
                .unwrap()
                .unwrap();
            assert!(
                after.score >= before.score,
                "boosting a winning peak lowered the best score"
            );
        }
    }
}
