//! Rating records, binarization into signed edges, and train/test splits.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::{Sign, SignedEdge};
use crate::rng::{SeedStreams, Stream};

/// One raw interaction. `Id` is the raw identifier type before re-indexing
/// and `u32` afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingRecord<Id = u32> {
    pub user: Id,
    pub item: Id,
    /// Star rating or watch ratio.
    pub value: f64,
    pub timestamp: Option<i64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BinarizationRule {
    /// Explicit star ratings; default threshold 3.5.
    StarThreshold(f64),
    /// Watch ratio of a video log; default threshold 2.0.
    WatchRatioThreshold(f64),
}

impl BinarizationRule {
    pub const DEFAULT_STAR: f64 = 3.5;
    pub const DEFAULT_WATCH_RATIO: f64 = 2.0;

    pub fn stars() -> Self {
        Self::StarThreshold(Self::DEFAULT_STAR)
    }

    pub fn watch_ratio() -> Self {
        Self::WatchRatioThreshold(Self::DEFAULT_WATCH_RATIO)
    }

    pub fn threshold(&self) -> f64 {
        match *self {
            Self::StarThreshold(t) | Self::WatchRatioThreshold(t) => t,
        }
    }

    /// Positive iff the value is strictly above the threshold.
    #[inline]
    pub fn sign(&self, value: f64) -> Sign {
        if value > self.threshold() {
            Sign::Positive
        } else {
            Sign::Negative
        }
    }
}

/// Bijection between raw identifiers and dense indices, in first-seen order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdMap<Id: Ord + Clone> {
    raw: Vec<Id>,
    index: BTreeMap<Id, u32>,
}

impl<Id: Ord + Clone> IdMap<Id> {
    pub fn new() -> Self {
        Self {
            raw: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// Dense index of `id`, assigning the next one if unseen.
    pub fn intern(&mut self, id: &Id) -> u32 {
        if let Some(&idx) = self.index.get(id) {
            return idx;
        }
        let idx = self.raw.len() as u32;
        self.raw.push(id.clone());
        self.index.insert(id.clone(), idx);
        idx
    }

    pub fn get(&self, id: &Id) -> Option<u32> {
        self.index.get(id).copied()
    }

    pub fn raw(&self, idx: u32) -> Option<&Id> {
        self.raw.get(idx as usize)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// `(raw, dense)` pairs in dense order.
    pub fn iter(&self) -> impl Iterator<Item = (&Id, u32)> {
        self.raw.iter().enumerate().map(|(i, r)| (r, i as u32))
    }
}

/// Collapse repeated (user, item) pairs, keeping the record with the latest
/// timestamp; among equal or missing timestamps the later occurrence wins.
/// Survivors keep the position of the pair's first occurrence.
pub fn dedup_latest<Id: Ord + Clone>(records: Vec<RatingRecord<Id>>) -> Vec<RatingRecord<Id>> {
    let mut slot: BTreeMap<(Id, Id), usize> = BTreeMap::new();
    let mut out: Vec<RatingRecord<Id>> = Vec::with_capacity(records.len());
    for rec in records {
        let key = (rec.user.clone(), rec.item.clone());
        match slot.get(&key) {
            Some(&pos) => {
                let keep_new = match (out[pos].timestamp, rec.timestamp) {
                    (Some(old), Some(new)) => new >= old,
                    _ => true,
                };
                if keep_new {
                    out[pos] = rec;
                }
            }
            None => {
                slot.insert(key, out.len());
                out.push(rec);
            }
        }
    }
    out
}

/// Drop records whose user or item has fewer than `min` interactions.
/// Counts are taken once over the input (a single pass, not iterated to a
/// fixed point).
pub fn filter_min_interactions<Id: Ord + Clone>(
    records: Vec<RatingRecord<Id>>,
    min: usize,
) -> Vec<RatingRecord<Id>> {
    let mut users: BTreeMap<Id, usize> = BTreeMap::new();
    let mut items: BTreeMap<Id, usize> = BTreeMap::new();
    for r in &records {
        *users.entry(r.user.clone()).or_default() += 1;
        *items.entry(r.item.clone()).or_default() += 1;
    }
    records
        .into_iter()
        .filter(|r| users[&r.user] >= min && items[&r.item] >= min)
        .collect()
}

/// Map every record to exactly one signed edge, preserving order.
pub fn binarize(records: &[RatingRecord<u32>], rule: BinarizationRule) -> Result<Vec<SignedEdge>> {
    if !rule.threshold().is_finite() {
        return Err(Error::InvalidArgument(format!(
            "binarization threshold must be finite, got {}",
            rule.threshold()
        )));
    }
    records
        .iter()
        .map(|r| {
            if !r.value.is_finite() || r.value < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "rating value must be finite and non-negative, got {}",
                    r.value
                )));
            }
            Ok(SignedEdge {
                user: r.user,
                item: r.item,
                sign: rule.sign(r.value),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum SplitSpec {
    /// Random k-fold partition; `fold_index` is the test fold.
    KFold {
        folds: usize,
        fold_index: usize,
        seed: u64,
    },
    /// Test set given explicitly (e.g. a fully observed sub-matrix); every
    /// other edge trains.
    FixedFiles { test_pairs: BTreeSet<(u32, u32)> },
}

impl SplitSpec {
    pub fn k_fold(folds: usize, fold_index: usize, seed: u64) -> Self {
        Self::KFold {
            folds,
            fold_index,
            seed,
        }
    }
}

/// Fold assignment of each edge under a k-fold spec.
pub fn fold_assignment(n_edges: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_edges).collect();
    let mut rng = SeedStreams::new(seed).rng(Stream::Split);
    order.shuffle(&mut rng);
    let mut fold = alloc::vec![0; n_edges];
    for (pos, &edge) in order.iter().enumerate() {
        fold[edge] = pos % folds;
    }
    fold
}

/// Split edges into `(train, test)`. Both outputs keep input order.
pub fn split(edges: &[SignedEdge], spec: &SplitSpec) -> Result<(Vec<SignedEdge>, Vec<SignedEdge>)> {
    match spec {
        SplitSpec::KFold {
            folds,
            fold_index,
            seed,
        } => {
            if *folds < 2 {
                return Err(Error::InvalidArgument(format!(
                    "k-fold split needs at least 2 folds, got {folds}"
                )));
            }
            if fold_index >= folds {
                return Err(Error::InvalidArgument(format!(
                    "fold index {fold_index} must be below fold count {folds}"
                )));
            }
            let assignment = fold_assignment(edges.len(), *folds, *seed);
            let (test, train): (Vec<_>, Vec<_>) = edges
                .iter()
                .zip(&assignment)
                .partition(|(_, &f)| f == *fold_index);
            Ok((
                train.into_iter().map(|(e, _)| *e).collect(),
                test.into_iter().map(|(e, _)| *e).collect(),
            ))
        }
        SplitSpec::FixedFiles { test_pairs } => {
            let (test, train): (Vec<SignedEdge>, Vec<SignedEdge>) = edges
                .iter()
                .partition(|e| test_pairs.contains(&(e.user, e.item)));
            Ok((train, test))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rec(user: u32, item: u32, value: f64, ts: Option<i64>) -> RatingRecord {
        RatingRecord {
            user,
            item,
            value,
            timestamp: ts,
        }
    }

    fn edges(n: u32) -> Vec<SignedEdge> {
        (0..n)
            .map(|k| SignedEdge {
                user: k / 10,
                item: k % 10,
                sign: if k % 3 == 0 { Sign::Negative } else { Sign::Positive },
            })
            .collect()
    }

    #[test]
    fn dedup_keeps_latest_timestamp() {
        let out = dedup_latest(vec![rec(0, 0, 1.0, Some(10)), rec(0, 0, 4.0, Some(20))]);
        assert_eq!(out, vec![rec(0, 0, 4.0, Some(20))]);
        let out = dedup_latest(vec![rec(0, 0, 4.0, Some(20)), rec(0, 0, 1.0, Some(10))]);
        assert_eq!(out, vec![rec(0, 0, 4.0, Some(20))]);
    }

    #[test]
    fn dedup_without_timestamps_keeps_last_occurrence() {
        let out = dedup_latest(vec![
            rec(0, 0, 1.0, None),
            rec(1, 0, 2.0, None),
            rec(0, 0, 5.0, None),
        ]);
        assert_eq!(out, vec![rec(0, 0, 5.0, None), rec(1, 0, 2.0, None)]);
    }

    #[test]
    fn binarize_thresholds() {
        let stars = BinarizationRule::stars();
        assert_eq!(stars.sign(4.0), Sign::Positive);
        assert_eq!(stars.sign(3.0), Sign::Negative);
        let watch = BinarizationRule::watch_ratio();
        assert_eq!(watch.sign(2.5), Sign::Positive);
        assert_eq!(watch.sign(2.0), Sign::Negative);
        let out = binarize(&[rec(0, 1, 4.0, None), rec(1, 0, 1.0, None)], stars).unwrap();
        assert_eq!(out[0].sign, Sign::Positive);
        assert_eq!(out[1].sign, Sign::Negative);
        assert!(binarize(&[], BinarizationRule::StarThreshold(f64::NAN)).is_err());
        assert!(binarize(&[rec(0, 0, -1.0, None)], stars).is_err());
    }

    #[test]
    fn min_interaction_filter() {
        let recs = vec![
            rec(0, 0, 5.0, None),
            rec(0, 1, 5.0, None),
            rec(1, 0, 5.0, None),
        ];
        let kept = filter_min_interactions(recs, 2);
        assert_eq!(kept, vec![rec(0, 0, 5.0, None)]);
    }

    #[test]
    fn five_fold_sizes() {
        let e = edges(100);
        let (train, test) = split(&e, &SplitSpec::k_fold(5, 0, 7)).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
    }

    #[test]
    fn two_folds_partition_edges() {
        let e = edges(37);
        let (_, t0) = split(&e, &SplitSpec::k_fold(2, 0, 3)).unwrap();
        let (_, t1) = split(&e, &SplitSpec::k_fold(2, 1, 3)).unwrap();
        assert_eq!(t0.len() + t1.len(), e.len());
        let s0: BTreeSet<_> = t0.iter().map(|x| (x.user, x.item)).collect();
        assert!(t1.iter().all(|x| !s0.contains(&(x.user, x.item))));
    }

    #[test]
    fn split_is_deterministic() {
        let e = edges(50);
        let a = split(&e, &SplitSpec::k_fold(5, 2, 11)).unwrap();
        let b = split(&e, &SplitSpec::k_fold(5, 2, 11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_fold_index() {
        assert!(split(&edges(10), &SplitSpec::k_fold(5, 5, 0)).is_err());
        assert!(split(&edges(10), &SplitSpec::k_fold(1, 0, 0)).is_err());
    }

    #[test]
    fn fixed_files_split() {
        let e = edges(20);
        let test_pairs: BTreeSet<_> = [(0, 1), (1, 3)].into_iter().collect();
        let (train, test) = split(&e, &SplitSpec::FixedFiles { test_pairs }).unwrap();
        assert_eq!(test.len(), 2);
        assert_eq!(train.len(), 18);
    }

    #[test]
    fn id_map_is_bijective() {
        let mut m = IdMap::new();
        assert_eq!(m.intern(&"b"), 0);
        assert_eq!(m.intern(&"a"), 1);
        assert_eq!(m.intern(&"b"), 0);
        assert_eq!(m.raw(1), Some(&"a"));
        assert_eq!(m.get(&"a"), Some(1));
        assert_eq!(m.len(), 2);
    }
}
