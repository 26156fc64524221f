//! Scoring, filtered top-K recommendation and ranking metrics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::cmp::Ordering;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::graph::SignedBipartiteGraph;
use crate::matrix::Matrix;
use crate::real::{dot, Real};

/// Interest and disinterest scores of one candidate item for one user.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredItem {
    pub item: u32,
    pub interest: f64,
    pub disinterest: f64,
}

/// Which side of the threshold survives the disinterest filter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FilterDirection {
    /// Keep `S_dt < δ`.
    #[default]
    KeepBelow,
    /// Keep `S_dt > δ`.
    KeepAbove,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisinterestFilter {
    pub delta: f64,
    pub direction: FilterDirection,
}

impl DisinterestFilter {
    pub fn below(delta: f64) -> Self {
        Self {
            delta,
            direction: FilterDirection::KeepBelow,
        }
    }

    /// Lets every finite score through.
    pub fn off() -> Self {
        Self::below(f64::INFINITY)
    }

    pub fn keeps(&self, disinterest: f64) -> bool {
        match self.direction {
            FilterDirection::KeepBelow => disinterest < self.delta,
            FilterDirection::KeepAbove => disinterest > self.delta,
        }
    }

    /// Order of filtered-out items for backfill: closest to passing first.
    fn backfill_order(&self, a: &ScoredItem, b: &ScoredItem) -> Ordering {
        let by_dt = match self.direction {
            FilterDirection::KeepBelow => a.disinterest.total_cmp(&b.disinterest),
            FilterDirection::KeepAbove => b.disinterest.total_cmp(&a.disinterest),
        };
        by_dt.then_with(|| by_interest(a, b))
    }
}

/// Descending interest, ties by ascending item index.
fn by_interest(a: &ScoredItem, b: &ScoredItem) -> Ordering {
    b.interest
        .total_cmp(&a.interest)
        .then_with(|| a.item.cmp(&b.item))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedEntry {
    pub scored: ScoredItem,
    pub backfilled: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankedList {
    pub user: u32,
    pub items: Vec<RankedEntry>,
}

/// Scores of every item not in `exclude` (sorted ascending) for `user`.
pub fn score_all<F: Real>(
    user: u32,
    interest: &Matrix<F>,
    disinterest: &Matrix<F>,
    n_users: usize,
    exclude: &[u32],
) -> Result<Vec<ScoredItem>> {
    if user as usize >= n_users {
        return Err(Error::IndexOutOfRange {
            what: "user",
            index: user as u64,
            bound: n_users as u64,
        });
    }
    if interest.shape() != disinterest.shape() {
        return Err(Error::Shape {
            what: "disinterest embeddings",
            expected: interest.shape(),
            found: disinterest.shape(),
        });
    }
    let n_items = interest.rows().saturating_sub(n_users);
    let (zu, vu) = (interest.row(user as usize), disinterest.row(user as usize));
    Ok((0..n_items as u32)
        .filter(|i| exclude.binary_search(i).is_err())
        .map(|i| {
            let r = n_users + i as usize;
            ScoredItem {
                item: i,
                interest: dot(zu, interest.row(r)).widen(),
                disinterest: dot(vu, disinterest.row(r)).widen(),
            }
        })
        .collect())
}

/// Items that pass the filter, before any backfill.
pub fn kept_set(scores: &[ScoredItem], filter: DisinterestFilter) -> BTreeSet<u32> {
    scores
        .iter()
        .filter(|s| filter.keeps(s.disinterest))
        .map(|s| s.item)
        .collect()
}

/// Top-`k` of the filtered candidates by interest. When fewer than `k`
/// survive, the list is completed from the filtered-out items and those
/// entries are flagged.
pub fn recommend(user: u32, k: usize, filter: DisinterestFilter, scores: &[ScoredItem]) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::InvalidArgument("K_rec must be at least 1".into()));
    }
    let (mut kept, mut dropped): (Vec<ScoredItem>, Vec<ScoredItem>) =
        scores.iter().partition(|s| filter.keeps(s.disinterest));
    top_by(&mut kept, k, by_interest);
    let mut items: Vec<RankedEntry> = kept
        .into_iter()
        .map(|scored| RankedEntry {
            scored,
            backfilled: false,
        })
        .collect();
    if items.len() < k {
        let need = k - items.len();
        top_by(&mut dropped, need, |a, b| filter.backfill_order(a, b));
        items.extend(dropped.into_iter().map(|scored| RankedEntry {
            scored,
            backfilled: true,
        }));
    }
    Ok(RankedList { user, items })
}

fn top_by(v: &mut Vec<ScoredItem>, k: usize, cmp: impl Fn(&ScoredItem, &ScoredItem) -> Ordering) {
    if v.len() > k {
        v.select_nth_unstable_by(k, &cmp);
        v.truncate(k);
    }
    v.sort_unstable_by(cmp);
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MetricOptions {
    /// Normalize nDCG by `min(K, |GT|)` ideal hits instead of `K`.
    pub capped_idcg: bool,
    /// Backfilled slots never count as hits.
    pub backfill_as_miss: bool,
}

/// Test positives per user.
pub type GroundTruth = BTreeMap<u32, BTreeSet<u32>>;

fn hits(list: Option<&RankedList>, gt: &BTreeSet<u32>, k: usize, opts: MetricOptions) -> Vec<bool> {
    list.map(|l| {
        l.items
            .iter()
            .take(k)
            .map(|e| !(opts.backfill_as_miss && e.backfilled) && gt.contains(&e.scored.item))
            .collect()
    })
    .unwrap_or_default()
}

fn discount(rank: usize) -> f64 {
    1.0 / Float::log2((rank + 1) as f64)
}

/// Per-user `(precision, recall, ndcg)` at `k`.
pub fn user_metrics(
    list: Option<&RankedList>,
    gt: &BTreeSet<u32>,
    k: usize,
    opts: MetricOptions,
) -> (f64, f64, f64) {
    let h = hits(list, gt, k, opts);
    let count = h.iter().filter(|&&x| x).count() as f64;
    let dcg: f64 = h
        .iter()
        .enumerate()
        .filter(|(_, &x)| x)
        .map(|(r, _)| discount(r + 1))
        .sum();
    let ideal_len = if opts.capped_idcg { k.min(gt.len()) } else { k };
    let idcg: f64 = (1..=ideal_len).map(discount).sum();
    (count / k as f64, count / gt.len() as f64, if idcg > 0.0 { dcg / idcg } else { 0.0 })
}

/// Mean metrics over users with non-empty ground truth. Missing lists count
/// as empty.
fn mean_metrics(
    lists: &BTreeMap<u32, RankedList>,
    truth: &GroundTruth,
    k: usize,
    opts: MetricOptions,
) -> (MetricsAtK, usize) {
    let mut sum = (0.0, 0.0, 0.0);
    let mut n = 0usize;
    for (user, gt) in truth.iter().filter(|(_, g)| !g.is_empty()) {
        let (p, r, d) = user_metrics(lists.get(user), gt, k, opts);
        sum.0 += p;
        sum.1 += r;
        sum.2 += d;
        n += 1;
    }
    let mean = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    (
        MetricsAtK {
            k,
            precision: mean(sum.0),
            recall: mean(sum.1),
            ndcg: mean(sum.2),
        },
        n,
    )
}

pub fn precision_at_k(lists: &BTreeMap<u32, RankedList>, truth: &GroundTruth, k: usize) -> f64 {
    mean_metrics(lists, truth, k, MetricOptions::default()).0.precision
}

pub fn recall_at_k(lists: &BTreeMap<u32, RankedList>, truth: &GroundTruth, k: usize) -> f64 {
    mean_metrics(lists, truth, k, MetricOptions::default()).0.recall
}

pub fn ndcg_at_k(lists: &BTreeMap<u32, RankedList>, truth: &GroundTruth, k: usize) -> f64 {
    mean_metrics(lists, truth, k, MetricOptions::default()).0.ndcg
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsAtK {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub at: Vec<MetricsAtK>,
    pub evaluated_users: usize,
    /// Users whose list needed at least one backfilled slot.
    pub backfilled_users: usize,
}

impl MetricsReport {
    pub fn get(&self, k: usize) -> Option<&MetricsAtK> {
        self.at.iter().find(|m| m.k == k)
    }

    pub fn from_lists(
        lists: &BTreeMap<u32, RankedList>,
        truth: &GroundTruth,
        ks: &[usize],
        opts: MetricOptions,
    ) -> Self {
        let mut report = MetricsReport::default();
        for &k in ks {
            let (m, n) = mean_metrics(lists, truth, k, opts);
            report.at.push(m);
            report.evaluated_users = n;
        }
        report.backfilled_users = lists
            .values()
            .filter(|l| l.items.iter().any(|e| e.backfilled))
            .count();
        report
    }
}

/// Recommendation lists for `users`, excluding items each user interacted
/// with in `train`.
pub fn recommend_users<F: Real>(
    users: impl IntoIterator<Item = u32>,
    interest: &Matrix<F>,
    disinterest: &Matrix<F>,
    train: &SignedBipartiteGraph,
    k: usize,
    filter: DisinterestFilter,
) -> Result<BTreeMap<u32, RankedList>> {
    let mut out = BTreeMap::new();
    for u in users {
        let seen = train.seen_items(u);
        let scores = score_all(u, interest, disinterest, train.n_users(), &seen)?;
        out.insert(u, recommend(u, k, filter, &scores)?);
    }
    Ok(out)
}

/// Rank for every ground-truth user at the largest requested cutoff and
/// report metrics at each cutoff.
pub fn evaluate<F: Real>(
    interest: &Matrix<F>,
    disinterest: &Matrix<F>,
    train: &SignedBipartiteGraph,
    truth: &GroundTruth,
    ks: &[usize],
    filter: DisinterestFilter,
    opts: MetricOptions,
) -> Result<MetricsReport> {
    let k_max = ks.iter().copied().max().unwrap_or(0);
    if k_max == 0 || ks.contains(&0) {
        return Err(Error::InvalidArgument("cutoffs must be at least 1".into()));
    }
    let users = truth.iter().filter(|(_, g)| !g.is_empty()).map(|(&u, _)| u);
    let lists = recommend_users(users, interest, disinterest, train, k_max, filter)?;
    Ok(MetricsReport::from_lists(&lists, truth, ks, opts))
}

/// Ground truth from `(user, item)` pairs.
pub fn ground_truth(pairs: impl IntoIterator<Item = (u32, u32)>) -> GroundTruth {
    let mut gt = GroundTruth::new();
    for (u, i) in pairs {
        gt.entry(u).or_default().insert(i);
    }
    gt
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn s(item: u32, interest: f64, disinterest: f64) -> ScoredItem {
        ScoredItem {
            item,
            interest,
            disinterest,
        }
    }

    fn ids(l: &RankedList) -> Vec<u32> {
        l.items.iter().map(|e| e.scored.item).collect()
    }

    #[test]
    fn filter_example() {
        let scores = [s(1, 0.9, 0.6), s(2, 0.8, 0.2), s(3, 0.1, 0.1)];
        let l = recommend(0, 2, DisinterestFilter::below(0.5), &scores).unwrap();
        assert_eq!(ids(&l), vec![2, 3]);
        assert!(l.items.iter().all(|e| !e.backfilled));
    }

    #[test]
    fn infinite_delta_is_plain_ranking() {
        let scores = [s(1, 0.9, 0.6), s(2, 0.8, 0.2), s(3, 0.1, 0.1)];
        let l = recommend(0, 2, DisinterestFilter::off(), &scores).unwrap();
        assert_eq!(ids(&l), vec![1, 2]);
    }

    #[test]
    fn all_filtered_backfills_minimum_disinterest() {
        let scores = [s(1, 0.9, 0.6), s(2, 0.8, 0.7), s(3, 0.1, 0.55)];
        let l = recommend(0, 1, DisinterestFilter::below(0.5), &scores).unwrap();
        assert_eq!(ids(&l), vec![3]);
        assert!(l.items[0].backfilled);
    }

    #[test]
    fn keep_above_direction() {
        let scores = [s(1, 0.9, 0.6), s(2, 0.8, 0.2), s(3, 0.1, 0.1)];
        let f = DisinterestFilter {
            delta: 0.5,
            direction: FilterDirection::KeepAbove,
        };
        let l = recommend(0, 2, f, &scores).unwrap();
        assert_eq!(ids(&l), vec![1, 2]);
        assert!(l.items[1].backfilled);
    }

    #[test]
    fn ties_break_by_item_index() {
        let scores = [s(5, 0.5, 0.0), s(2, 0.5, 0.0), s(9, 0.5, 0.0)];
        let l = recommend(0, 3, DisinterestFilter::off(), &scores).unwrap();
        assert_eq!(ids(&l), vec![2, 5, 9]);
    }

    #[test]
    fn rejects_zero_k() {
        assert!(recommend(0, 0, DisinterestFilter::off(), &[]).is_err());
    }

    #[test]
    fn metrics_worked_example() {
        // a=0, b=1, c=2
        let truth = ground_truth([(0, 0), (0, 1)]);
        let list = RankedList {
            user: 0,
            items: vec![
                RankedEntry {
                    scored: s(0, 1.0, 0.0),
                    backfilled: false,
                },
                RankedEntry {
                    scored: s(2, 0.5, 0.0),
                    backfilled: false,
                },
            ],
        };
        let lists = BTreeMap::from([(0, list)]);
        assert_eq!(precision_at_k(&lists, &truth, 2), 0.5);
        assert_eq!(recall_at_k(&lists, &truth, 2), 0.5);
        assert!((ndcg_at_k(&lists, &truth, 2) - 0.61315).abs() < 1e-5);
    }

    #[test]
    fn capped_idcg_and_backfill_as_miss() {
        let truth = ground_truth([(0, 0)]);
        let entry = |item, backfilled| RankedEntry {
            scored: s(item, 0.0, 0.0),
            backfilled,
        };
        let lists = BTreeMap::from([(
            0,
            RankedList {
                user: 0,
                items: vec![entry(0, true), entry(1, false)],
            },
        )]);
        let r = MetricsReport::from_lists(&lists, &truth, &[2], MetricOptions::default());
        assert!((r.at[0].ndcg - 1.0 / (1.0 + 1.0 / Float::log2(3f64))).abs() < 1e-12);
        let capped = MetricsReport::from_lists(
            &lists,
            &truth,
            &[2],
            MetricOptions {
                capped_idcg: true,
                backfill_as_miss: false,
            },
        );
        assert_eq!(capped.at[0].ndcg, 1.0);
        let miss = MetricsReport::from_lists(
            &lists,
            &truth,
            &[2],
            MetricOptions {
                capped_idcg: false,
                backfill_as_miss: true,
            },
        );
        assert_eq!(miss.at[0].recall, 0.0);
        assert_eq!(r.backfilled_users, 1);
    }

    #[test]
    fn empty_ground_truth_users_are_excluded() {
        let mut truth = ground_truth([(0, 0)]);
        truth.insert(1, BTreeSet::new());
        let r = MetricsReport::from_lists(&BTreeMap::new(), &truth, &[5], MetricOptions::default());
        assert_eq!(r.evaluated_users, 1);
        assert_eq!(r.at[0].recall, 0.0);
    }

    #[test]
    fn score_all_examples() {
        let z = Matrix::from_vec(3, 2, vec![1.0, 2.0, 1.0, 2.0, 0.0, 0.0]).unwrap();
        let v = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let sc = score_all(0, &z, &v, 1, &[]).unwrap();
        assert_eq!(sc[0].interest, 5.0);
        assert_eq!(sc[0].disinterest, 0.0);
        assert_eq!(sc.len(), 2);
        assert!(score_all(1, &z, &v, 1, &[]).is_err());
        assert_eq!(score_all(0, &z, &v, 1, &[0]).unwrap().len(), 1);
    }
}
