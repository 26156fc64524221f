//! Training-triple generation and mini-batching.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{BipartiteAdjacency, SignedBipartiteGraph};
use crate::loss::{FeedbackSide, TrainingTriple};

/// Draw `per_edge` triples for every edge of one side. `j` is uniform over
/// the items outside the user's neighbourhood on that side, by rejection.
/// Users adjacent to every item contribute nothing.
pub fn sample_side(
    adjacency: &BipartiteAdjacency,
    side: FeedbackSide,
    per_edge: usize,
    rng: &mut impl Rng,
) -> Vec<TrainingTriple> {
    let n_items = adjacency.n_items();
    let mut out = Vec::with_capacity(adjacency.edge_count() * per_edge);
    for user in 0..adjacency.n_users() as u32 {
        let seen = adjacency.items_of(user);
        if seen.is_empty() {
            continue;
        }
        if seen.len() >= n_items {
            log::warn!("user {user} is adjacent to every item on the {side:?} side; its edges are skipped");
            continue;
        }
        for &observed in seen {
            for _ in 0..per_edge {
                let sampled = loop {
                    let j = rng.gen_range(0..n_items as u32);
                    if seen.binary_search(&j).is_err() {
                        break j;
                    }
                };
                out.push(TrainingTriple {
                    user,
                    observed,
                    sampled,
                    side,
                });
            }
        }
    }
    out
}

/// One epoch of shuffled triples, split into mini-batches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochBatches {
    pub positive: Vec<TrainingTriple>,
    pub negative: Vec<TrainingTriple>,
    pub batch_size: usize,
}

impl EpochBatches {
    /// Number of optimizer steps: the longer side's batch count.
    pub fn steps(&self) -> usize {
        let count = |n: usize| n.div_ceil(self.batch_size);
        count(self.positive.len()).max(count(self.negative.len()))
    }

    /// The `(B_p, B_n)` pair of step `s`. The shorter side wraps around.
    pub fn pair(&self, s: usize) -> (&[TrainingTriple], &[TrainingTriple]) {
        (chunk(&self.positive, self.batch_size, s), chunk(&self.negative, self.batch_size, s))
    }
}

fn chunk(all: &[TrainingTriple], size: usize, s: usize) -> &[TrainingTriple] {
    let n = all.len().div_ceil(size);
    if n == 0 {
        return &[];
    }
    let start = (s % n) * size;
    &all[start..(start + size).min(all.len())]
}

/// Sample and shuffle both sides for one epoch.
pub fn sample_batches(
    graph: &SignedBipartiteGraph,
    per_edge: usize,
    batch_size: usize,
    sides: (bool, bool),
    rng: &mut impl Rng,
) -> Result<EpochBatches> {
    if per_edge == 0 || batch_size == 0 {
        return Err(Error::InvalidArgument(
            "negative samples per edge and batch size must be at least 1".into(),
        ));
    }
    let mut positive = if sides.0 {
        sample_side(graph.positive(), FeedbackSide::Positive, per_edge, rng)
    } else {
        Vec::new()
    };
    let mut negative = if sides.1 {
        sample_side(graph.negative(), FeedbackSide::Negative, per_edge, rng)
    } else {
        Vec::new()
    };
    positive.shuffle(rng);
    negative.shuffle(rng);
    Ok(EpochBatches {
        positive,
        negative,
        batch_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Sign, SignedEdge};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edge(user: u32, item: u32, sign: Sign) -> SignedEdge {
        SignedEdge { user, item, sign }
    }

    #[test]
    fn ten_edges_forty_samples_gives_four_hundred() {
        let edges: Vec<_> = (0..10).map(|k| edge(k % 3, k, Sign::Positive)).collect();
        let g = SignedBipartiteGraph::build(&edges, 3, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_batches(&g, 40, 1024, (true, true), &mut rng).unwrap();
        assert_eq!(b.positive.len(), 400);
        assert!(b.negative.is_empty());
        assert_eq!(b.steps(), 1);
    }

    #[test]
    fn saturated_user_contributes_nothing() {
        let edges = [
            edge(0, 0, Sign::Positive),
            edge(0, 1, Sign::Positive),
            edge(1, 0, Sign::Positive),
        ];
        let g = SignedBipartiteGraph::build(&edges, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_side(g.positive(), FeedbackSide::Positive, 5, &mut rng);
        assert_eq!(t.len(), 5);
        assert!(t.iter().all(|t| t.user == 1 && t.sampled == 1));
    }

    #[test]
    fn sampled_item_never_in_same_side_neighbourhood() {
        let edges: Vec<_> = (0..6)
            .map(|i| edge(0, i, Sign::Positive))
            .chain([edge(0, 7, Sign::Negative)])
            .collect();
        let g = SignedBipartiteGraph::build(&edges, 1, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = sample_side(g.positive(), FeedbackSide::Positive, 100_000 / 6 + 1, &mut rng);
        assert!(t.len() >= 100_000);
        assert!(t.iter().all(|t| t.sampled >= 6));
        // opposite-side neighbours stay eligible
        assert!(t.iter().any(|t| t.sampled == 7));
    }

    #[test]
    fn round_robin_wraps_the_shorter_side() {
        let tr = |k| TrainingTriple {
            user: 0,
            observed: k,
            sampled: 0,
            side: FeedbackSide::Positive,
        };
        let b = EpochBatches {
            positive: (0..5).map(tr).collect(),
            negative: (0..2).map(tr).collect(),
            batch_size: 2,
        };
        assert_eq!(b.steps(), 3);
        let (p, n) = b.pair(2);
        assert_eq!(p.len(), 1);
        assert_eq!(n.len(), 2);
        assert_eq!(b.pair(1).1, b.pair(0).1);
    }

    #[test]
    fn rejects_zero_sizes() {
        let g = SignedBipartiteGraph::build(&[], 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_batches(&g, 0, 4, (true, true), &mut rng).is_err());
        assert!(sample_batches(&g, 1, 0, (true, true), &mut rng).is_err());
    }
}
