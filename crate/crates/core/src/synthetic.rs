//! Block-structured synthetic dataset with known ground truth.
//!
//! Users and items each split into two blocks. User `j` of a block likes a
//! circular window of items in the same item block and dislikes a window in
//! the other block. A share of the positives is held out as test ground
//! truth.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::data::fold_assignment;
use crate::error::{Error, Result};
use crate::graph::{Sign, SignedBipartiteGraph, SignedEdge};
use crate::rank::{ground_truth, GroundTruth};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub users_per_block: usize,
    pub items_per_block: usize,
    /// Width of each user's liked window.
    pub positive_window: usize,
    /// Width of each user's disliked window in the other block.
    pub negative_window: usize,
    /// One in `test_folds` positives is held out.
    pub test_folds: usize,
    pub seed: u64,
}

impl Default for BlockSpec {
    fn default() -> Self {
        Self {
            users_per_block: 100,
            items_per_block: 200,
            positive_window: 20,
            negative_window: 10,
            test_folds: 5,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockDataset {
    pub spec: BlockSpec,
    pub n_users: usize,
    pub n_items: usize,
    pub train: SignedBipartiteGraph,
    pub train_edges: Vec<SignedEdge>,
    pub test: GroundTruth,
}

impl BlockDataset {
    pub fn user_block(&self, user: u32) -> usize {
        user as usize / self.spec.users_per_block
    }

    pub fn item_block(&self, item: u32) -> usize {
        item as usize / self.spec.items_per_block
    }
}

/// All signed edges of the full (unsplit) dataset.
pub fn block_edges(spec: &BlockSpec) -> Vec<SignedEdge> {
    let (nu, ni) = (spec.users_per_block, spec.items_per_block);
    let stride = (ni / nu).max(1);
    let mut edges = Vec::new();
    for block in 0..2 {
        let other = 1 - block;
        for j in 0..nu {
            let user = (block * nu + j) as u32;
            let start = j * stride;
            for k in 0..spec.positive_window {
                edges.push(SignedEdge {
                    user,
                    item: (block * ni + (start + k) % ni) as u32,
                    sign: Sign::Positive,
                });
            }
            for k in 0..spec.negative_window {
                edges.push(SignedEdge {
                    user,
                    item: (other * ni + (start + k) % ni) as u32,
                    sign: Sign::Negative,
                });
            }
        }
    }
    edges
}

pub fn block_dataset(spec: BlockSpec) -> Result<BlockDataset> {
    if spec.users_per_block == 0
        || spec.items_per_block == 0
        || spec.positive_window > spec.items_per_block
        || spec.negative_window > spec.items_per_block
        || spec.test_folds < 2
    {
        return Err(Error::InvalidArgument("inconsistent block layout".into()));
    }
    let edges = block_edges(&spec);
    let positives: Vec<usize> = (0..edges.len())
        .filter(|&k| edges[k].sign == Sign::Positive)
        .collect();
    let folds = fold_assignment(positives.len(), spec.test_folds, spec.seed);
    let held: BTreeSet<usize> = positives
        .iter()
        .zip(&folds)
        .filter(|(_, &f)| f == 0)
        .map(|(&k, _)| k)
        .collect();
    let train_edges: Vec<SignedEdge> = (0..edges.len())
        .filter(|k| !held.contains(k))
        .map(|k| edges[k])
        .collect();
    let test = ground_truth(held.iter().map(|&k| (edges[k].user, edges[k].item)));
    let (n_users, n_items) = (2 * spec.users_per_block, 2 * spec.items_per_block);
    Ok(BlockDataset {
        spec,
        n_users,
        n_items,
        train: SignedBipartiteGraph::build(&train_edges, n_users, n_items)?,
        train_edges,
        test,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fraction of users and items whose training positive profile lies nearer
/// to their own block's centroid than to the other block's.
pub fn centroid_separability(data: &BlockDataset) -> f64 {
    let g = data.train.positive();
    let profile_user = |u: u32| {
        let mut row = alloc::vec![0.0; data.n_items];
        for &i in g.items_of(u) {
            row[i as usize] = 1.0;
        }
        row
    };
    let profile_item = |i: u32| {
        let mut row = alloc::vec![0.0; data.n_users];
        for &u in g.users_of(i) {
            row[u as usize] = 1.0;
        }
        row
    };
    let users: Vec<Vec<f64>> = (0..data.n_users as u32).map(profile_user).collect();
    let items: Vec<Vec<f64>> = (0..data.n_items as u32).map(profile_item).collect();
    let correct = |rows: &[Vec<f64>], block_of: &dyn Fn(usize) -> usize| {
        let width = rows.first().map_or(0, Vec::len);
        let mut centroid = [alloc::vec![0.0; width], alloc::vec![0.0; width]];
        let mut count = [0usize; 2];
        for (r, row) in rows.iter().enumerate() {
            let b = block_of(r);
            count[b] += 1;
            for (c, x) in centroid[b].iter_mut().zip(row) {
                *c += x;
            }
        }
        for b in 0..2 {
            let n = count[b].max(1) as f64;
            centroid[b].iter_mut().for_each(|c| *c /= n);
        }
        rows.iter()
            .enumerate()
            .filter(|(r, row)| {
                let own = block_of(*r);
                sq_dist(row, &centroid[own]) < sq_dist(row, &centroid[1 - own])
            })
            .count()
    };
    let ok_users = correct(&users, &|r| data.user_block(r as u32));
    let ok_items = correct(&items, &|r| data.item_block(r as u32));
    (ok_users + ok_items) as f64 / (data.n_users + data.n_items) as f64
}

/// Recall@`k` of item co-occurrence scoring on the positive training graph:
/// an item's score is the number of two-hop paths from the user. Shows how
/// much signal the held-out items leave in the training graph.
pub fn cooccurrence_recall(data: &BlockDataset, k: usize) -> f64 {
    let g = data.train.positive();
    let mut total = 0.0;
    let mut n = 0usize;
    for (&u, truth) in &data.test {
        let mut score = alloc::vec![0u32; data.n_items];
        for &i in g.items_of(u) {
            for &v in g.users_of(i) {
                for &j in g.items_of(v) {
                    score[j as usize] += 1;
                }
            }
        }
        let seen = data.train.seen_items(u);
        let mut cand: Vec<u32> = (0..data.n_items as u32)
            .filter(|i| seen.binary_search(i).is_err())
            .collect();
        cand.sort_by(|a, b| score[*b as usize].cmp(&score[*a as usize]).then(a.cmp(b)));
        let hits = cand.iter().take(k).filter(|i| truth.contains(i)).count();
        total += hits as f64 / truth.len() as f64;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}
