//! Positive, negative and distorted bipartite graphs.
//!
//! Node rows are laid out users first (`0..n_users`) then items
//! (`n_users..n_users + n_items`), matching the embedding matrices.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::{axpy, Real};
use crate::rng::{SeedStreams, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    /// `1` or `-1`, as written in edge files.
    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Positive => 1,
            Sign::Negative => -1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SignedEdge {
    pub user: u32,
    pub item: u32,
    pub sign: Sign,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Node {
    User(u32),
    Item(u32),
}

/// Which graph of a [`SignedBipartiteGraph`] to query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphSide {
    Positive,
    Negative,
}

/// Undirected bipartite adjacency stored in both directions (CSR), with
/// neighbour lists sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteAdjacency {
    n_users: usize,
    n_items: usize,
    user_ptr: Vec<usize>,
    user_adj: Vec<u32>,
    item_ptr: Vec<usize>,
    item_adj: Vec<u32>,
}

fn csr(n_rows: usize, mut pairs: Vec<(u32, u32)>) -> (Vec<usize>, Vec<u32>) {
    pairs.sort_unstable();
    let mut ptr = vec![0usize; n_rows + 1];
    for &(r, _) in &pairs {
        ptr[r as usize + 1] += 1;
    }
    for r in 0..n_rows {
        ptr[r + 1] += ptr[r];
    }
    (ptr, pairs.into_iter().map(|(_, c)| c).collect())
}

impl BipartiteAdjacency {
    /// Build from `(user, item)` pairs. Pairs must be unique and in range.
    pub fn from_pairs(n_users: usize, n_items: usize, pairs: &[(u32, u32)]) -> Result<Self> {
        for &(u, i) in pairs {
            if u as usize >= n_users {
                return Err(Error::IndexOutOfRange {
                    what: "user",
                    index: u as u64,
                    bound: n_users as u64,
                });
            }
            if i as usize >= n_items {
                return Err(Error::IndexOutOfRange {
                    what: "item",
                    index: i as u64,
                    bound: n_items as u64,
                });
            }
        }
        let (user_ptr, user_adj) = csr(n_users, pairs.to_vec());
        for u in 0..n_users {
            let row = &user_adj[user_ptr[u]..user_ptr[u + 1]];
            if let Some(w) = row.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::DuplicateEdge {
                    user: u as u32,
                    item: w[0],
                });
            }
        }
        let (item_ptr, item_adj) = csr(n_items, pairs.iter().map(|&(u, i)| (i, u)).collect());
        Ok(Self {
            n_users,
            n_items,
            user_ptr,
            user_adj,
            item_ptr,
            item_adj,
        })
    }

    pub fn empty(n_users: usize, n_items: usize) -> Self {
        Self {
            n_users,
            n_items,
            user_ptr: vec![0; n_users + 1],
            user_adj: Vec::new(),
            item_ptr: vec![0; n_items + 1],
            item_adj: Vec::new(),
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn edge_count(&self) -> usize {
        self.user_adj.len()
    }

    #[inline]
    pub fn items_of(&self, user: u32) -> &[u32] {
        let u = user as usize;
        &self.user_adj[self.user_ptr[u]..self.user_ptr[u + 1]]
    }

    #[inline]
    pub fn users_of(&self, item: u32) -> &[u32] {
        let i = item as usize;
        &self.item_adj[self.item_ptr[i]..self.item_ptr[i + 1]]
    }

    #[inline]
    pub fn user_degree(&self, user: u32) -> usize {
        let u = user as usize;
        self.user_ptr[u + 1] - self.user_ptr[u]
    }

    #[inline]
    pub fn item_degree(&self, item: u32) -> usize {
        let i = item as usize;
        self.item_ptr[i + 1] - self.item_ptr[i]
    }

    pub fn degree(&self, node: Node) -> usize {
        match node {
            Node::User(u) => self.user_degree(u),
            Node::Item(i) => self.item_degree(i),
        }
    }

    #[inline]
    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.items_of(user).binary_search(&item).is_ok()
    }

    /// Edges in user-major ascending order.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n_users as u32).flat_map(move |u| self.items_of(u).iter().map(move |&i| (u, i)))
    }

    /// Symmetric normalization weight `1 / (√|N(x)| · √|N(y)|)` of an edge.
    /// Argument order does not matter; one node must be a user and the other
    /// an item.
    pub fn norm_coeff(&self, x: Node, y: Node) -> Result<f64> {
        let (u, i) = match (x, y) {
            (Node::User(u), Node::Item(i)) | (Node::Item(i), Node::User(u)) => (u, i),
            _ => {
                return Err(Error::InvalidArgument(
                    "normalization is defined between a user and an item".into(),
                ))
            }
        };
        if u as usize >= self.n_users || i as usize >= self.n_items || !self.contains(u, i) {
            return Err(Error::NotAdjacent { user: u, item: i });
        }
        let du = self.user_degree(u) as f64;
        let di = self.item_degree(i) as f64;
        Ok(1.0 / (Float::sqrt(du) * Float::sqrt(di)))
    }

    fn inv_sqrt_degrees<F: Real>(&self) -> (Vec<F>, Vec<F>) {
        let inv = |d: usize| {
            if d == 0 {
                F::zero()
            } else {
                F::one() / F::of(d as f64).sqrt()
            }
        };
        (
            (0..self.n_users as u32).map(|u| inv(self.user_degree(u))).collect(),
            (0..self.n_items as u32).map(|i| inv(self.item_degree(i))).collect(),
        )
    }

    /// One light-graph-convolution layer: every row becomes the normalized
    /// sum of its neighbours' rows. Isolated rows become zero.
    pub fn propagate_layer<F: Real>(&self, x: &Matrix<F>, out: &mut Matrix<F>) {
        let (inv_u, inv_i) = self.inv_sqrt_degrees::<F>();
        self.layer_with(x, out, &inv_u, &inv_i);
    }

    fn layer_with<F: Real>(&self, x: &Matrix<F>, out: &mut Matrix<F>, inv_u: &[F], inv_i: &[F]) {
        let nu = self.n_users;
        debug_assert_eq!(x.rows(), nu + self.n_items);
        out.fill(F::zero());
        for u in 0..nu {
            let cu = inv_u[u];
            let dst = out.row_mut(u);
            for &i in self.items_of(u as u32) {
                axpy(cu * inv_i[i as usize], x.row(nu + i as usize), dst);
            }
        }
        for i in 0..self.n_items {
            let ci = inv_i[i];
            let dst = out.row_mut(nu + i);
            for &u in self.users_of(i as u32) {
                axpy(ci * inv_u[u as usize], x.row(u as usize), dst);
            }
        }
    }

    fn check_rows<F: Real>(&self, x: &Matrix<F>) -> Result<()> {
        let n = self.n_users + self.n_items;
        if x.rows() != n {
            return Err(Error::Shape {
                what: "propagation input",
                expected: (n, x.cols()),
                found: x.shape(),
            });
        }
        Ok(())
    }

    /// Run `layers` propagation steps from `x0` and return the layer mean
    /// `1/(K+1) Σ_k X^(k)` together with every layer `X^(0..=K)`.
    pub fn propagate<F: Real>(&self, x0: &Matrix<F>, layers: usize) -> Result<Propagation<F>> {
        self.check_rows(x0)?;
        let (inv_u, inv_i) = self.inv_sqrt_degrees::<F>();
        let mut per_layer = Vec::with_capacity(layers + 1);
        per_layer.push(x0.clone());
        for k in 0..layers {
            let mut next = Matrix::zeros(x0.rows(), x0.cols());
            self.layer_with(&per_layer[k], &mut next, &inv_u, &inv_i);
            per_layer.push(next);
        }
        let mut mean = Matrix::zeros(x0.rows(), x0.cols());
        for layer in &per_layer {
            mean.add_scaled(F::one(), layer);
        }
        mean.scale(F::one() / F::of((layers + 1) as f64));
        Ok(Propagation { mean, layers: per_layer })
    }

    /// Layer mean only, without retaining intermediate layers.
    ///
    /// The propagation operator is symmetric, so this is also its own
    /// adjoint: applying it to an upstream gradient yields the gradient with
    /// respect to `x0`.
    pub fn propagate_mean<F: Real>(&self, x0: &Matrix<F>, layers: usize) -> Result<Matrix<F>> {
        self.check_rows(x0)?;
        let (inv_u, inv_i) = self.inv_sqrt_degrees::<F>();
        let mut mean = x0.clone();
        let mut cur = x0.clone();
        let mut next = Matrix::zeros(x0.rows(), x0.cols());
        for _ in 0..layers {
            self.layer_with(&cur, &mut next, &inv_u, &inv_i);
            mean.add_scaled(F::one(), &next);
            core::mem::swap(&mut cur, &mut next);
        }
        mean.scale(F::one() / F::of((layers + 1) as f64));
        Ok(mean)
    }
}

/// Output of [`BipartiteAdjacency::propagate`].
#[derive(Clone, Debug)]
pub struct Propagation<F> {
    pub mean: Matrix<F>,
    pub layers: Vec<Matrix<F>>,
}

/// Edge-disjoint positive and negative graphs over one user/item set.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedBipartiteGraph {
    positive: BipartiteAdjacency,
    negative: BipartiteAdjacency,
}

impl SignedBipartiteGraph {
    /// Split signed edges into the positive and negative graphs. A pair may
    /// appear at most once across both signs.
    pub fn build(edges: &[SignedEdge], n_users: usize, n_items: usize) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for e in edges {
            if !seen.insert((e.user, e.item)) {
                return Err(Error::DuplicateEdge {
                    user: e.user,
                    item: e.item,
                });
            }
            match e.sign {
                Sign::Positive => pos.push((e.user, e.item)),
                Sign::Negative => neg.push((e.user, e.item)),
            }
        }
        Ok(Self {
            positive: BipartiteAdjacency::from_pairs(n_users, n_items, &pos)?,
            negative: BipartiteAdjacency::from_pairs(n_users, n_items, &neg)?,
        })
    }

    pub fn n_users(&self) -> usize {
        self.positive.n_users
    }

    pub fn n_items(&self) -> usize {
        self.positive.n_items
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users() + self.n_items()
    }

    pub fn positive(&self) -> &BipartiteAdjacency {
        &self.positive
    }

    pub fn negative(&self) -> &BipartiteAdjacency {
        &self.negative
    }

    pub fn side(&self, side: GraphSide) -> &BipartiteAdjacency {
        match side {
            GraphSide::Positive => &self.positive,
            GraphSide::Negative => &self.negative,
        }
    }

    pub fn norm_coeff(&self, x: Node, y: Node, side: GraphSide) -> Result<f64> {
        self.side(side).norm_coeff(x, y)
    }

    /// All edges, positives first, each group user-major.
    pub fn edges(&self) -> Vec<SignedEdge> {
        let pos = self.positive.pairs().map(|(user, item)| SignedEdge {
            user,
            item,
            sign: Sign::Positive,
        });
        let neg = self.negative.pairs().map(|(user, item)| SignedEdge {
            user,
            item,
            sign: Sign::Negative,
        });
        pos.chain(neg).collect()
    }

    /// Items the user interacted with in either graph, ascending.
    pub fn seen_items(&self, user: u32) -> Vec<u32> {
        let mut all: Vec<u32> = self
            .positive
            .items_of(user)
            .iter()
            .chain(self.negative.items_of(user))
            .copied()
            .collect();
        all.sort_unstable();
        all
    }

    /// Remove each negative edge independently with probability `p`.
    pub fn distort(&self, p: f64, seed: u64) -> Result<DistortedGraph> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "edge removal probability must lie in [0, 1], got {p}"
            )));
        }
        let mut rng = SeedStreams::new(seed).rng(Stream::Distortion);
        // One draw per undirected edge keeps both adjacency directions in agreement.
        let kept: Vec<(u32, u32)> = self
            .negative
            .pairs()
            .filter(|_| rng.gen::<f64>() >= p)
            .collect();
        Ok(DistortedGraph {
            adjacency: BipartiteAdjacency::from_pairs(self.n_users(), self.n_items(), &kept)?,
            removal_probability: p,
            seed,
        })
    }
}

/// The negative graph after random edge removal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistortedGraph {
    pub adjacency: BipartiteAdjacency,
    pub removal_probability: f64,
    pub seed: u64,
}

impl DistortedGraph {
    /// The undistorted negative graph itself (`p = 0`).
    pub fn identity_of(graph: &SignedBipartiteGraph) -> Self {
        Self {
            adjacency: graph.negative.clone(),
            removal_probability: 0.0,
            seed: 0,
        }
    }

    pub fn norm_coeff(&self, x: Node, y: Node) -> Result<f64> {
        self.adjacency.norm_coeff(x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(user: u32, item: u32, sign: Sign) -> SignedEdge {
        SignedEdge { user, item, sign }
    }

    #[test]
    fn build_splits_by_sign() {
        let g = SignedBipartiteGraph::build(
            &[e(0, 0, Sign::Positive), e(0, 1, Sign::Negative)],
            1,
            2,
        )
        .unwrap();
        assert_eq!(g.positive().user_degree(0), 1);
        assert_eq!(g.negative().user_degree(0), 1);
        assert_eq!(g.seen_items(0), vec![0, 1]);
    }

    #[test]
    fn no_negative_edges() {
        let g = SignedBipartiteGraph::build(&[e(0, 0, Sign::Positive)], 2, 2).unwrap();
        assert_eq!(g.negative().edge_count(), 0);
        assert!((0..2).all(|u| g.negative().user_degree(u) == 0));
        assert!((0..2).all(|i| g.negative().item_degree(i) == 0));
    }

    #[test]
    fn clique_degrees() {
        let edges: Vec<_> = (0..4)
            .flat_map(|u| (0..4).map(move |i| e(u, i, Sign::Positive)))
            .collect();
        let g = SignedBipartiteGraph::build(&edges, 4, 4).unwrap();
        assert!((0..4).all(|n| g.positive().user_degree(n) == 4 && g.positive().item_degree(n) == 4));
        let c = g
            .norm_coeff(Node::User(1), Node::Item(2), GraphSide::Positive)
            .unwrap();
        assert!((c - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_conflicting_signs_and_bad_indices() {
        let dup = SignedBipartiteGraph::build(&[e(0, 0, Sign::Positive), e(0, 0, Sign::Negative)], 1, 1);
        assert_eq!(dup, Err(Error::DuplicateEdge { user: 0, item: 0 }));
        assert!(SignedBipartiteGraph::build(&[e(3, 0, Sign::Positive)], 2, 2).is_err());
        assert!(SignedBipartiteGraph::build(&[e(0, 5, Sign::Positive)], 2, 2).is_err());
    }

    #[test]
    fn norm_coeff_values() {
        // user 0 has degree 2; item 0 has degree 8.
        let mut edges = vec![e(0, 0, Sign::Positive), e(0, 1, Sign::Positive)];
        for u in 1..8 {
            edges.push(e(u, 0, Sign::Positive));
        }
        let g = SignedBipartiteGraph::build(&edges, 8, 2).unwrap();
        let c = g.norm_coeff(Node::User(0), Node::Item(0), GraphSide::Positive).unwrap();
        assert!((c - 0.25).abs() < 1e-15);
        let sym = g.norm_coeff(Node::Item(0), Node::User(0), GraphSide::Positive).unwrap();
        assert_eq!(c, sym);

        let single = SignedBipartiteGraph::build(&[e(0, 0, Sign::Negative)], 1, 1).unwrap();
        assert_eq!(
            single.norm_coeff(Node::User(0), Node::Item(0), GraphSide::Negative),
            Ok(1.0)
        );
        assert_eq!(
            single.norm_coeff(Node::User(0), Node::Item(0), GraphSide::Positive),
            Err(Error::NotAdjacent { user: 0, item: 0 })
        );
        assert!(single
            .norm_coeff(Node::User(0), Node::User(0), GraphSide::Negative)
            .is_err());
    }

    #[test]
    fn distort_extremes() {
        let edges: Vec<_> = (0..5)
            .flat_map(|u| (0..5).map(move |i| e(u, i, Sign::Negative)))
            .collect();
        let g = SignedBipartiteGraph::build(&edges, 5, 5).unwrap();
        assert_eq!(g.distort(0.0, 1).unwrap().adjacency, *g.negative());
        assert_eq!(g.distort(1.0, 1).unwrap().adjacency.edge_count(), 0);
        assert!(g.distort(1.5, 1).is_err());
        assert!(g.distort(-0.1, 1).is_err());
        assert_eq!(g.distort(0.3, 9).unwrap(), g.distort(0.3, 9).unwrap());
    }

    #[test]
    fn distort_half_of_ten_thousand() {
        let edges: Vec<_> = (0..100)
            .flat_map(|u| (0..100).map(move |i| e(u, i, Sign::Negative)))
            .collect();
        let g = SignedBipartiteGraph::build(&edges, 100, 100).unwrap();
        for seed in 0..5 {
            let d = g.distort(0.5, seed).unwrap();
            let kept = d.adjacency.edge_count();
            assert!((4871..=5129).contains(&kept), "kept {kept}");
            for (u, i) in d.adjacency.pairs() {
                assert!(g.negative().contains(u, i));
                assert!(d.adjacency.users_of(i).contains(&u));
            }
        }
    }

    #[test]
    fn propagation_worked_example() {
        // u0 linked to i0 and i1, each item of degree one.
        let g = SignedBipartiteGraph::build(
            &[e(0, 0, Sign::Positive), e(0, 1, Sign::Positive)],
            1,
            2,
        )
        .unwrap();
        let x0 = Matrix::from_vec(3, 2, vec![1.0f64, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = g.positive().propagate(&x0, 1).unwrap();
        assert!((out.mean.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((out.mean.get(0, 1) - 0.707_106_781_186_547_5).abs() < 1e-12);
        assert_eq!(out.layers.len(), 2);
        assert_eq!(out.mean, g.positive().propagate_mean(&x0, 1).unwrap());
    }

    #[test]
    fn zero_layers_is_identity_and_isolated_rows_shrink() {
        let g = SignedBipartiteGraph::build(&[e(0, 0, Sign::Positive)], 2, 1).unwrap();
        let x0 = Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64 + 1.0);
        assert_eq!(g.positive().propagate(&x0, 0).unwrap().mean, x0);
        let out = g.positive().propagate_mean(&x0, 3).unwrap();
        // user 1 is isolated
        assert!((out.get(1, 0) - x0.get(1, 0) / 4.0).abs() < 1e-12);
        assert!((out.get(1, 1) - x0.get(1, 1) / 4.0).abs() < 1e-12);
    }
}
