use std::collections::BTreeSet;

use proptest::prelude::*;

use pane_gnn_core::graph::{BipartiteAdjacency, Node, Sign, SignedBipartiteGraph, SignedEdge};
use pane_gnn_core::matrix::Matrix;
use pane_gnn_core::model::{forward, AttentionMode, DropoutMasks, ForwardOptions, Mode, ModelParams, ParamTensor};
use pane_gnn_core::optim::{Adam, AdamConfig, OptimizerState};
use pane_gnn_core::rank::{kept_set, recommend, user_metrics, DisinterestFilter, MetricOptions, ScoredItem};

/// Bipartite pair lists with at most 8 users and 8 items.
fn pairs() -> impl Strategy<Value = (usize, usize, Vec<(u32, u32)>)> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(nu, ni)| {
        proptest::collection::btree_set((0..nu as u32, 0..ni as u32), 0..=nu * ni)
            .prop_map(move |s| (nu, ni, s.into_iter().collect()))
    })
}

fn features(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    proptest::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn dot(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

proptest! {
    #[test]
    fn propagation_layer_matches_neighbour_sum(
        (nu, ni, p) in pairs(),
        seed in any::<u64>(),
    ) {
        let adj = BipartiteAdjacency::from_pairs(nu, ni, &p).unwrap();
        let x = pane_gnn_core::model::glorot_init::<f64>(nu + ni, 3, seed);
        let mut out = Matrix::zeros(nu + ni, 3);
        adj.propagate_layer(&x, &mut out);
        for u in 0..nu as u32 {
            let mut want = [0.0; 3];
            for &i in adj.items_of(u) {
                let c = adj.norm_coeff(Node::User(u), Node::Item(i)).unwrap();
                for (w, v) in want.iter_mut().zip(x.row(nu + i as usize)) {
                    *w += c * v;
                }
            }
            for (a, b) in out.row(u as usize).iter().zip(want) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn propagation_is_linear_and_self_adjoint(
        (nu, ni, p) in pairs(),
        layers in 0usize..=4,
        a in -2.0f64..2.0,
        (x, y) in (features(16, 2), features(16, 2)),
    ) {
        let adj = BipartiteAdjacency::from_pairs(nu, ni, &p).unwrap();
        let n = nu + ni;
        let (x, y) = (x.slice_rows(0, n), y.slice_rows(0, n));
        let mut combo = x.clone();
        combo.scale(a);
        combo.add_scaled(1.0, &y);
        let px = adj.propagate_mean(&x, layers).unwrap();
        let py = adj.propagate_mean(&y, layers).unwrap();
        let mut want = px.clone();
        want.scale(a);
        want.add_scaled(1.0, &py);
        prop_assert!(adj.propagate_mean(&combo, layers).unwrap().max_abs_diff(&want) < 1e-12);
        prop_assert!((dot(&px, &y) - dot(&x, &py)).abs() < 1e-12);
        let full = adj.propagate(&x, layers).unwrap();
        prop_assert_eq!(full.layers.len(), layers + 1);
        prop_assert!(full.mean.max_abs_diff(&px) < 1e-12);
    }

    #[test]
    fn attention_rows_are_convex(
        (nu, ni, p) in pairs(),
        seed in any::<u64>(),
        global in any::<bool>(),
    ) {
        let edges: Vec<SignedEdge> = p
            .iter()
            .enumerate()
            .map(|(k, &(user, item))| SignedEdge {
                user,
                item,
                sign: if k % 3 == 0 { Sign::Negative } else { Sign::Positive },
            })
            .collect();
        let g = SignedBipartiteGraph::build(&edges, nu, ni).unwrap();
        let params = ModelParams::<f64>::glorot(nu, ni, 4, seed).unwrap();
        let mut opts = ForwardOptions::full(2);
        opts.contrastive = false;
        opts.attention = if global { AttentionMode::Global } else { AttentionMode::PerNode };
        let att = forward(&params, &g, None, &opts, Mode::Eval).unwrap().embeddings.attention;
        for r in 0..att.rows() {
            let row = att.row(r);
            prop_assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            prop_assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
            if global {
                prop_assert_eq!(row, att.row(0));
            }
        }
    }

    #[test]
    fn kept_sets_grow_with_delta(
        v in proptest::collection::vec(-3.0f64..3.0, 1..30),
        mut deltas in proptest::collection::vec(-3.0f64..3.0, 2..5),
    ) {
        let scores: Vec<ScoredItem> = v
            .iter()
            .enumerate()
            .map(|(i, &d)| ScoredItem { item: i as u32, interest: 0.0, disinterest: d })
            .collect();
        deltas.sort_by(f64::total_cmp);
        deltas.push(f64::INFINITY);
        let sets: Vec<BTreeSet<u32>> = deltas.iter().map(|&d| kept_set(&scores, DisinterestFilter::below(d))).collect();
        for w in sets.windows(2) {
            prop_assert!(w[0].is_subset(&w[1]));
        }
        prop_assert_eq!(sets.last().unwrap().len(), scores.len());
    }

    #[test]
    fn metrics_match_set_arithmetic(
        interest in proptest::collection::vec(-1.0f64..1.0, 1..=8),
        gt_mask in proptest::collection::vec(any::<bool>(), 8),
        k in 1usize..=8,
    ) {
        let n = interest.len();
        let gt: BTreeSet<u32> = (0..n as u32).filter(|&i| gt_mask[i as usize]).collect();
        prop_assume!(!gt.is_empty());
        let scores: Vec<ScoredItem> = interest
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoredItem { item: i as u32, interest: s, disinterest: 0.0 })
            .collect();
        let list = recommend(0, k, DisinterestFilter::off(), &scores).unwrap();
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by(|&a, &b| interest[b as usize].total_cmp(&interest[a as usize]).then(a.cmp(&b)));
        order.truncate(k);
        let got: Vec<u32> = list.items.iter().map(|e| e.scored.item).collect();
        prop_assert_eq!(&got, &order);
        let hits = order.iter().filter(|i| gt.contains(i)).count() as f64;
        let dcg: f64 = order
            .iter()
            .enumerate()
            .filter(|(_, i)| gt.contains(i))
            .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
            .sum();
        let idcg: f64 = (0..k).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
        let (p, r, d) = user_metrics(Some(&list), &gt, k, MetricOptions::default());
        prop_assert_eq!(p, hits / k as f64);
        prop_assert_eq!(r, hits / gt.len() as f64);
        prop_assert!((d - dcg / idcg).abs() < 1e-15);
    }

    #[test]
    fn adam_matches_scalar_reference(
        grads in proptest::collection::vec(-5.0f64..5.0, 1..20),
        lr in 1e-4f64..1e-1,
    ) {
        let config = AdamConfig { learning_rate: lr, ..AdamConfig::default() };
        let adam = Adam::new(config).unwrap();
        let mut params = ModelParams::<f64>::zeros(1, 1, 1);
        let mut state = OptimizerState::new(&params);
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for (t, &g) in grads.iter().enumerate() {
            let mut gp = params.zeros_like();
            gp.interest.set(0, 0, g);
            adam.step(&mut params, &gp, &mut state).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            x -= lr * mh / (vh.sqrt() + 1e-8);
            prop_assert!((params.interest.get(0, 0) - x).abs() < 1e-12);
        }
        prop_assert_eq!(params.tensor(ParamTensor::Disinterest).frobenius_sq(), 0.0);
    }
}

#[test]
fn dropout_masks_are_inverted() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let m = DropoutMasks::<f64>::sample(400, 16, 0.5, &mut rng);
    let vals: BTreeSet<u64> = m.hidden.as_slice().iter().map(|x| x.to_bits()).collect();
    assert_eq!(vals, [0.0f64.to_bits(), 2.0f64.to_bits()].into_iter().collect());
    let mean = m.hidden.as_slice().iter().sum::<f64>() / m.hidden.as_slice().len() as f64;
    assert!((mean - 1.0).abs() < 0.05, "{mean}");
}
