//! Trainable parameters and the forward pass.
//!
//! The interest branch fuses two views of the initial interest table: its
//! propagation over the positive graph and a two-layer ReLU MLP transform of
//! it. A per-node attention layer mixes the two. The disinterest table is
//! propagated over the negative graph and, during training, over a distorted
//! copy of it.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{DistortedGraph, SignedBipartiteGraph};
use crate::matrix::Matrix;
use crate::real::{sigmoid, Real};
use crate::rng::{SeedStreams, Stream};

/// Names of the six trainable tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamTensor {
    Interest,
    Disinterest,
    MlpHidden,
    MlpOutput,
    AttentionProjection,
    AttentionScore,
}

impl ParamTensor {
    pub const ALL: [ParamTensor; 6] = [
        ParamTensor::Interest,
        ParamTensor::Disinterest,
        ParamTensor::MlpHidden,
        ParamTensor::MlpOutput,
        ParamTensor::AttentionProjection,
        ParamTensor::AttentionScore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamTensor::Interest => "interest_init",
            ParamTensor::Disinterest => "disinterest_init",
            ParamTensor::MlpHidden => "mlp_w1",
            ParamTensor::MlpOutput => "mlp_w2",
            ParamTensor::AttentionProjection => "att_w1",
            ParamTensor::AttentionScore => "att_w2",
        }
    }

    /// True for the two embedding tables (the regularized group).
    pub fn is_embedding(self) -> bool {
        matches!(self, ParamTensor::Interest | ParamTensor::Disinterest)
    }
}

/// Embedding tables (`N x H`, users then items) and network weights.
///
/// The same struct doubles as the container for gradients and optimizer
/// moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    pub n_users: usize,
    pub n_items: usize,
    pub interest: Matrix<F>,
    pub disinterest: Matrix<F>,
    pub mlp_w1: Matrix<F>,
    pub mlp_w2: Matrix<F>,
    pub att_w1: Matrix<F>,
    /// `H x 1`
    pub att_w2: Matrix<F>,
}

fn glorot_with<F: Real>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<F> {
    let bound = num_traits::Float::sqrt(6.0 / (rows + cols) as f64);
    Matrix::from_fn(rows, cols, |_, _| F::of(rng.gen_range(-bound..=bound)))
}

/// Uniform Glorot initialization in `±√(6 / (rows + cols))`.
pub fn glorot_init<F: Real>(rows: usize, cols: usize, seed: u64) -> Matrix<F> {
    glorot_with(rows, cols, &mut SeedStreams::new(seed).rng(Stream::Init))
}

impl<F: Real> ModelParams<F> {
    /// Glorot-initialize every tensor from the run's init stream.
    pub fn glorot(n_users: usize, n_items: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || n_users + n_items == 0 {
            return Err(Error::InvalidArgument(
                "embedding size and node count must be positive".into(),
            ));
        }
        let n = n_users + n_items;
        let mut rng = SeedStreams::new(seed).rng(Stream::Init);
        Ok(Self {
            n_users,
            n_items,
            interest: glorot_with(n, dim, &mut rng),
            disinterest: glorot_with(n, dim, &mut rng),
            mlp_w1: glorot_with(dim, dim, &mut rng),
            mlp_w2: glorot_with(dim, dim, &mut rng),
            att_w1: glorot_with(dim, dim, &mut rng),
            att_w2: glorot_with(dim, 1, &mut rng),
        })
    }

    pub fn zeros(n_users: usize, n_items: usize, dim: usize) -> Self {
        let n = n_users + n_items;
        Self {
            n_users,
            n_items,
            interest: Matrix::zeros(n, dim),
            disinterest: Matrix::zeros(n, dim),
            mlp_w1: Matrix::zeros(dim, dim),
            mlp_w2: Matrix::zeros(dim, dim),
            att_w1: Matrix::zeros(dim, dim),
            att_w2: Matrix::zeros(dim, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n_users, self.n_items, self.dim())
    }

    /// Apply `f` to every entry of every tensor.
    pub fn map_like(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            n_users: self.n_users,
            n_items: self.n_items,
            interest: self.interest.map(&f),
            disinterest: self.disinterest.map(&f),
            mlp_w1: self.mlp_w1.map(&f),
            mlp_w2: self.mlp_w2.map(&f),
            att_w1: self.att_w1.map(&f),
            att_w2: self.att_w2.map(&f),
        }
    }

    pub fn dim(&self) -> usize {
        self.interest.cols()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn tensor(&self, which: ParamTensor) -> &Matrix<F> {
        match which {
            ParamTensor::Interest => &self.interest,
            ParamTensor::Disinterest => &self.disinterest,
            ParamTensor::MlpHidden => &self.mlp_w1,
            ParamTensor::MlpOutput => &self.mlp_w2,
            ParamTensor::AttentionProjection => &self.att_w1,
            ParamTensor::AttentionScore => &self.att_w2,
        }
    }

    pub fn tensor_mut(&mut self, which: ParamTensor) -> &mut Matrix<F> {
        match which {
            ParamTensor::Interest => &mut self.interest,
            ParamTensor::Disinterest => &mut self.disinterest,
            ParamTensor::MlpHidden => &mut self.mlp_w1,
            ParamTensor::MlpOutput => &mut self.mlp_w2,
            ParamTensor::AttentionProjection => &mut self.att_w1,
            ParamTensor::AttentionScore => &mut self.att_w2,
        }
    }

    /// Verify every tensor has the shape implied by `(n_users, n_items, H)`.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        let h = self.dim();
        let expected = |t: ParamTensor| match t {
            ParamTensor::Interest | ParamTensor::Disinterest => (n, h),
            ParamTensor::AttentionScore => (h, 1),
            _ => (h, h),
        };
        for t in ParamTensor::ALL {
            let m = self.tensor(t);
            if m.shape() != expected(t) {
                return Err(Error::Shape {
                    what: t.name(),
                    expected: expected(t),
                    found: m.shape(),
                });
            }
            if !m.is_finite() {
                return Err(Error::InvalidArgument(alloc::format!(
                    "{} contains non-finite entries",
                    t.name()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            n_users: self.n_users,
            n_items: self.n_items,
            interest: self.interest.cast(),
            disinterest: self.disinterest.cast(),
            mlp_w1: self.mlp_w1.cast(),
            mlp_w2: self.mlp_w2.cast(),
            att_w1: self.att_w1.cast(),
            att_w2: self.att_w2.cast(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttentionMode {
    /// One softmax over the two branch scores of each node.
    #[default]
    PerNode,
    /// Branch scores averaged over all nodes first; one weight pair shared by
    /// every row.
    Global,
}

/// Which parts of the model the forward pass computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    pub layers: usize,
    pub attention: AttentionMode,
    /// Propagate the interest table over the positive graph. When off the
    /// propagated view is the initial table itself.
    pub interest_propagation: bool,
    /// Compute the disinterest embeddings.
    pub disinterest: bool,
    /// Compute the distorted-graph view (training only).
    pub contrastive: bool,
}

impl ForwardOptions {
    pub fn full(layers: usize) -> Self {
        Self {
            layers,
            attention: AttentionMode::PerNode,
            interest_propagation: true,
            disinterest: true,
            contrastive: true,
        }
    }
}

/// Inverted-dropout multipliers (`0` or `1/(1-rate)`) for one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks<F> {
    /// Applied to the MLP hidden activation, `N x H`.
    pub hidden: Matrix<F>,
    /// Applied to the attention score of the propagated branch.
    pub score_propagated: Vec<F>,
    /// Applied to the attention score of the MLP branch.
    pub score_transformed: Vec<F>,
}

impl<F: Real> DropoutMasks<F> {
    /// All-ones masks.
    pub fn none(n_nodes: usize, dim: usize) -> Self {
        let mut hidden = Matrix::zeros(n_nodes, dim);
        hidden.fill(F::one());
        Self {
            hidden,
            score_propagated: alloc::vec![F::one(); n_nodes],
            score_transformed: alloc::vec![F::one(); n_nodes],
        }
    }

    pub fn sample(n_nodes: usize, dim: usize, rate: f64, rng: &mut impl Rng) -> Self {
        if rate <= 0.0 {
            return Self::none(n_nodes, dim);
        }
        let keep = F::of(1.0 / (1.0 - rate));
        let mut draw = || if rng.gen::<f64>() < rate { F::zero() } else { keep };
        let hidden = Matrix::from_fn(n_nodes, dim, |_, _| draw());
        let score_propagated = (0..n_nodes).map(|_| draw()).collect();
        let score_transformed = (0..n_nodes).map(|_| draw()).collect();
        Self {
            hidden,
            score_propagated,
            score_transformed,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Mode<'a, F> {
    Train(&'a DropoutMasks<F>),
    Eval,
}

/// Embeddings produced by one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet<F> {
    /// Fused interest embeddings.
    pub interest: Matrix<F>,
    /// Interest table after positive-graph propagation.
    pub propagated: Matrix<F>,
    /// Interest table after the MLP transform.
    pub transformed: Matrix<F>,
    /// Disinterest embeddings on the negative graph.
    pub disinterest: Option<Matrix<F>>,
    /// Disinterest embeddings on the distorted graph (training only).
    pub distorted: Option<Matrix<F>>,
    /// `N x 2` attention weights for the (propagated, transformed) branches.
    pub attention: Matrix<F>,
}

/// Forward intermediates retained for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace<F> {
    pub embeddings: EmbeddingSet<F>,
    pub(crate) options: ForwardOptions,
    pub(crate) hidden_pre: Matrix<F>,
    pub(crate) hidden: Matrix<F>,
    pub(crate) output_pre: Matrix<F>,
    pub(crate) tanh_propagated: Matrix<F>,
    pub(crate) tanh_transformed: Matrix<F>,
    pub(crate) dropout: Option<DropoutMasks<F>>,
}

struct MlpPass<F> {
    hidden_pre: Matrix<F>,
    hidden: Matrix<F>,
    output_pre: Matrix<F>,
    output: Matrix<F>,
}

fn relu<F: Real>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        F::zero()
    }
}

fn mlp_pass<F: Real>(
    z0: &Matrix<F>,
    w1: &Matrix<F>,
    w2: &Matrix<F>,
    hidden_mask: Option<&Matrix<F>>,
) -> MlpPass<F> {
    let hidden_pre = z0.matmul(w1);
    let mut hidden = hidden_pre.map(relu);
    if let Some(mask) = hidden_mask {
        for (h, &m) in hidden.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *h *= m;
        }
    }
    let output_pre = hidden.matmul(w2);
    let output = output_pre.map(relu);
    MlpPass {
        hidden_pre,
        hidden,
        output_pre,
        output,
    }
}

/// `ReLU(ReLU(Z0 · W1) · W2)` without dropout.
pub fn mlp_transform<F: Real>(z0: &Matrix<F>, w1: &Matrix<F>, w2: &Matrix<F>) -> Matrix<F> {
    mlp_pass(z0, w1, w2, None).output
}

struct AttentionPass<F> {
    fused: Matrix<F>,
    weights: Matrix<F>,
    tanh_propagated: Matrix<F>,
    tanh_transformed: Matrix<F>,
}

fn attention_pass<F: Real>(
    propagated: &Matrix<F>,
    transformed: &Matrix<F>,
    w1: &Matrix<F>,
    w2: &Matrix<F>,
    mode: AttentionMode,
    masks: Option<(&[F], &[F])>,
) -> AttentionPass<F> {
    let n = propagated.rows();
    let tanh_propagated = propagated.matmul(w1).map(|x| x.tanh());
    let tanh_transformed = transformed.matmul(w1).map(|x| x.tanh());
    let mut s1 = tanh_propagated.matmul(w2).into_vec();
    let mut s2 = tanh_transformed.matmul(w2).into_vec();
    if let Some((m1, m2)) = masks {
        s1.iter_mut().zip(m1).for_each(|(s, &m)| *s *= m);
        s2.iter_mut().zip(m2).for_each(|(s, &m)| *s *= m);
    }
    if mode == AttentionMode::Global && n > 0 {
        let inv_n = F::one() / F::of(n as f64);
        let a = s1.iter().copied().sum::<F>() * inv_n;
        let b = s2.iter().copied().sum::<F>() * inv_n;
        s1.iter_mut().for_each(|s| *s = a);
        s2.iter_mut().for_each(|s| *s = b);
    }
    let mut weights = Matrix::zeros(n, 2);
    let mut fused = Matrix::zeros(n, propagated.cols());
    for r in 0..n {
        let a1 = sigmoid(s1[r] - s2[r]);
        let a2 = F::one() - a1;
        weights.set(r, 0, a1);
        weights.set(r, 1, a2);
        let out = fused.row_mut(r);
        for ((o, &p), &t) in out.iter_mut().zip(propagated.row(r)).zip(transformed.row(r)) {
            *o = a1 * p + a2 * t;
        }
    }
    AttentionPass {
        fused,
        weights,
        tanh_propagated,
        tanh_transformed,
    }
}

/// Per-node attention fusion of the two interest views. Returns the fused
/// matrix and the `N x 2` weights.
pub fn attention_fuse<F: Real>(
    propagated: &Matrix<F>,
    transformed: &Matrix<F>,
    w1: &Matrix<F>,
    w2: &Matrix<F>,
) -> (Matrix<F>, Matrix<F>) {
    let pass = attention_pass(propagated, transformed, w1, w2, AttentionMode::PerNode, None);
    (pass.fused, pass.weights)
}

/// Compute all embeddings for the current parameters.
///
/// In [`Mode::Eval`] no dropout is applied and the distorted view is never
/// computed.
pub fn forward<F: Real>(
    params: &ModelParams<F>,
    graph: &SignedBipartiteGraph,
    distorted: Option<&DistortedGraph>,
    options: &ForwardOptions,
    mode: Mode<'_, F>,
) -> Result<Trace<F>> {
    params.validate()?;
    if graph.n_users() != params.n_users || graph.n_items() != params.n_items {
        return Err(Error::Shape {
            what: "graph vs parameters (users, items)",
            expected: (params.n_users, params.n_items),
            found: (graph.n_users(), graph.n_items()),
        });
    }
    let dropout = match mode {
        Mode::Train(m) => {
            let n = params.n_nodes();
            if m.hidden.shape() != (n, params.dim())
                || m.score_propagated.len() != n
                || m.score_transformed.len() != n
            {
                return Err(Error::Shape {
                    what: "dropout masks",
                    expected: (n, params.dim()),
                    found: m.hidden.shape(),
                });
            }
            Some(m.clone())
        }
        Mode::Eval => None,
    };

    let propagated = if options.interest_propagation {
        graph
            .positive()
            .propagate_mean(&params.interest, options.layers)?
    } else {
        params.interest.clone()
    };
    let mlp = mlp_pass(
        &params.interest,
        &params.mlp_w1,
        &params.mlp_w2,
        dropout.as_ref().map(|d| &d.hidden),
    );
    let att = attention_pass(
        &propagated,
        &mlp.output,
        &params.att_w1,
        &params.att_w2,
        options.attention,
        dropout
            .as_ref()
            .map(|d| (d.score_propagated.as_slice(), d.score_transformed.as_slice())),
    );

    let disinterest = if options.disinterest {
        Some(
            graph
                .negative()
                .propagate_mean(&params.disinterest, options.layers)?,
        )
    } else {
        None
    };
    let distorted_view = match (&dropout, options.disinterest && options.contrastive) {
        (Some(_), true) => {
            let d = distorted.ok_or(Error::MissingIntermediate("distorted graph"))?;
            if d.adjacency.n_users() != params.n_users || d.adjacency.n_items() != params.n_items {
                return Err(Error::Shape {
                    what: "distorted graph vs parameters (users, items)",
                    expected: (params.n_users, params.n_items),
                    found: (d.adjacency.n_users(), d.adjacency.n_items()),
                });
            }
            // The distorted view starts from the same initial disinterest table.
            Some(d.adjacency.propagate_mean(&params.disinterest, options.layers)?)
        }
        _ => None,
    };

    Ok(Trace {
        embeddings: EmbeddingSet {
            interest: att.fused,
            propagated,
            transformed: mlp.output,
            disinterest,
            distorted: distorted_view,
            attention: att.weights,
        },
        options: *options,
        hidden_pre: mlp.hidden_pre,
        hidden: mlp.hidden,
        output_pre: mlp.output_pre,
        tanh_propagated: att.tanh_propagated,
        tanh_transformed: att.tanh_transformed,
        dropout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Sign, SignedEdge};
    use alloc::vec;

    #[test]
    fn glorot_bounds_and_determinism() {
        let m: Matrix<f64> = glorot_init(64, 64, 3);
        assert!(m.as_slice().iter().all(|x| x.abs() <= 0.216_506_350_946_109_66));
        let one: Matrix<f64> = glorot_init(1, 1, 5);
        assert!(one.get(0, 0).abs() <= 3.0f64.sqrt());
        assert_eq!(m, glorot_init::<f64>(64, 64, 3));
        assert_ne!(m, glorot_init::<f64>(64, 64, 4));
    }

    #[test]
    fn mlp_examples() {
        let z0 = Matrix::from_vec(1, 2, vec![1.0f64, -1.0]).unwrap();
        let id = Matrix::identity(2);
        assert_eq!(mlp_transform(&z0, &id, &id).as_slice(), &[1.0, 0.0]);
        let zero = Matrix::<f64>::zeros(3, 2);
        assert_eq!(mlp_transform(&zero, &id, &id), zero);
        let w: Matrix<f64> = glorot_init(2, 2, 1);
        let x = Matrix::from_fn(5, 2, |r, c| r as f64 - c as f64 * 2.5);
        assert!(mlp_transform(&x, &w, &w).as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn attention_examples() {
        let z = Matrix::from_fn(4, 3, |r, c| (r as f64 + 1.0) * (c as f64 - 1.0));
        let w1: Matrix<f64> = glorot_init(3, 3, 2);
        let w2: Matrix<f64> = glorot_init(3, 1, 3);
        let (fused, alpha) = attention_fuse(&z, &z, &w1, &w2);
        assert!(fused.max_abs_diff(&z) < 1e-12);
        assert!(alpha.as_slice().iter().all(|&a| (a - 0.5).abs() < 1e-15));

        let other = z.map(|x| x * 2.0 + 1.0);
        let (_, alpha) = attention_fuse(&z, &other, &w1, &Matrix::zeros(3, 1));
        assert!(alpha.as_slice().iter().all(|&a| (a - 0.5).abs() < 1e-15));
    }

    #[test]
    fn attention_log_three_gap() {
        // H = 1, W1 = 1, W2 = 1: scores are tanh of the inputs.
        let s1 = 0.9f64;
        let target = s1.tanh() - 3.0f64.ln();
        let x2 = target.atanh();
        let p = Matrix::from_vec(1, 1, vec![s1]).unwrap();
        let t = Matrix::from_vec(1, 1, vec![x2]).unwrap();
        let one = Matrix::identity(1);
        let (_, alpha) = attention_fuse(&p, &t, &one, &one);
        assert!((alpha.get(0, 0) - 0.75).abs() < 1e-12);
        assert!((alpha.get(0, 1) - 0.25).abs() < 1e-12);
    }

    fn tiny_graph() -> SignedBipartiteGraph {
        SignedBipartiteGraph::build(
            &[
                SignedEdge { user: 0, item: 0, sign: Sign::Positive },
                SignedEdge { user: 1, item: 1, sign: Sign::Positive },
                SignedEdge { user: 0, item: 1, sign: Sign::Negative },
            ],
            2,
            2,
        )
        .unwrap()
    }

    #[test]
    fn forward_identity_configuration() {
        let g = tiny_graph();
        let mut p: ModelParams<f64> = ModelParams::glorot(2, 2, 3, 1).unwrap();
        p.interest = p.interest.map(f64::abs);
        p.mlp_w1 = Matrix::identity(3);
        p.mlp_w2 = Matrix::identity(3);
        p.att_w2 = Matrix::zeros(3, 1);
        let t = forward(&p, &g, None, &ForwardOptions::full(0), Mode::Eval).unwrap();
        assert!(t.embeddings.interest.max_abs_diff(&p.interest) < 1e-15);
        assert!(t.embeddings.distorted.is_none());
    }

    #[test]
    fn forward_empty_negative_graph_scales_initial_table() {
        let g = SignedBipartiteGraph::build(
            &[SignedEdge { user: 0, item: 0, sign: Sign::Positive }],
            2,
            2,
        )
        .unwrap();
        let p: ModelParams<f64> = ModelParams::glorot(2, 2, 3, 1).unwrap();
        let t = forward(&p, &g, None, &ForwardOptions::full(3), Mode::Eval).unwrap();
        let v = t.embeddings.disinterest.unwrap();
        let expect = p.disinterest.map(|x| x / 4.0);
        assert!(v.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn train_mode_requires_distorted_graph_and_eval_is_deterministic() {
        let g = tiny_graph();
        let p: ModelParams<f64> = ModelParams::glorot(2, 2, 3, 1).unwrap();
        let masks = DropoutMasks::none(4, 3);
        let opts = ForwardOptions::full(2);
        assert!(forward(&p, &g, None, &opts, Mode::Train(&masks)).is_err());
        let d = g.distort(0.0, 0).unwrap();
        let t = forward(&p, &g, Some(&d), &opts, Mode::Train(&masks)).unwrap();
        assert_eq!(t.embeddings.distorted, t.embeddings.disinterest);
        let a = forward(&p, &g, None, &opts, Mode::Eval).unwrap();
        let b = forward(&p, &g, None, &opts, Mode::Eval).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = tiny_graph();
        let p: ModelParams<f64> = ModelParams::glorot(3, 2, 3, 1).unwrap();
        assert!(matches!(
            forward(&p, &g, None, &ForwardOptions::full(1), Mode::Eval),
            Err(Error::Shape { .. })
        ));
    }
}
