//! Central finite-difference check of the analytic gradients in `f64`.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::grad::{loss_and_gradients, loss_value, StepInputs};
use crate::graph::{DistortedGraph, Sign, SignedBipartiteGraph, SignedEdge};
use crate::loss::{ContrastiveScope, FeedbackSide, Objective, TrainingTriple};
use crate::model::{forward, AttentionMode, DropoutMasks, ForwardOptions, Mode, ModelParams, ParamTensor};
use crate::rng::{SeedStreams, Stream};
use crate::train::{HyperParams, Variant};

/// Pre-activations closer than this to zero make a case unusable: a
/// perturbation of size `h` could cross the ReLU kink.
pub const KINK_MARGIN: f64 = 1e-2;

/// Denominator floor of the relative error, so coordinates whose true
/// derivative is zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub max_users: usize,
    pub max_items: usize,
    pub dim: usize,
    pub layers: usize,
    pub step: f64,
    pub dropout_rate: f64,
    pub removal_prob: f64,
    pub attention: AttentionMode,
    pub variant: Variant,
    /// Propagate the interest table (variant A never does).
    pub propagate_interest: bool,
    pub objective: Objective,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        let hp = HyperParams {
            contrastive_weight: 0.1,
            reg_weight: 0.1,
            ..HyperParams::default()
        };
        Self {
            max_users: 6,
            max_items: 6,
            dim: 3,
            layers: 2,
            step: 1e-3,
            dropout_rate: 0.5,
            removal_prob: 0.3,
            attention: AttentionMode::PerNode,
            variant: Variant::Full,
            propagate_interest: true,
            objective: hp.objective(Variant::Full),
        }
    }
}

impl GradCheckConfig {
    fn forward_options(&self) -> ForwardOptions {
        let mut o = self.variant.forward_options(self.layers, self.attention);
        o.interest_propagation &= self.propagate_interest;
        o
    }

    pub fn for_variant(variant: Variant) -> Self {
        let base = Self::default();
        Self {
            variant,
            objective: Objective {
                terms: variant.terms(),
                ..base.objective
            },
            ..base
        }
    }
}

/// One random problem instance.
#[derive(Clone, Debug)]
pub struct GradCheckCase {
    pub graph: SignedBipartiteGraph,
    pub distorted: DistortedGraph,
    pub params: ModelParams<f64>,
    pub dropout: DropoutMasks<f64>,
    pub positive: Vec<TrainingTriple>,
    pub negative: Vec<TrainingTriple>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Discrepancy {
    pub tensor: ParamTensor,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub worst: Option<Discrepancy>,
    /// Random cases discarded for lying too close to a ReLU kink.
    pub rejected: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.worst.map_or(0.0, |d| d.rel_error)
    }

    fn absorb(&mut self, other: GradCheckReport) {
        self.coordinates += other.coordinates;
        self.rejected += other.rejected;
        if other.max_rel_error() > self.max_rel_error() || self.worst.is_none() {
            self.worst = other.worst.or(self.worst);
        }
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn triples(adj: &crate::graph::BipartiteAdjacency, side: FeedbackSide, rng: &mut impl Rng) -> Vec<TrainingTriple> {
    let mut out = Vec::new();
    for (user, observed) in adj.pairs() {
        let seen = adj.items_of(user);
        let free: Vec<u32> = (0..adj.n_items() as u32)
            .filter(|j| seen.binary_search(j).is_err())
            .collect();
        if free.is_empty() {
            continue;
        }
        out.push(TrainingTriple {
            user,
            observed,
            sampled: free[rng.gen_range(0..free.len())],
            side,
        });
    }
    out
}

/// Draw a case; `None` when it falls too close to a ReLU kink.
pub fn random_case(config: &GradCheckConfig, seed: u64) -> Result<Option<GradCheckCase>> {
    let case = build_case(config, seed)?;
    let options = config.forward_options();
    let trace = forward(&case.params, &case.graph, Some(&case.distorted), &options, Mode::Train(&case.dropout))?;
    let near_kink = trace
        .hidden_pre
        .as_slice()
        .iter()
        .chain(trace.output_pre.as_slice())
        .any(|x| x.abs() < KINK_MARGIN);
    if near_kink && config.objective.terms.interest_active() {
        return Ok(None);
    }
    Ok(Some(case))
}

/// Draw a case without looking at the ReLU pre-activations.
pub fn build_case(config: &GradCheckConfig, seed: u64) -> Result<GradCheckCase> {
    let streams = SeedStreams::new(seed);
    let mut rng = streams.rng(Stream::Sampling);
    let n_users = rng.gen_range(2..=config.max_users.max(2));
    let n_items = rng.gen_range(2..=config.max_items.max(2));
    let mut edges = Vec::new();
    for user in 0..n_users as u32 {
        for item in 0..n_items as u32 {
            let x: f64 = rng.gen();
            let sign = if x < 0.35 {
                Sign::Positive
            } else if x < 0.6 {
                Sign::Negative
            } else {
                continue;
            };
            edges.push(SignedEdge { user, item, sign });
        }
    }
    let graph = SignedBipartiteGraph::build(&edges, n_users, n_items)?;
    let distorted = graph.distort(config.removal_prob, seed)?;
    let params = ModelParams::<f64>::glorot(n_users, n_items, config.dim, seed)?;
    let dropout = DropoutMasks::sample(
        n_users + n_items,
        config.dim,
        config.dropout_rate,
        &mut streams.rng(Stream::Dropout),
    );
    let positive = triples(graph.positive(), FeedbackSide::Positive, &mut rng);
    let negative = triples(graph.negative(), FeedbackSide::Negative, &mut rng);
    Ok(GradCheckCase {
        graph,
        distorted,
        params,
        dropout,
        positive,
        negative,
    })
}

/// Compare every coordinate of every tensor.
pub fn check_case(case: &GradCheckCase, config: &GradCheckConfig) -> Result<GradCheckReport> {
    let options = config.forward_options();
    let inputs = StepInputs {
        graph: &case.graph,
        distorted: Some(&case.distorted),
        options: &options,
        objective: &config.objective,
        dropout: &case.dropout,
        positive: &case.positive,
        negative: &case.negative,
        scope: ContrastiveScope::Full,
    };
    let (_, grads) = loss_and_gradients(&case.params, &inputs)?;
    let mut report = GradCheckReport::default();
    let mut probe = case.params.clone();
    let h = config.step;
    for tensor in ParamTensor::ALL {
        for index in 0..probe.tensor(tensor).as_slice().len() {
            let x = case.params.tensor(tensor).as_slice()[index];
            probe.tensor_mut(tensor).as_mut_slice()[index] = x + h;
            let up = loss_value(&probe, &inputs)?.total;
            probe.tensor_mut(tensor).as_mut_slice()[index] = x - h;
            let down = loss_value(&probe, &inputs)?.total;
            probe.tensor_mut(tensor).as_mut_slice()[index] = x;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.tensor(tensor).as_slice()[index];
            let rel = rel_error(analytic, numeric);
            report.coordinates += 1;
            if report.worst.is_none_or(|w| rel > w.rel_error) {
                report.worst = Some(Discrepancy {
                    tensor,
                    index,
                    analytic,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}

/// Check `cases` accepted random configurations derived from `seed`.
pub fn run_suite(config: &GradCheckConfig, cases: usize, seed: u64) -> Result<GradCheckReport> {
    let mut total = GradCheckReport::default();
    let mut accepted = 0;
    let mut k = 0u64;
    while accepted < cases {
        let case_seed = SeedStreams::new(seed).seed_at(Stream::Init, k);
        k += 1;
        match random_case(config, case_seed)? {
            Some(case) => {
                total.absorb(check_case(&case, config)?);
                accepted += 1;
            }
            None => total.rejected += 1,
        }
    }
    Ok(total)
}
