//! Training loop.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, NonFiniteDump, Result};
use crate::grad::{loss_and_gradients, StepInputs};
use crate::graph::{DistortedGraph, Sign, SignedBipartiteGraph};
use crate::loss::{ContrastiveScope, LossBreakdown, LossTerms, Objective};
use crate::model::{forward, AttentionMode, DropoutMasks, EmbeddingSet, ForwardOptions, Mode, ModelParams, ParamTensor};
use crate::optim::{Adam, AdamConfig, OptimizerState};
use crate::rank::{evaluate, ground_truth, DisinterestFilter, GroundTruth, MetricOptions};
use crate::real::Real;
use crate::rng::{SeedStreams, Stream};
use crate::sampling::sample_batches;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperParams {
    /// `H`
    pub dim: usize,
    /// `K`
    pub layers: usize,
    /// `p`
    pub removal_prob: f64,
    /// `b`
    pub feedback_coef: f64,
    /// `δ`
    pub delta: f64,
    /// `λ₁`
    pub contrastive_weight: f64,
    /// `λ₂`
    pub reg_weight: f64,
    /// `τ`
    pub temperature: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub neg_samples: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 4,
            removal_prob: 0.1,
            feedback_coef: 2.0,
            delta: 0.5,
            contrastive_weight: 0.1,
            reg_weight: 0.05,
            temperature: 0.8,
            learning_rate: 5e-3,
            batch_size: 1024,
            epochs: 1000,
            neg_samples: 40,
            dropout_rate: 0.5,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.dim == 0 {
            return fail("H must be at least 1");
        }
        if !(self.feedback_coef >= 1.0) {
            return fail("b must be at least 1");
        }
        if !(self.temperature > 0.0) {
            return fail("tau must be positive");
        }
        if !(0.0..=1.0).contains(&self.removal_prob) {
            return fail("p must lie in [0, 1]");
        }
        if !(self.contrastive_weight >= 0.0) || !(self.reg_weight >= 0.0) {
            return fail("lambda1 and lambda2 must be non-negative");
        }
        if self.delta.is_nan() {
            return fail("delta must be a number");
        }
        if !(self.learning_rate >= 0.0) {
            return fail("learning rate must be non-negative");
        }
        if self.batch_size == 0 || self.neg_samples == 0 {
            return fail("batch size and negative samples must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout rate must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn objective(&self, variant: Variant) -> Objective {
        let terms = variant.terms();
        Objective {
            feedback_coef: self.feedback_coef,
            contrastive_weight: if terms.contrastive { self.contrastive_weight } else { 0.0 },
            reg_weight: self.reg_weight,
            temperature: self.temperature,
            terms,
        }
    }
}

/// Ablation configuration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Variant {
    /// Negative-graph terms only; the interest side stays at its
    /// initialization and is not propagated.
    A,
    /// Positive-graph terms only.
    B,
    /// Both graphs, no contrastive term.
    C,
    /// Both graphs plus the contrastive term.
    D,
    /// `D` plus the disinterest filter at ranking time.
    #[default]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::A, Variant::B, Variant::C, Variant::D, Variant::Full];

    pub fn label(self) -> &'static str {
        match self {
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
            Variant::D => "D",
            Variant::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.label().eq_ignore_ascii_case(s))
    }

    pub fn terms(self) -> LossTerms {
        match self {
            Variant::A => LossTerms {
                positive: false,
                negative: true,
                contrastive: false,
            },
            Variant::B => LossTerms {
                positive: true,
                negative: false,
                contrastive: false,
            },
            Variant::C => LossTerms {
                positive: true,
                negative: true,
                contrastive: false,
            },
            Variant::D | Variant::Full => LossTerms::ALL,
        }
    }

    /// Forward options used while training.
    pub fn forward_options(self, layers: usize, attention: AttentionMode) -> ForwardOptions {
        let terms = self.terms();
        ForwardOptions {
            layers,
            attention,
            interest_propagation: self != Variant::A,
            disinterest: terms.disinterest_active(),
            contrastive: terms.contrastive,
        }
    }

    /// Forward options for scoring: both tables, no distorted view.
    pub fn eval_options(self, layers: usize, attention: AttentionMode) -> ForwardOptions {
        ForwardOptions {
            disinterest: true,
            contrastive: false,
            ..self.forward_options(layers, attention)
        }
    }

    /// Only the full model filters at ranking time.
    pub fn ranking_filter(self, delta: f64) -> DisinterestFilter {
        if self == Variant::Full {
            DisinterestFilter::below(delta)
        } else {
            DisinterestFilter::off()
        }
    }

    fn frozen(self) -> &'static [ParamTensor] {
        match self {
            Variant::A => &[
                ParamTensor::Interest,
                ParamTensor::MlpHidden,
                ParamTensor::MlpOutput,
                ParamTensor::AttentionProjection,
                ParamTensor::AttentionScore,
            ],
            Variant::B => &[ParamTensor::Disinterest],
            _ => &[],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    /// Fraction of training positives held out for validation.
    pub holdout_fraction: f64,
    /// Recall cutoff monitored on the holdout.
    pub k: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self {
            patience: 50,
            holdout_fraction: 0.05,
            k: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainOptions {
    pub variant: Variant,
    pub attention: AttentionMode,
    /// Accumulate every mini-batch pair of an epoch into one update.
    pub step_per_epoch: bool,
    /// Draw a fresh distorted graph every epoch instead of once per run.
    pub redistort_each_epoch: bool,
    /// Restrict contrastive anchors and denominators to this many sampled
    /// users and items per step.
    pub contrastive_candidates: Option<usize>,
    pub early_stopping: Option<EarlyStopping>,
}

/// Per-epoch averages of the per-step loss values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub steps: usize,
    pub validation_recall: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<F> {
    pub params: ModelParams<F>,
    pub optimizer: OptimizerState<F>,
    pub log: Vec<EpochRecord>,
    /// Graph the model was trained on (the input minus any holdout).
    pub train_graph: SignedBipartiteGraph,
    pub stopped_early: bool,
}

/// Split off a validation share of the positive edges.
fn carve_holdout(
    graph: &SignedBipartiteGraph,
    fraction: f64,
    rng: &mut impl Rng,
) -> Result<(SignedBipartiteGraph, GroundTruth)> {
    let edges = graph.edges();
    let mut positive: Vec<usize> = (0..edges.len())
        .filter(|&k| edges[k].sign == Sign::Positive)
        .collect();
    positive.shuffle(rng);
    let take = (num_traits::Float::ceil(positive.len() as f64 * fraction) as usize).min(positive.len());
    let mut held = alloc::vec![false; edges.len()];
    for &k in &positive[..take] {
        held[k] = true;
    }
    let kept: Vec<_> = edges.iter().zip(&held).filter(|(_, &h)| !h).map(|(e, _)| *e).collect();
    let truth = ground_truth(
        edges
            .iter()
            .zip(&held)
            .filter(|(_, &h)| h)
            .map(|(e, _)| (e.user, e.item)),
    );
    Ok((SignedBipartiteGraph::build(&kept, graph.n_users(), graph.n_items())?, truth))
}

/// Eval-mode embeddings for ranking.
pub fn embed<F: Real>(
    params: &ModelParams<F>,
    graph: &SignedBipartiteGraph,
    variant: Variant,
    layers: usize,
    attention: AttentionMode,
) -> Result<EmbeddingSet<F>> {
    let options = variant.eval_options(layers, attention);
    Ok(forward(params, graph, None, &options, Mode::Eval)?.embeddings)
}

/// Train from a fresh Glorot initialization.
///
/// `observer` sees every epoch record together with the current parameters.
pub fn train<F: Real>(
    graph: &SignedBipartiteGraph,
    hp: &HyperParams,
    options: &TrainOptions,
    observer: &mut dyn FnMut(&EpochRecord, &ModelParams<F>),
) -> Result<TrainOutcome<F>> {
    hp.validate()?;
    let streams = SeedStreams::new(hp.seed);
    let (train_graph, holdout) = match options.early_stopping {
        Some(es) => {
            let (g, t) = carve_holdout(graph, es.holdout_fraction, &mut streams.rng(Stream::Holdout))?;
            (g, Some(t))
        }
        None => (graph.clone(), None),
    };
    let g = &train_graph;
    let variant = options.variant;
    let fwd = variant.forward_options(hp.layers, options.attention);
    let objective = hp.objective(variant);
    let terms = objective.terms;

    let mut params = ModelParams::<F>::glorot(g.n_users(), g.n_items(), hp.dim, hp.seed)?;
    let mut state = OptimizerState::new(&params);
    let mut adam = Adam::new(AdamConfig::with_learning_rate(hp.learning_rate))?;
    for &t in variant.frozen() {
        adam.freeze(t);
    }

    let mut sampling = streams.rng(Stream::Sampling);
    let mut dropout_rng = streams.rng(Stream::Dropout);
    let mut contrastive_rng = streams.rng(Stream::Contrastive);
    let mut distorted: Option<DistortedGraph> = if terms.contrastive && !options.redistort_each_epoch {
        Some(g.distort(hp.removal_prob, hp.seed)?)
    } else {
        None
    };

    let mut log = Vec::with_capacity(hp.epochs);
    let mut best: Option<(f64, ModelParams<F>, OptimizerState<F>)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let n = g.n_nodes();

    for epoch in 0..hp.epochs {
        if terms.contrastive && options.redistort_each_epoch {
            distorted = Some(g.distort(hp.removal_prob, streams.seed_at(Stream::Distortion, epoch as u64))?);
        }
        let batches = sample_batches(
            g,
            hp.neg_samples,
            hp.batch_size,
            (terms.positive, terms.negative),
            &mut sampling,
        )?;
        let steps = batches.steps();
        let mut sum = LossBreakdown::default();
        let mut accumulated: Option<ModelParams<F>> = None;
        for s in 0..steps {
            let (pos, neg) = batches.pair(s);
            let masks = DropoutMasks::sample(n, hp.dim, hp.dropout_rate, &mut dropout_rng);
            let (users, items);
            let scope = match options.contrastive_candidates {
                Some(m) if terms.contrastive => {
                    users = sample_ids(g.n_users(), m, &mut contrastive_rng);
                    items = sample_ids(g.n_items(), m, &mut contrastive_rng);
                    ContrastiveScope::Subset {
                        users: &users,
                        items: &items,
                    }
                }
                _ => ContrastiveScope::Full,
            };
            let inputs = StepInputs {
                graph: g,
                distorted: distorted.as_ref(),
                options: &fwd,
                objective: &objective,
                dropout: &masks,
                positive: pos,
                negative: neg,
                scope,
            };
            let (loss, grads) = loss_and_gradients(&params, &inputs)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(Box::new(NonFiniteDump {
                    epoch,
                    step: s,
                    loss,
                    positive_batch: pos.to_vec(),
                    negative_batch: neg.to_vec(),
                })));
            }
            sum.ranking += loss.ranking;
            sum.contrastive += loss.contrastive;
            sum.regularization += loss.regularization;
            sum.total += loss.total;
            if options.step_per_epoch {
                match accumulated.as_mut() {
                    Some(acc) => {
                        for t in ParamTensor::ALL {
                            acc.tensor_mut(t).add_scaled(F::one(), grads.tensor(t));
                        }
                    }
                    None => accumulated = Some(grads),
                }
            } else {
                adam.step(&mut params, &grads, &mut state)?;
            }
        }
        if let Some(acc) = accumulated {
            adam.step(&mut params, &acc, &mut state)?;
        }
        let scale = if steps == 0 { 0.0 } else { 1.0 / steps as f64 };
        let mut record = EpochRecord {
            epoch,
            loss: LossBreakdown {
                ranking: sum.ranking * scale,
                contrastive: sum.contrastive * scale,
                regularization: sum.regularization * scale,
                total: sum.total * scale,
            },
            steps,
            validation_recall: None,
        };
        if let (Some(es), Some(truth)) = (options.early_stopping, holdout.as_ref()) {
            let emb = embed(&params, g, variant, hp.layers, options.attention)?;
            let v = emb.disinterest.as_ref().ok_or(Error::MissingIntermediate("disinterest embeddings"))?;
            let report = evaluate(
                &emb.interest,
                v,
                g,
                truth,
                &[es.k],
                variant.ranking_filter(hp.delta),
                MetricOptions::default(),
            )?;
            let recall = report.at[0].recall;
            record.validation_recall = Some(recall);
            if best.as_ref().is_none_or(|(r, _, _)| recall > *r) {
                best = Some((recall, params.clone(), state.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            observer(&record, &params);
            log.push(record);
            if since_best >= es.patience {
                stopped_early = true;
                break;
            }
            continue;
        }
        observer(&record, &params);
        log.push(record);
    }

    if let Some((_, p, s)) = best {
        params = p;
        state = s;
    }
    Ok(TrainOutcome {
        params,
        optimizer: state,
        log,
        train_graph,
        stopped_early,
    })
}

fn sample_ids(len: usize, m: usize, rng: &mut impl Rng) -> Vec<u32> {
    let mut v: Vec<u32> = index::sample(rng, len, m.min(len)).into_iter().map(|i| i as u32).collect();
    v.sort_unstable();
    v
}
