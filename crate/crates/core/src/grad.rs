//! Reverse-mode derivatives of the total loss.
//!
//! Every derivative is written out by hand against the forward intermediates
//! recorded in [`Trace`]. Propagation is linear and its normalized operator
//! is symmetric, so its adjoint is the same propagation applied to the
//! upstream gradient.

use crate::error::{Error, Result};
use crate::graph::{DistortedGraph, SignedBipartiteGraph};
use crate::loss::{
    infonce_group, item_row, negative_margin, positive_margin, scope_rows, total_loss,
    ContrastiveScope, LossBreakdown, Objective, TrainingTriple,
};
use crate::matrix::Matrix;
use crate::model::{forward, AttentionMode, DropoutMasks, ForwardOptions, Mode, ModelParams, Trace};
use crate::real::{axpy, dot, sigmoid, Real};

/// Gradients of the dual feedback-aware BPR term with respect to the fused
/// interest and the disinterest embeddings.
fn db_bpr_grad<F: Real>(
    positive: &[TrainingTriple],
    negative: &[TrainingTriple],
    interest: &Matrix<F>,
    disinterest: Option<&Matrix<F>>,
    n_users: usize,
    b: F,
    d_interest: &mut Matrix<F>,
    d_disinterest: &mut Matrix<F>,
) -> Result<()> {
    let h = interest.cols();
    let mut diff = alloc::vec![F::zero(); h];
    for t in positive {
        // d/dx [-ln σ(x)] = -σ(-x)
        let g = -sigmoid(-positive_margin(interest, n_users, t));
        let (u, i, j) = (
            t.user as usize,
            item_row(n_users, t.observed),
            item_row(n_users, t.sampled),
        );
        for ((d, &zi), &zj) in diff.iter_mut().zip(interest.row(i)).zip(interest.row(j)) {
            *d = zi - zj;
        }
        axpy(g, &diff, d_interest.row_mut(u));
        let zu = interest.row(u);
        axpy(g, zu, d_interest.row_mut(i));
        axpy(-g, zu, d_interest.row_mut(j));
    }
    if !negative.is_empty() {
        let v = disinterest.ok_or(Error::MissingIntermediate("disinterest embeddings"))?;
        for t in negative {
            let g = -sigmoid(-negative_margin(v, n_users, b, t));
            let (u, i, j) = (
                t.user as usize,
                item_row(n_users, t.observed),
                item_row(n_users, t.sampled),
            );
            for ((d, &vj), &vi) in diff.iter_mut().zip(v.row(j)).zip(v.row(i)) {
                *d = vj - b * vi;
            }
            axpy(g, &diff, d_disinterest.row_mut(u));
            let vu = v.row(u);
            axpy(g, vu, d_disinterest.row_mut(j));
            axpy(-g * b, vu, d_disinterest.row_mut(i));
        }
    }
    Ok(())
}

/// Backpropagate `d_fused` (gradient w.r.t. the fused interest embeddings)
/// through attention, the MLP and positive-graph propagation.
fn interest_backward<F: Real>(
    params: &ModelParams<F>,
    trace: &Trace<F>,
    graph: &SignedBipartiteGraph,
    d_fused: &Matrix<F>,
    grads: &mut ModelParams<F>,
) -> Result<()> {
    let emb = &trace.embeddings;
    let n = params.n_nodes();
    let alpha = &emb.attention;

    // Fusion: Z_r = α1 Z'_r + α2 Z''_r
    let mut d_prop = Matrix::zeros(n, params.dim());
    let mut d_trans = Matrix::zeros(n, params.dim());
    let mut d_s1 = alloc::vec![F::zero(); n];
    let mut d_s2 = alloc::vec![F::zero(); n];
    for r in 0..n {
        let (a1, a2) = (alpha.get(r, 0), alpha.get(r, 1));
        let dz = d_fused.row(r);
        axpy(a1, dz, d_prop.row_mut(r));
        axpy(a2, dz, d_trans.row_mut(r));
        let da1 = dot(dz, emb.propagated.row(r));
        let da2 = dot(dz, emb.transformed.row(r));
        // two-way softmax Jacobian
        let c = a1 * da1 + a2 * da2;
        d_s1[r] = a1 * (da1 - c);
        d_s2[r] = a2 * (da2 - c);
    }
    if trace.options.attention == AttentionMode::Global && n > 0 {
        let inv_n = F::one() / F::of(n as f64);
        let t1 = d_s1.iter().copied().sum::<F>() * inv_n;
        let t2 = d_s2.iter().copied().sum::<F>() * inv_n;
        d_s1.iter_mut().for_each(|d| *d = t1);
        d_s2.iter_mut().for_each(|d| *d = t2);
    }
    if let Some(masks) = &trace.dropout {
        d_s1.iter_mut().zip(&masks.score_propagated).for_each(|(d, &m)| *d *= m);
        d_s2.iter_mut().zip(&masks.score_transformed).for_each(|(d, &m)| *d *= m);
    }

    // Scores: s = tanh(X W1) W2
    let w2 = params.att_w2.as_slice();
    let mut score_branch = |tanh: &Matrix<F>, d_s: &[F], input: &Matrix<F>, d_input: &mut Matrix<F>| {
        for (g, col) in grads.att_w2.as_mut_slice().iter_mut().zip(0..) {
            let mut acc = F::zero();
            for r in 0..n {
                acc += tanh.get(r, col) * d_s[r];
            }
            *g += acc;
        }
        let mut d_pre = Matrix::zeros(n, params.dim());
        for r in 0..n {
            for ((d, &t), &w) in d_pre.row_mut(r).iter_mut().zip(tanh.row(r)).zip(w2) {
                *d = d_s[r] * w * (F::one() - t * t);
            }
        }
        grads.att_w1.gemm_acc(F::one(), input, true, &d_pre, false, F::one());
        d_input.gemm_acc(F::one(), &d_pre, false, &params.att_w1, true, F::one());
    };
    score_branch(&trace.tanh_propagated, &d_s1, &emb.propagated, &mut d_prop);
    score_branch(&trace.tanh_transformed, &d_s2, &emb.transformed, &mut d_trans);

    // MLP: Z'' = ReLU(H W2), H = mask ⊙ ReLU(Z0 W1)
    for (d, &pre) in d_trans.as_mut_slice().iter_mut().zip(trace.output_pre.as_slice()) {
        if pre <= F::zero() {
            *d = F::zero();
        }
    }
    grads
        .mlp_w2
        .gemm_acc(F::one(), &trace.hidden, true, &d_trans, false, F::one());
    let mut d_hidden = d_trans.matmul_nt(&params.mlp_w2);
    for (k, (d, &pre)) in d_hidden
        .as_mut_slice()
        .iter_mut()
        .zip(trace.hidden_pre.as_slice())
        .enumerate()
    {
        if pre <= F::zero() {
            *d = F::zero();
        } else if let Some(masks) = &trace.dropout {
            *d *= masks.hidden.as_slice()[k];
        }
    }
    grads
        .mlp_w1
        .gemm_acc(F::one(), &params.interest, true, &d_hidden, false, F::one());
    grads
        .interest
        .gemm_acc(F::one(), &d_hidden, false, &params.mlp_w1, true, F::one());

    // Propagated view.
    if trace.options.interest_propagation {
        let back = graph.positive().propagate_mean(&d_prop, trace.options.layers)?;
        grads.interest.add_scaled(F::one(), &back);
    } else {
        grads.interest.add_scaled(F::one(), &d_prop);
    }
    Ok(())
}

/// Gradient of the total loss with respect to every parameter tensor, given
/// the trace of the forward pass that produced the embeddings. Dropout masks
/// recorded in the trace are reused.
#[allow(clippy::too_many_arguments)]
pub fn backward<F: Real>(
    params: &ModelParams<F>,
    trace: &Trace<F>,
    graph: &SignedBipartiteGraph,
    distorted: Option<&DistortedGraph>,
    positive: &[TrainingTriple],
    negative: &[TrainingTriple],
    objective: &Objective,
    scope: ContrastiveScope<'_>,
) -> Result<ModelParams<F>> {
    let terms = objective.terms;
    let emb = &trace.embeddings;
    let n = params.n_nodes();
    let h = params.dim();
    let mut grads = params.zeros_like();

    let positive: &[TrainingTriple] = if terms.positive { positive } else { &[] };
    let negative: &[TrainingTriple] = if terms.negative { negative } else { &[] };
    let needs_v = terms.disinterest_active();
    if needs_v && emb.disinterest.is_none() {
        return Err(Error::MissingIntermediate("disinterest embeddings"));
    }
    if terms.contrastive && emb.distorted.is_none() {
        return Err(Error::MissingIntermediate("distorted embeddings"));
    }

    let mut d_fused = Matrix::zeros(n, h);
    let mut d_v = Matrix::zeros(n, h);
    let mut d_vt = Matrix::zeros(n, h);
    db_bpr_grad(
        positive,
        negative,
        &emb.interest,
        emb.disinterest.as_ref(),
        params.n_users,
        F::of(objective.feedback_coef),
        &mut d_fused,
        &mut d_v,
    )?;
    if terms.contrastive {
        let v = emb.disinterest.as_ref().unwrap();
        let vt = emb.distorted.as_ref().unwrap();
        let (users, items) = scope_rows(scope, params.n_users, params.n_items);
        let mut g_v = Matrix::zeros(n, h);
        let mut g_vt = Matrix::zeros(n, h);
        let tau = F::of(objective.temperature);
        infonce_group(v, vt, &users, tau, Some((&mut g_v, &mut g_vt)));
        infonce_group(v, vt, &items, tau, Some((&mut g_v, &mut g_vt)));
        let w = F::of(objective.contrastive_weight);
        d_v.add_scaled(w, &g_v);
        d_vt.add_scaled(w, &g_vt);
    }

    let reg = F::of(2.0 * objective.reg_weight);
    if terms.interest_active() {
        interest_backward(params, trace, graph, &d_fused, &mut grads)?;
        grads.interest.add_scaled(reg, &params.interest);
    }
    if needs_v {
        let layers = trace.options.layers;
        let back = graph.negative().propagate_mean(&d_v, layers)?;
        grads.disinterest.add_scaled(F::one(), &back);
        if terms.contrastive {
            let d = distorted.ok_or(Error::MissingIntermediate("distorted graph"))?;
            let back = d.adjacency.propagate_mean(&d_vt, layers)?;
            grads.disinterest.add_scaled(F::one(), &back);
        }
        grads.disinterest.add_scaled(reg, &params.disinterest);
    }
    Ok(grads)
}

/// Everything needed to evaluate the objective on one pair of mini-batches.
#[derive(Clone, Copy, Debug)]
pub struct StepInputs<'a, F> {
    pub graph: &'a SignedBipartiteGraph,
    pub distorted: Option<&'a DistortedGraph>,
    pub options: &'a ForwardOptions,
    pub objective: &'a Objective,
    pub dropout: &'a DropoutMasks<F>,
    pub positive: &'a [TrainingTriple],
    pub negative: &'a [TrainingTriple],
    pub scope: ContrastiveScope<'a>,
}

/// Training-mode loss only.
pub fn loss_value<F: Real>(params: &ModelParams<F>, inputs: &StepInputs<'_, F>) -> Result<LossBreakdown> {
    let trace = forward(
        params,
        inputs.graph,
        inputs.distorted,
        inputs.options,
        Mode::Train(inputs.dropout),
    )?;
    total_loss(
        inputs.positive,
        inputs.negative,
        &trace.embeddings,
        params,
        inputs.objective,
        inputs.scope,
    )
}

/// Training-mode loss and its gradient.
pub fn loss_and_gradients<F: Real>(
    params: &ModelParams<F>,
    inputs: &StepInputs<'_, F>,
) -> Result<(LossBreakdown, ModelParams<F>)> {
    let trace = forward(
        params,
        inputs.graph,
        inputs.distorted,
        inputs.options,
        Mode::Train(inputs.dropout),
    )?;
    let loss = total_loss(
        inputs.positive,
        inputs.negative,
        &trace.embeddings,
        params,
        inputs.objective,
        inputs.scope,
    )?;
    let grads = backward(
        params,
        &trace,
        inputs.graph,
        inputs.distorted,
        inputs.positive,
        inputs.negative,
        inputs.objective,
        inputs.scope,
    )?;
    Ok((loss, grads))
}
