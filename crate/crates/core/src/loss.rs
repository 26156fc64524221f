//! Training triples and the three loss terms.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{EmbeddingSet, ModelParams};
use crate::real::{dot, log_sigmoid, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum FeedbackSide {
    Positive,
    Negative,
}

/// `(u, i, j)`: `i` is an observed neighbour of `u` on `side`, `j` is a
/// sampled item outside that neighbourhood.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TrainingTriple {
    pub user: u32,
    pub observed: u32,
    pub sampled: u32,
    pub side: FeedbackSide,
}

/// Loss values of one evaluation, widened to `f64`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// Dual feedback-aware BPR term.
    pub ranking: f64,
    /// InfoNCE term between the negative and distorted views.
    pub contrastive: f64,
    /// Squared norm of the embedding tables.
    pub regularization: f64,
    /// `ranking + λ₁·contrastive + λ₂·regularization`
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.ranking.is_finite()
            && self.contrastive.is_finite()
            && self.regularization.is_finite()
    }
}

/// Which loss terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerms {
    pub positive: bool,
    pub negative: bool,
    pub contrastive: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        positive: true,
        negative: true,
        contrastive: true,
    };

    /// The interest table takes part in the objective.
    pub fn interest_active(&self) -> bool {
        self.positive
    }

    /// The disinterest table takes part in the objective.
    pub fn disinterest_active(&self) -> bool {
        self.negative || self.contrastive
    }
}

/// Coefficients of the total loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    /// `b`: weight of the observed disliked pair's score.
    pub feedback_coef: f64,
    /// `λ₁`
    pub contrastive_weight: f64,
    /// `λ₂`
    pub reg_weight: f64,
    /// `τ`
    pub temperature: f64,
    pub terms: LossTerms,
}

/// Rows over which the contrastive term is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContrastiveScope<'a> {
    /// Every user and every item (exact objective).
    Full,
    /// Anchors and denominators restricted to sampled users and items.
    Subset { users: &'a [u32], items: &'a [u32] },
}

#[inline]
pub(crate) fn item_row(n_users: usize, item: u32) -> usize {
    n_users + item as usize
}

/// Positive-side margin `z_u·z_i − z_u·z_j`.
#[inline]
pub(crate) fn positive_margin<F: Real>(z: &Matrix<F>, n_users: usize, t: &TrainingTriple) -> F {
    let zu = z.row(t.user as usize);
    dot(zu, z.row(item_row(n_users, t.observed))) - dot(zu, z.row(item_row(n_users, t.sampled)))
}

/// Negative-side margin `v_u·v_j − b·v_u·v_i`.
#[inline]
pub(crate) fn negative_margin<F: Real>(v: &Matrix<F>, n_users: usize, b: F, t: &TrainingTriple) -> F {
    let vu = v.row(t.user as usize);
    dot(vu, v.row(item_row(n_users, t.sampled))) - b * dot(vu, v.row(item_row(n_users, t.observed)))
}

/// `−Σ_{B_p} ln σ(ŷ_ui − ŷ_uj) − Σ_{B_n} ln σ(ŷ_uj − ŷ_ui)`, with the
/// observed score on the negative side scaled by `b`.
pub fn db_bpr_loss<F: Real>(
    positive: &[TrainingTriple],
    negative: &[TrainingTriple],
    interest: &Matrix<F>,
    disinterest: Option<&Matrix<F>>,
    n_users: usize,
    feedback_coef: F,
) -> Result<F> {
    let mut loss = F::zero();
    for t in positive {
        loss -= log_sigmoid(positive_margin(interest, n_users, t));
    }
    if !negative.is_empty() {
        let v = disinterest.ok_or(Error::MissingIntermediate("disinterest embeddings"))?;
        for t in negative {
            loss -= log_sigmoid(negative_margin(v, n_users, feedback_coef, t));
        }
    }
    Ok(loss)
}

pub(crate) fn gather_rows<F: Real>(m: &Matrix<F>, rows: &[usize]) -> Matrix<F> {
    let mut out = Matrix::zeros(rows.len(), m.cols());
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from_slice(m.row(r));
    }
    out
}

/// InfoNCE over one node group. With `grads`, accumulates the derivatives
/// with respect to both views into the given matrices.
pub(crate) fn infonce_group<F: Real>(
    view: &Matrix<F>,
    distorted: &Matrix<F>,
    rows: &[usize],
    tau: F,
    grads: Option<(&mut Matrix<F>, &mut Matrix<F>)>,
) -> F {
    let m = rows.len();
    if m == 0 {
        return F::zero();
    }
    let anchors = gather_rows(view, rows);
    let others = gather_rows(distorted, rows);
    let mut logits = anchors.matmul_nt(&others);
    let inv_tau = F::one() / tau;
    logits.scale(inv_tau);
    let mut loss = F::zero();
    for r in 0..m {
        let row = logits.row_mut(r);
        let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for x in row.iter() {
            sum += (*x - mx).exp();
        }
        let lse = mx + sum.ln();
        loss += lse - row[r];
        if grads.is_some() {
            // Turn the row into softmax − one-hot in place.
            for x in row.iter_mut() {
                *x = (*x - lse).exp();
            }
            row[r] -= F::one();
        }
    }
    if let Some((d_view, d_distorted)) = grads {
        let mut d_anchor = Matrix::zeros(m, view.cols());
        d_anchor.gemm_acc(inv_tau, &logits, false, &others, false, F::zero());
        let mut d_other = Matrix::zeros(m, view.cols());
        d_other.gemm_acc(inv_tau, &logits, true, &anchors, false, F::zero());
        for (k, &r) in rows.iter().enumerate() {
            for (g, &d) in d_view.row_mut(r).iter_mut().zip(d_anchor.row(k)) {
                *g += d;
            }
            for (g, &d) in d_distorted.row_mut(r).iter_mut().zip(d_other.row(k)) {
                *g += d;
            }
        }
    }
    loss
}

pub(crate) fn scope_rows(scope: ContrastiveScope<'_>, n_users: usize, n_items: usize) -> (Vec<usize>, Vec<usize>) {
    match scope {
        ContrastiveScope::Full => ((0..n_users).collect(), (n_users..n_users + n_items).collect()),
        ContrastiveScope::Subset { users, items } => (
            users.iter().map(|&u| u as usize).collect(),
            items.iter().map(|&i| item_row(n_users, i)).collect(),
        ),
    }
}

/// Contrastive loss between the negative-graph view and the distorted view:
/// one InfoNCE sum over users (denominators over users) plus one over items
/// (denominators over items).
pub fn infonce_loss<F: Real>(
    view: &Matrix<F>,
    distorted: &Matrix<F>,
    n_users: usize,
    tau: F,
    scope: ContrastiveScope<'_>,
) -> Result<F> {
    if tau <= F::zero() {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    if view.shape() != distorted.shape() {
        return Err(Error::Shape {
            what: "distorted view",
            expected: view.shape(),
            found: distorted.shape(),
        });
    }
    let n_items = view.rows().saturating_sub(n_users);
    let (users, items) = scope_rows(scope, n_users, n_items);
    Ok(infonce_group(view, distorted, &users, tau, None) + infonce_group(view, distorted, &items, tau, None))
}

/// `‖Z⁽⁰⁾‖² + ‖V⁽⁰⁾‖²`; network weights are not regularized.
pub fn l2_reg<F: Real>(params: &ModelParams<F>) -> F {
    params.interest.frobenius_sq() + params.disinterest.frobenius_sq()
}

/// Regularizer restricted to the embedding tables the active terms use.
pub(crate) fn l2_reg_active<F: Real>(params: &ModelParams<F>, terms: LossTerms) -> F {
    let mut r = F::zero();
    if terms.interest_active() {
        r += params.interest.frobenius_sq();
    }
    if terms.disinterest_active() {
        r += params.disinterest.frobenius_sq();
    }
    r
}

/// `L_DB + λ₁·L_CL + λ₂·L_Reg` for one pair of mini-batches.
pub fn total_loss<F: Real>(
    positive: &[TrainingTriple],
    negative: &[TrainingTriple],
    embeddings: &EmbeddingSet<F>,
    params: &ModelParams<F>,
    objective: &Objective,
    scope: ContrastiveScope<'_>,
) -> Result<LossBreakdown> {
    let terms = objective.terms;
    let pos: &[TrainingTriple] = if terms.positive { positive } else { &[] };
    let neg: &[TrainingTriple] = if terms.negative { negative } else { &[] };
    let ranking = db_bpr_loss(
        pos,
        neg,
        &embeddings.interest,
        embeddings.disinterest.as_ref(),
        params.n_users,
        F::of(objective.feedback_coef),
    )?
    .widen();
    let contrastive = if terms.contrastive {
        let v = embeddings
            .disinterest
            .as_ref()
            .ok_or(Error::MissingIntermediate("disinterest embeddings"))?;
        let vt = embeddings
            .distorted
            .as_ref()
            .ok_or(Error::MissingIntermediate("distorted embeddings"))?;
        infonce_loss(v, vt, params.n_users, F::of(objective.temperature), scope)?.widen()
    } else {
        0.0
    };
    let regularization = l2_reg_active(params, terms).widen();
    Ok(LossBreakdown {
        ranking,
        contrastive,
        regularization,
        total: ranking + objective.contrastive_weight * contrastive + objective.reg_weight * regularization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pos(user: u32, observed: u32, sampled: u32) -> TrainingTriple {
        TrainingTriple {
            user,
            observed,
            sampled,
            side: FeedbackSide::Positive,
        }
    }

    fn neg(user: u32, observed: u32, sampled: u32) -> TrainingTriple {
        TrainingTriple {
            side: FeedbackSide::Negative,
            ..pos(user, observed, sampled)
        }
    }

    /// rows: user 0, item 0, item 1
    fn rows(data: [[f64; 2]; 3]) -> Matrix<f64> {
        Matrix::from_fn(3, 2, |r, c| data[r][c])
    }

    #[test]
    fn bpr_equal_scores_is_ln2() {
        let z = rows([[1.0, 0.0], [0.5, 0.2], [0.5, -0.7]]);
        let l = db_bpr_loss(&[pos(0, 0, 1)], &[], &z, None, 1, 2.0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bpr_unit_margin() {
        let z = rows([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let l = db_bpr_loss(&[pos(0, 0, 1)], &[], &z, None, 1, 2.0).unwrap();
        assert!((l - 0.313_261_687_518_222_8).abs() < 1e-12);
    }

    #[test]
    fn negative_side_weights_observed_score() {
        let v = rows([[1.0, 0.0], [0.5, 0.0], [0.5, 3.0]]);
        let z = Matrix::zeros(3, 2);
        let l = db_bpr_loss(&[], &[neg(0, 0, 1)], &z, Some(&v), 1, 2.0).unwrap();
        assert!((l - 0.974_076_984_180_107_6).abs() < 1e-12);
        assert!(db_bpr_loss(&[], &[neg(0, 0, 1)], &z, None, 1, 2.0).is_err());
    }

    #[test]
    fn infonce_orthonormal_case() {
        // two users, two items, identity embeddings in R^4
        let v = Matrix::<f64>::identity(4);
        let l = infonce_loss(&v, &v, 2, 1.0, ContrastiveScope::Full).unwrap();
        assert!((l - 1.253_046_750_072_891_5).abs() < 1e-12);
        assert!(infonce_loss(&v, &v, 2, 0.0, ContrastiveScope::Full).is_err());
    }

    #[test]
    fn infonce_high_temperature_limit() {
        let v = Matrix::from_fn(4, 3, |r, c| (r as f64 + 1.0) * (c as f64 - 0.7));
        let l_users = infonce_group(&v, &v, &[0, 1], 1e9, None);
        assert!((l_users - 2.0 * 2.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn l2_values() {
        let mut p = ModelParams::<f64>::zeros(1, 0, 2);
        assert_eq!(l2_reg(&p), 0.0);
        p.interest = Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(l2_reg(&p), 25.0);
        p.interest.scale(2.0);
        assert_eq!(l2_reg(&p), 100.0);
    }

    #[test]
    fn total_loss_combines_terms() {
        let mut p = ModelParams::<f64>::zeros(1, 2, 2);
        p.interest = rows([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let emb = EmbeddingSet {
            interest: p.interest.clone(),
            propagated: p.interest.clone(),
            transformed: p.interest.clone(),
            disinterest: Some(Matrix::zeros(3, 2)),
            distorted: None,
            attention: Matrix::zeros(3, 2),
        };
        let mut obj = Objective {
            feedback_coef: 2.0,
            contrastive_weight: 0.0,
            reg_weight: 0.0,
            temperature: 0.8,
            terms: LossTerms {
                positive: true,
                negative: true,
                contrastive: false,
            },
        };
        let l = total_loss(&[pos(0, 0, 1)], &[], &emb, &p, &obj, ContrastiveScope::Full).unwrap();
        assert_eq!(l.total, l.ranking);
        obj.reg_weight = 0.05;
        p.interest = rows([[3.0, 4.0], [0.0, 0.0], [0.0, 0.0]]);
        let l = total_loss(&[], &[], &emb, &p, &obj, ContrastiveScope::Full).unwrap();
        assert!((l.total - 1.25).abs() < 1e-12);
    }
}
