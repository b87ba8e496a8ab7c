//! AUC objectives.
//!
//! The pairwise square-loss AUC risk couples every positive with every
//! negative. With `p` the positive fraction it can be rewritten as a saddle
//! point over three scalars,
//!
//! ```text
//! g(s, y) = (1−p)(s−a)²·[y=1] + p(s−b)²·[y=0]
//!         + 2(1+α)(p·s·[y=0] − (1−p)·s·[y=1]) − p(1−p)α²
//! ```
//!
//! minimised over `a, b` and maximised over `α`, which decouples instances.
//! The adversarial surrogate `f = g − γ‖x‖²` adds a concavity regularizer in
//! the (perturbed) input.

use rayon::prelude::*;

use crate::linalg::{l2_norm_sq, Matrix};
use crate::model::ScorerParams;
use crate::{Error, Result};

/// The saddle-point scalars `(a, b, α)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxParams {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
}

impl AuxParams {
    pub fn new(a: f64, b: f64, alpha: f64) -> Result<Self> {
        let aux = Self { a, b, alpha };
        if !aux.in_domain() {
            return Err(Error::InvalidArgument(format!(
                "aux params out of domain: a={a}, b={b}, alpha={alpha}"
            )));
        }
        Ok(aux)
    }

    /// `a, b ∈ [0, 1]`, `α ∈ [−1, 1]`.
    pub fn in_domain(&self) -> bool {
        (0.0..=1.0).contains(&self.a)
            && (0.0..=1.0).contains(&self.b)
            && (-1.0..=1.0).contains(&self.alpha)
    }

    pub fn clamped(self) -> Self {
        Self {
            a: self.a.clamp(0.0, 1.0),
            b: self.b.clamp(0.0, 1.0),
            alpha: self.alpha.clamp(-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveContext {
    p: f64,
    gamma: f64,
}

impl ObjectiveContext {
    pub fn new(p: f64, gamma: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "positive proportion must lie in (0,1), got {p}"
            )));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gamma must be finite and non-negative, got {gamma}"
            )));
        }
        Ok(Self { p, gamma })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(self, gamma: f64) -> Result<Self> {
        Self::new(self.p, gamma)
    }
}

fn check_label(y: u8) -> Result<()> {
    if y > 1 {
        Err(Error::BadLabel(y))
    } else {
        Ok(())
    }
}

fn check_scores_labels(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            context: "scores vs labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let mut pos = 0;
    for &y in labels {
        check_label(y)?;
        pos += y as usize;
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// Mann–Whitney AUC; a tied positive/negative pair earns half credit.
pub fn auc_exact(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = check_scores_labels(scores, labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    // Sum of mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum += mid_rank;
            }
        }
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// `(1/(n⁺n⁻)) Σᵢ Σⱼ (1 − (sᵢ⁺ − sⱼ⁻))²`, evaluated through class moments.
pub fn pairwise_sq_loss(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = check_scores_labels(scores, labels)?;
    let (mut s1p, mut s2p, mut s1n, mut s2n) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &y) in scores.iter().zip(labels) {
        if y == 1 {
            s1p += s;
            s2p += s * s;
        } else {
            s1n += s;
            s2n += s * s;
        }
    }
    let (mp, mn) = (s1p / n_pos as f64, s1n / n_neg as f64);
    let (qp, qn) = (s2p / n_pos as f64, s2n / n_neg as f64);
    // E[(1 − s⁺ + s⁻)²] with independent draws from each class
    Ok(1.0 - 2.0 * (mp - mn) + qp - 2.0 * mp * mn + qn)
}

/// Instance-wise saddle objective `g` at score `s`.
pub fn g_instance(ctx: &ObjectiveContext, aux: &AuxParams, s: f64, y: u8) -> Result<f64> {
    check_label(y)?;
    let p = ctx.p;
    let AuxParams { a, b, alpha } = *aux;
    let v = if y == 1 {
        (1.0 - p) * (s - a) * (s - a) - 2.0 * (1.0 + alpha) * (1.0 - p) * s
    } else {
        p * (s - b) * (s - b) + 2.0 * (1.0 + alpha) * p * s
    };
    Ok(v - p * (1.0 - p) * alpha * alpha)
}

/// Partial derivatives of `g` with respect to `(s, a, b, α)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GPartials {
    pub ds: f64,
    pub da: f64,
    pub db: f64,
    pub dalpha: f64,
}

pub fn g_partials(ctx: &ObjectiveContext, aux: &AuxParams, s: f64, y: u8) -> Result<GPartials> {
    check_label(y)?;
    let p = ctx.p;
    let AuxParams { a, b, alpha } = *aux;
    let reg = -2.0 * p * (1.0 - p) * alpha;
    Ok(if y == 1 {
        GPartials {
            ds: 2.0 * (1.0 - p) * (s - a) - 2.0 * (1.0 + alpha) * (1.0 - p),
            da: -2.0 * (1.0 - p) * (s - a),
            db: 0.0,
            dalpha: -2.0 * (1.0 - p) * s + reg,
        }
    } else {
        GPartials {
            ds: 2.0 * p * (s - b) + 2.0 * (1.0 + alpha) * p,
            da: 0.0,
            db: -2.0 * p * (s - b),
            dalpha: 2.0 * p * s + reg,
        }
    })
}

/// Unclamped closed-form optimum of the saddle scalars: class means of the
/// scores and their difference.
pub fn closed_form_aux_unclamped(scores: &[f64], labels: &[u8]) -> Result<AuxParams> {
    let (n_pos, n_neg) = check_scores_labels(scores, labels)?;
    let (mut sp, mut sn) = (0.0, 0.0);
    for (&s, &y) in scores.iter().zip(labels) {
        if y == 1 {
            sp += s;
        } else {
            sn += s;
        }
    }
    let a = sp / n_pos as f64;
    let b = sn / n_neg as f64;
    Ok(AuxParams { a, b, alpha: b - a })
}

/// Closed-form saddle scalars clamped to their domains.
pub fn closed_form_aux(scores: &[f64], labels: &[u8]) -> Result<AuxParams> {
    closed_form_aux_unclamped(scores, labels).map(AuxParams::clamped)
}

/// `min_{a,b} max_α` of the mean of `g`, using the closed forms with `p`
/// set to the empirical positive fraction of `labels`.
pub fn saddle_value(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let aux = closed_form_aux_unclamped(scores, labels)?;
    let p = labels.iter().map(|&y| y as f64).sum::<f64>() / labels.len() as f64;
    let ctx = ObjectiveContext::new(p, 0.0)?;
    let mut total = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        total += g_instance(&ctx, &aux, s, y)?;
    }
    Ok(total / scores.len() as f64)
}

/// The saddle value mapped back onto the pairwise-risk scale:
/// `1 + saddle / (p(1−p))`. This equals [`pairwise_sq_loss`] exactly.
pub fn reformulated_risk(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let v = saddle_value(scores, labels)?;
    let p = labels.iter().map(|&y| y as f64).sum::<f64>() / labels.len() as f64;
    Ok(1.0 + v / (p * (1.0 - p)))
}

/// Surrogate `f = g(h(x)) − γ‖x‖²`.
pub fn f_instance(
    ctx: &ObjectiveContext,
    params: &ScorerParams,
    aux: &AuxParams,
    x: &[f64],
    y: u8,
) -> Result<f64> {
    let s = params.score(x)?;
    Ok(g_instance(ctx, aux, s, y)? - ctx.gamma * l2_norm_sq(x))
}

/// Value and all gradients of `f` at one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGrad {
    pub value: f64,
    pub score: f64,
    pub d_theta: Vec<f64>,
    pub d_a: f64,
    pub d_b: f64,
    pub d_alpha: f64,
    pub d_x: Vec<f64>,
}

impl ObjectiveGrad {
    /// Gradient over `w = (θ, a, b)` as one vector.
    pub fn d_w(&self) -> Vec<f64> {
        let mut v = self.d_theta.clone();
        v.push(self.d_a);
        v.push(self.d_b);
        v
    }
}

pub fn grad_f(
    ctx: &ObjectiveContext,
    params: &ScorerParams,
    aux: &AuxParams,
    x: &[f64],
    y: u8,
) -> Result<ObjectiveGrad> {
    check_label(y)?;
    let s = params.score(x)?;
    let partials = g_partials(ctx, aux, s, y)?;
    let bundle = params.backprop(x, partials.ds)?;
    let mut d_x = bundle.d_input;
    for (d, &xi) in d_x.iter_mut().zip(x) {
        *d -= 2.0 * ctx.gamma * xi;
    }
    Ok(ObjectiveGrad {
        value: g_instance(ctx, aux, s, y)? - ctx.gamma * l2_norm_sq(x),
        score: s,
        d_theta: bundle.d_params,
        d_a: partials.da,
        d_b: partials.db,
        d_alpha: partials.dalpha,
        d_x,
    })
}

/// Batch means of `f` and of its gradients in `(θ, a, b, α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrad {
    pub value: f64,
    pub d_theta: Vec<f64>,
    pub d_a: f64,
    pub d_b: f64,
    pub d_alpha: f64,
}

impl BatchGrad {
    /// `‖(∂θ, ∂a, ∂b)‖₂`.
    pub fn norm_w(&self) -> f64 {
        (l2_norm_sq(&self.d_theta) + self.d_a * self.d_a + self.d_b * self.d_b).sqrt()
    }
}

/// Mean objective and gradients over a batch. Per-instance work may run in
/// parallel; the reduction is always sequential in row order.
pub fn batch_objective(
    ctx: &ObjectiveContext,
    params: &ScorerParams,
    aux: &AuxParams,
    xs: &Matrix,
    ys: &[u8],
) -> Result<BatchGrad> {
    if xs.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if xs.rows() != ys.len() {
        return Err(Error::Shape {
            context: "batch labels",
            expected: xs.rows(),
            got: ys.len(),
        });
    }
    let per: Vec<ObjectiveGrad> = (0..xs.rows())
        .into_par_iter()
        .map(|i| grad_f(ctx, params, aux, xs.row(i), ys[i]))
        .collect::<Result<_>>()?;

    let n = per.len() as f64;
    let mut out = BatchGrad {
        value: 0.0,
        d_theta: vec![0.0; params.num_params()],
        d_a: 0.0,
        d_b: 0.0,
        d_alpha: 0.0,
    };
    for g in &per {
        out.value += g.value;
        for (acc, &v) in out.d_theta.iter_mut().zip(&g.d_theta) {
            *acc += v;
        }
        out.d_a += g.d_a;
        out.d_b += g.d_b;
        out.d_alpha += g.d_alpha;
    }
    out.value /= n;
    out.d_theta.iter_mut().for_each(|v| *v /= n);
    out.d_a /= n;
    out.d_b /= n;
    out.d_alpha /= n;
    Ok(out)
}
