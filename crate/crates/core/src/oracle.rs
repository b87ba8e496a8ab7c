//! Brute-force verifiers for the analytic identities the rest of the crate
//! relies on.
//!
//! Scores and the saddle objective are recomputed here from the raw parameter
//! vector with their own loops, so a check never grades an implementation
//! against itself. Only [`crate::linalg`] and [`crate::rng`] are shared.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::attack::fosc;
use crate::data::Dataset;
use crate::linalg::{l2_norm, Matrix};
use crate::model::ScorerParams;
use crate::objective::{
    closed_form_aux_unclamped, g_instance, grad_f, pairwise_sq_loss, reformulated_risk, AuxParams,
    GPartials, ObjectiveContext,
};
use crate::rng::Prng;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// reference evaluations

fn ref_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Forward pass straight from the flat layout: per layer `W` (out × in,
/// row-major) then `b`; tanh on hidden layers, sigmoid on the output.
fn ref_score_flat(widths: &[usize], flat: &[f64], x: &[f64]) -> f64 {
    let mut act = x.to_vec();
    let mut off = 0;
    let layers = widths.len() - 1;
    for l in 0..layers {
        let (n_in, n_out) = (widths[l], widths[l + 1]);
        let w = &flat[off..off + n_in * n_out];
        let b = &flat[off + n_in * n_out..off + n_in * n_out + n_out];
        off += n_in * n_out + n_out;
        let mut next = vec![0.0; n_out];
        for o in 0..n_out {
            let mut z = b[o];
            for i in 0..n_in {
                z += w[o * n_in + i] * act[i];
            }
            next[o] = if l + 1 == layers {
                ref_sigmoid(z)
            } else {
                z.tanh()
            };
        }
        act = next;
    }
    act[0]
}

fn ref_score(params: &ScorerParams, x: &[f64]) -> f64 {
    ref_score_flat(params.widths(), params.as_flat(), x)
}

fn ref_g(p: f64, a: f64, b: f64, alpha: f64, s: f64, y: u8) -> f64 {
    let (pos, neg) = if y == 1 { (1.0, 0.0) } else { (0.0, 1.0) };
    (1.0 - p) * (s - a).powi(2) * pos
        + p * (s - b).powi(2) * neg
        + 2.0 * (1.0 + alpha) * (p * s * neg - (1.0 - p) * s * pos)
        - p * (1.0 - p) * alpha * alpha
}

fn ref_f(
    p: f64,
    gamma: f64,
    widths: &[usize],
    flat: &[f64],
    abz: [f64; 3],
    x: &[f64],
    y: u8,
) -> f64 {
    let s = ref_score_flat(widths, flat, x);
    ref_g(p, abz[0], abz[1], abz[2], s, y) - gamma * x.iter().map(|v| v * v).sum::<f64>()
}

fn mean_g(p: f64, a: f64, b: f64, alpha: f64, scores: &[f64], labels: &[u8]) -> f64 {
    let mut acc = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        acc += ref_g(p, a, b, alpha, s, y);
    }
    acc / scores.len() as f64
}

fn ref_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut acc, mut pairs) = (0.0, 0usize);
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj == 0 {
                acc += (1.0 - (scores[i] - scores[j])).powi(2);
                pairs += 1;
            }
        }
    }
    acc / pairs as f64
}

fn random_unit(rng: &mut Prng, d: usize) -> Vec<f64> {
    rng.unit_vector(d)
}

// ---------------------------------------------------------------------------
// saddle-point equivalence

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prop1Report {
    pub pairwise: f64,
    /// Min-max value via the class-mean closed forms, on the pairwise scale.
    pub closed_form: f64,
    /// Min-max value via nested grid search, on the pairwise scale.
    pub grid: f64,
    pub max_abs_gap: f64,
}

/// Vertex of the parabola through `(t−h, t, t+h)`. Exact for quadratics.
fn parabola_vertex(q: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    let (qm, q0, qp) = (q(t - h), q(t), q(t + h));
    let curv = qp - 2.0 * q0 + qm;
    if curv == 0.0 {
        return t;
    }
    t - h * (qp - qm) / (2.0 * curv)
}

/// Grid search of `q` over `[lo, hi]`, zooming around the best point until
/// the step reaches `1e-4`, then one exact parabola solve clamped to the
/// interval. `maximize` selects the direction.
fn grid_extremum(q: &dyn Fn(f64) -> f64, lo: f64, hi: f64, maximize: bool) -> f64 {
    let better = |u: f64, v: f64| if maximize { u > v } else { u < v };
    let mut step = (hi - lo) / 40.0;
    let (mut a, mut b) = (lo, hi);
    let mut best_t = lo;
    let mut best_v = q(lo);
    loop {
        let n = ((b - a) / step).round() as usize;
        for k in 0..=n {
            let t = (a + k as f64 * step).min(hi);
            let v = q(t);
            if better(v, best_v) {
                best_t = t;
                best_v = v;
            }
        }
        if step <= 1e-4 {
            break;
        }
        a = (best_t - step).max(lo);
        b = (best_t + step).min(hi);
        step = (step / 10.0).max(1e-4);
    }
    let t = parabola_vertex(q, best_t, 0.05).clamp(lo, hi);
    if better(q(t), best_v) || q(t) == best_v {
        t
    } else {
        best_t
    }
}

/// Class moments of the scores; the mean of `g` over the set is a
/// function of these alone, which keeps the nested search cheap.
struct Moments {
    n: f64,
    n_pos: f64,
    s1p: f64,
    s2p: f64,
    s1n: f64,
    s2n: f64,
}

impl Moments {
    fn new(scores: &[f64], labels: &[u8]) -> Self {
        let mut m = Moments {
            n: scores.len() as f64,
            n_pos: 0.0,
            s1p: 0.0,
            s2p: 0.0,
            s1n: 0.0,
            s2n: 0.0,
        };
        for (&s, &y) in scores.iter().zip(labels) {
            if y == 1 {
                m.n_pos += 1.0;
                m.s1p += s;
                m.s2p += s * s;
            } else {
                m.s1n += s;
                m.s2n += s * s;
            }
        }
        m
    }

    fn mean_g(&self, p: f64, a: f64, b: f64, alpha: f64) -> f64 {
        let n_neg = self.n - self.n_pos;
        let pos = (1.0 - p) * (self.s2p - 2.0 * a * self.s1p + self.n_pos * a * a);
        let neg = p * (self.s2n - 2.0 * b * self.s1n + n_neg * b * b);
        let lin = 2.0 * (1.0 + alpha) * (p * self.s1n - (1.0 - p) * self.s1p);
        (pos + neg + lin) / self.n - p * (1.0 - p) * alpha * alpha
    }
}

/// `min_{a ∈ [0,1]} min_{b ∈ [0,1]} max_{α ∈ [−1,1]}` of the mean of `g`,
/// each level by [`grid_extremum`]. The search does not use the separable
/// structure: `b` is re-optimised for every candidate `a`, and `α` for
/// every `(a, b)`.
fn grid_minmax(p: f64, scores: &[f64], labels: &[u8]) -> f64 {
    let m = Moments::new(scores, labels);
    let inner = |a: f64, b: f64| {
        let q = |al: f64| m.mean_g(p, a, b, al);
        let al = grid_extremum(&q, -1.0, 1.0, true);
        q(al)
    };
    let over_b = |a: f64| {
        let q = |b: f64| inner(a, b);
        let b = grid_extremum(&q, 0.0, 1.0, false);
        q(b)
    };
    let a = grid_extremum(&over_b, 0.0, 1.0, false);
    over_b(a)
}

/// Compares the pairwise square loss of `params` on `dataset` with the
/// saddle-point value obtained from the closed forms and from nested grid
/// search. Returns both and the larger discrepancy.
pub fn verify_prop1(dataset: &Dataset, params: &ScorerParams) -> Result<Prop1Report> {
    if dataset.n_pos() == 0 || dataset.n_neg() == 0 {
        return Err(Error::SingleClass);
    }
    let scores: Vec<f64> = dataset
        .features()
        .iter_rows()
        .map(|x| ref_score(params, x))
        .collect();
    let labels = dataset.labels();
    Ok(prop1_from_scores(&scores, labels))
}

fn prop1_from_scores(scores: &[f64], labels: &[u8]) -> Prop1Report {
    let n = labels.len() as f64;
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let p = n_pos / n;
    let pairwise = ref_pairwise(scores, labels);
    let to_risk = |v: f64| 1.0 + v / (p * (1.0 - p));

    let (mut sp, mut sn) = (0.0, 0.0);
    for (&s, &y) in scores.iter().zip(labels) {
        if y == 1 {
            sp += s;
        } else {
            sn += s;
        }
    }
    let a = sp / n_pos;
    let b = sn / (n - n_pos);
    let closed_form = to_risk(mean_g(p, a, b, b - a, scores, labels));
    let grid = to_risk(grid_minmax(p, scores, labels));
    Prop1Report {
        pairwise,
        closed_form,
        grid,
        max_abs_gap: (pairwise - closed_form).abs().max((pairwise - grid).abs()),
    }
}

// ---------------------------------------------------------------------------
// FOSC zero conditions

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    /// Largest FOSC over the constructed stationary points.
    pub stationary_fosc: f64,
    /// FOSC at the boundary fixed point, `None` if the sign pattern of the
    /// gradient never settled.
    pub boundary_fosc: Option<f64>,
    /// FOSC at a generic interior point of the ball.
    pub generic_fosc: f64,
    /// `|closed form − corner enumeration|` at the generic point (`d ≤ 12`).
    pub corner_gap: Option<f64>,
}

impl Lemma1Report {
    pub fn passed(&self) -> bool {
        self.stationary_fosc <= 1e-10
            && self.boundary_fosc.is_none_or(|c| c <= 1e-8)
            && self.generic_fosc > 0.0
            && self.corner_gap.is_none_or(|g| g <= 1e-10)
    }
}

/// `max ⟨x′ − x, grad⟩` over the `2^d` corners of the ε-box around `x0`.
pub fn fosc_by_corners(x: &[f64], x0: &[f64], grad: &[f64], eps: f64) -> Result<f64> {
    let d = x.len();
    if d > 20 {
        return Err(Error::InvalidArgument(format!(
            "corner enumeration needs d <= 20, got {d}"
        )));
    }
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1u32 << d) {
        let mut v = 0.0;
        for i in 0..d {
            let corner = if mask >> i & 1 == 1 {
                x0[i] + eps
            } else {
                x0[i] - eps
            };
            v += (corner - x[i]) * grad[i];
        }
        best = best.max(v);
    }
    Ok(best)
}

fn grad_x(
    ctx: &ObjectiveContext,
    params: &ScorerParams,
    aux: &AuxParams,
    x: &[f64],
    y: u8,
) -> Result<Vec<f64>> {
    Ok(grad_f(ctx, params, aux, x, y)?.d_x)
}

/// Checks that FOSC vanishes at stationary points and at boundary fixed
/// points of signed ascent, and is positive at a generic point.
///
/// Stationary points are built synthetically: the zero scorer with `γ = 0`,
/// and a linear scorer `w = λx*` with `γ` solved so that `∇ₓf(x*) = 0`.
/// The boundary point iterates `x ← x0 + ε·sign(∇ₓf(x))` from `x0` (pulled
/// inside `[ε, 1−ε]`) until the sign pattern is stable.
pub fn verify_lemma1(
    params: &ScorerParams,
    aux: &AuxParams,
    ctx: &ObjectiveContext,
    x0: &[f64],
    y: u8,
    eps: f64,
    seed: u64,
) -> Result<Lemma1Report> {
    let d = params.input_dim();
    if x0.len() != d {
        return Err(Error::Shape {
            context: "lemma1 point",
            expected: d,
            got: x0.len(),
        });
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "eps must lie in (0, 0.5), got {eps}"
        )));
    }

    // (a) zero scorer, no regularizer
    let zero = ScorerParams::zeros(params.widths())?;
    let origin = vec![0.0; d];
    let flat_ctx = ctx.with_gamma(0.0)?;
    let g0 = grad_x(&flat_ctx, &zero, aux, &origin, y)?;
    let mut stationary = fosc(&origin, &origin, &g0, eps)?;

    // (a) linear scorer along x*, gamma balancing the score gradient
    let x_star: Vec<f64> = x0.iter().map(|v| v.clamp(0.05, 0.95)).collect();
    let norm = l2_norm(&x_star);
    'search: for yy in [y, 1 - y] {
        for sgn in [1.0, -1.0] {
            let lambda = sgn / norm;
            let mut flat: Vec<f64> = x_star.iter().map(|v| lambda * v).collect();
            flat.push(0.0);
            let lin = ScorerParams::from_flat(&[d, 1], flat)?;
            let s = ref_score(&lin, &x_star);
            let ds = partial_s(ctx.p(), aux, s, yy);
            let kappa = ds * s * (1.0 - s);
            let gamma = kappa * lambda / 2.0;
            if gamma > 0.0 {
                let c = ctx.with_gamma(gamma)?;
                let g = grad_x(&c, &lin, aux, &x_star, yy)?;
                stationary = stationary.max(fosc(&x_star, &x_star, &g, eps)?);
                break 'search;
            }
        }
    }

    // (b) boundary fixed point of signed ascent
    let inner: Vec<f64> = x0.iter().map(|v| v.clamp(eps, 1.0 - eps)).collect();
    let mut x = inner.clone();
    let mut boundary = None;
    for _ in 0..100 {
        let g = grad_x(ctx, params, aux, &x, y)?;
        let next: Vec<f64> = inner
            .iter()
            .zip(&g)
            .map(|(&c, &gi)| c + eps * crate::linalg::sign_scalar(gi))
            .collect();
        if next == x {
            boundary = Some(fosc(&x, &inner, &g, eps)?);
            break;
        }
        x = next;
    }

    // generic interior point
    let mut rng = Prng::new(seed);
    let xg: Vec<f64> = inner
        .iter()
        .map(|&c| c + rng.uniform(-0.5, 0.5) * eps)
        .collect();
    let g = grad_x(ctx, params, aux, &xg, y)?;
    let generic = fosc(&xg, &inner, &g, eps)?;
    let corner_gap = if d <= 12 {
        Some((fosc_by_corners(&xg, &inner, &g, eps)? - generic).abs())
    } else {
        None
    };
    Ok(Lemma1Report {
        stationary_fosc: stationary,
        boundary_fosc: boundary,
        generic_fosc: generic,
        corner_gap,
    })
}

fn partial_s(p: f64, aux: &AuxParams, s: f64, y: u8) -> f64 {
    // derivative of ref_g in s, written out by hand
    if y == 1 {
        2.0 * (1.0 - p) * (s - aux.a) - 2.0 * (1.0 + aux.alpha) * (1.0 - p)
    } else {
        2.0 * p * (s - aux.b) + 2.0 * (1.0 + aux.alpha) * p
    }
}

// ---------------------------------------------------------------------------
// curvature in the input

/// `(φ(t+h) + φ(t−h) − 2φ(t)) / h²` along `u` at `x`.
pub fn directional_curvature(phi: impl Fn(&[f64]) -> f64, x: &[f64], u: &[f64], h: f64) -> f64 {
    let shift = |t: f64| -> Vec<f64> { x.iter().zip(u).map(|(a, b)| a + t * b).collect() };
    (phi(&shift(h)) + phi(&shift(-h)) - 2.0 * phi(x)) / (h * h)
}

/// Dominant (largest algebraic) eigenvector of the finite-difference Hessian
/// of `phi` at `x`.
fn top_hessian_direction(phi: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let d = x.len();
    let mut hess = vec![0.0; d * d];
    let at = |di: usize, si: f64, dj: usize, sj: f64| {
        let mut z = x.to_vec();
        z[di] += si * h;
        z[dj] += sj * h;
        phi(&z)
    };
    for i in 0..d {
        for j in i..d {
            let v = (at(i, 1.0, j, 1.0) - at(i, 1.0, j, -1.0) - at(i, -1.0, j, 1.0)
                + at(i, -1.0, j, -1.0))
                / (4.0 * h * h);
            hess[i * d + j] = v;
            hess[j * d + i] = v;
        }
    }
    let shift = hess.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-12;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    for _ in 0..200 {
        let mut w = vec![0.0; d];
        for i in 0..d {
            let mut acc = shift * v[i];
            for j in 0..d {
                acc += hess[i * d + j] * v[j];
            }
            w[i] = acc;
        }
        let n = l2_norm(&w);
        if n == 0.0 {
            break;
        }
        v = w.into_iter().map(|c| c / n).collect();
    }
    v
}

fn score_gradient_direction(params: &ScorerParams, x: &[f64]) -> Option<Vec<f64>> {
    const H: f64 = 1e-6;
    let mut z = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = z[i];
        z[i] = orig + H;
        let fp = ref_score(params, &z);
        z[i] = orig - H;
        let fm = ref_score(params, &z);
        z[i] = orig;
        g[i] = (fp - fm) / (2.0 * H);
    }
    let n = l2_norm(&g);
    (n > 0.0).then(|| g.into_iter().map(|c| c / n).collect())
}

/// Empirical lower estimate of the weak-concavity constant of the saddle
/// objective in one instance's input.
///
/// Each probe places instance `i` of `sample` at a uniform point of the box
/// and measures second differences (step `1e-3`) along a random unit
/// direction, the score-gradient direction and, for `d ≤ 16`, the top
/// Hessian eigenvector. Two functions are probed: the sum over the sample of
/// `g` with `α` maximised in closed form, and the single-instance `g` at the
/// supplied `aux`. The result is the largest positive curvature seen.
pub fn estimate_gamma_star(
    params: &ScorerParams,
    aux: &AuxParams,
    ctx: &ObjectiveContext,
    sample: &Dataset,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    const H: f64 = 1e-3;
    if probes < 100 {
        return Err(Error::InvalidArgument(format!(
            "need at least 100 probes, got {probes}"
        )));
    }
    if sample.dim() != params.input_dim() {
        return Err(Error::Shape {
            context: "gamma probe sample",
            expected: params.input_dim(),
            got: sample.dim(),
        });
    }
    if sample.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let p = ctx.p();
    let labels = sample.labels();
    let n = labels.len();
    let base_scores: Vec<f64> = sample
        .features()
        .iter_rows()
        .map(|x| ref_score(params, x))
        .collect();
    let d = params.input_dim();

    let curvatures: Vec<f64> = (0..probes)
        .into_par_iter()
        .map(|k| {
            let mut rng = Prng::for_index(seed, k as u64);
            let i = rng.index(n);
            let y = labels[i];
            let x: Vec<f64> = (0..d).map(|_| rng.uniform(0.0, 1.0)).collect();

            // Σ_j g_j with instance i at z and α maximised over [−1, 1]
            let (mut q_rest, mut m_rest) = (0.0, 0.0);
            for (j, (&s, &yj)) in base_scores.iter().zip(labels).enumerate() {
                if j == i {
                    continue;
                }
                q_rest += ref_g(p, aux.a, aux.b, -1.0, s, yj) + p * (1.0 - p);
                m_rest += ref_g(p, aux.a, aux.b, 0.0, s, yj)
                    - ref_g(p, aux.a, aux.b, -1.0, s, yj)
                    - p * (1.0 - p);
            }
            let summed = |z: &[f64]| {
                let s = ref_score(params, z);
                // g at α = −1 has no linear term; g(0) − g(−1) isolates it, so
                // Σg(α) = Q + (1+α)M − n·p(1−p)α².
                let q = q_rest + ref_g(p, aux.a, aux.b, -1.0, s, y) + p * (1.0 - p);
                let m = m_rest + ref_g(p, aux.a, aux.b, 0.0, s, y)
                    - ref_g(p, aux.a, aux.b, -1.0, s, y)
                    - p * (1.0 - p);
                let nq = n as f64 * p * (1.0 - p);
                let alpha = (m / (2.0 * nq)).clamp(-1.0, 1.0);
                q + (1.0 + alpha) * m - nq * alpha * alpha
            };
            let single = |z: &[f64]| ref_g(p, aux.a, aux.b, aux.alpha, ref_score(params, z), y);

            let mut dirs = vec![random_unit(&mut rng, d)];
            if let Some(u) = score_gradient_direction(params, &x) {
                dirs.push(u);
            }
            if d <= 16 {
                dirs.push(top_hessian_direction(&summed, &x, H));
                dirs.push(top_hessian_direction(&single, &x, H));
            }
            let mut worst = 0.0f64;
            for u in &dirs {
                worst = worst
                    .max(directional_curvature(summed, &x, u, H))
                    .max(directional_curvature(single, &x, u, H));
            }
            worst
        })
        .collect();
    Ok(curvatures.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcavityReport {
    pub probes: usize,
    pub violations: usize,
    /// Largest `second difference / (2h²)`; the bound is `−margin·(1 − 1e-3)`.
    pub worst_ratio: f64,
}

impl ConcavityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Probes `f(x+hu) + f(x−hu) − 2f(x) ≤ −2·margin·h²·(1 − 1e-3)` at uniform
/// points of the box with random labels, unit directions and `h ∈ [1e-3, 1e-2]`.
pub fn verify_strong_concavity(
    params: &ScorerParams,
    aux: &AuxParams,
    ctx: &ObjectiveContext,
    margin: f64,
    probes: usize,
    seed: u64,
) -> Result<ConcavityReport> {
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "margin must be positive, got {margin}"
        )));
    }
    let d = params.input_dim();
    let (p, gamma) = (ctx.p(), ctx.gamma());
    let abz = [aux.a, aux.b, aux.alpha];
    let ratios: Vec<f64> = (0..probes)
        .into_par_iter()
        .map(|k| {
            let mut rng = Prng::for_index(seed, k as u64);
            let x: Vec<f64> = (0..d).map(|_| rng.uniform(0.0, 1.0)).collect();
            let y = (rng.next_u64() & 1) as u8;
            let u = random_unit(&mut rng, d);
            let h = rng.uniform(1e-3, 1e-2);
            let f = |z: &[f64]| ref_f(p, gamma, params.widths(), params.as_flat(), abz, z, y);
            directional_curvature(f, &x, &u, h) / 2.0
        })
        .collect();
    let bound = -margin * (1.0 - 1e-3);
    Ok(ConcavityReport {
        probes,
        violations: ratios.iter().filter(|&&r| r > bound).count(),
        worst_ratio: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Largest `|Δ²_α g − (−2p(1−p)h²)|` over random states, where
/// `Δ²_α g = g(α+h) + g(α−h) − 2g(α)`.
pub fn verify_alpha_concavity(ctx: &ObjectiveContext, states: usize, seed: u64) -> Result<f64> {
    let p = ctx.p();
    let mut rng = Prng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..states {
        let s = rng.uniform(0.0, 1.0);
        let y = (rng.next_u64() & 1) as u8;
        let a = rng.uniform(0.0, 1.0);
        let b = rng.uniform(0.0, 1.0);
        let alpha = rng.uniform(-0.5, 0.5);
        let h = rng.uniform(0.0, 0.5);
        let at = |al: f64| g_instance(ctx, &AuxParams { a, b, alpha: al }, s, y);
        let d2 = at(alpha + h)? + at(alpha - h)? - 2.0 * at(alpha)?;
        worst = worst.max((d2 + 2.0 * p * (1.0 - p) * h * h).abs());
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// gradients

/// Worst relative error of [`grad_f`] against central differences
/// (`h = 1e-5`) of an independent evaluation of `f`, over `θ, a, b, α, x`.
/// Relative error uses the floor `max(|analytic|, |numeric|, 1e-3)`.
pub fn gradcheck(
    params: &ScorerParams,
    aux: &AuxParams,
    ctx: &ObjectiveContext,
    x: &[f64],
    y: u8,
) -> Result<f64> {
    const H: f64 = 1e-5;
    let g = grad_f(ctx, params, aux, x, y)?;
    let widths = params.widths();
    let (p, gamma) = (ctx.p(), ctx.gamma());
    let eval = |flat: &[f64], abz: [f64; 3], z: &[f64]| ref_f(p, gamma, widths, flat, abz, z, y);
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
    let abz = [aux.a, aux.b, aux.alpha];
    let mut worst = 0.0f64;

    let mut flat = params.as_flat().to_vec();
    for (i, &analytic) in g.d_theta.iter().enumerate() {
        let orig = flat[i];
        flat[i] = orig + H;
        let fp = eval(&flat, abz, x);
        flat[i] = orig - H;
        let fm = eval(&flat, abz, x);
        flat[i] = orig;
        worst = worst.max(rel(analytic, (fp - fm) / (2.0 * H)));
    }
    for (k, analytic) in [g.d_a, g.d_b, g.d_alpha].into_iter().enumerate() {
        let (mut up, mut dn) = (abz, abz);
        up[k] += H;
        dn[k] -= H;
        let num = (eval(&flat, up, x) - eval(&flat, dn, x)) / (2.0 * H);
        worst = worst.max(rel(analytic, num));
    }
    let mut z = x.to_vec();
    for (i, &analytic) in g.d_x.iter().enumerate() {
        let orig = z[i];
        z[i] = orig + H;
        let fp = eval(&flat, abz, &z);
        z[i] = orig - H;
        let fm = eval(&flat, abz, &z);
        z[i] = orig;
        worst = worst.max(rel(analytic, (fp - fm) / (2.0 * H)));
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// suites

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Prop1,
    Lemma1,
    Concavity,
    Gradcheck,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "prop1" => Ok(Self::Prop1),
            "lemma1" => Ok(Self::Lemma1),
            "concavity" => Ok(Self::Concavity),
            "gradcheck" => Ok(Self::Gradcheck),
            "all" => Ok(Self::All),
            other => Err(Error::InvalidArgument(format!("unknown suite `{other}`"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Prop1 => "prop1",
            Self::Lemma1 => "lemma1",
            Self::Concavity => "concavity",
            Self::Gradcheck => "gradcheck",
            Self::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: String,
    pub value: f64,
    /// Human-readable bound, e.g. `<= 1e-8` or `> 0`.
    pub bound: String,
    pub passed: bool,
}

fn at_most(suite: Suite, name: &str, value: f64, limit: f64) -> CheckResult {
    CheckResult {
        suite,
        name: name.into(),
        value,
        bound: format!("<= {limit:e}"),
        passed: value <= limit,
    }
}

fn random_dataset(rng: &mut Prng, n: usize, d: usize, name: &str) -> Result<Dataset> {
    let mut labels: Vec<u8> = (0..n).map(|_| (rng.next_u64() & 1) as u8).collect();
    labels[0] = 1;
    labels[1] = 0;
    let data = (0..n * d).map(|_| rng.uniform(0.0, 1.0)).collect();
    Dataset::new(Matrix::from_vec(n, d, data)?, labels, name)
}

/// Scales an initialised scorer so its hidden units leave the linear regime.
fn curvy_mlp(widths: &[usize], seed: u64, scale: f64) -> Result<ScorerParams> {
    let base = ScorerParams::init(widths, seed)?;
    ScorerParams::from_flat(widths, base.as_flat().iter().map(|v| v * scale).collect())
}

fn random_aux(rng: &mut Prng) -> AuxParams {
    AuxParams {
        a: rng.uniform(0.0, 1.0),
        b: rng.uniform(0.0, 1.0),
        alpha: rng.uniform(-1.0, 1.0),
    }
}

fn suite_prop1(seed: u64) -> Result<Vec<CheckResult>> {
    let s = Suite::Prop1;
    let reports: Vec<(f64, f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = Prng::for_index(seed, k);
            let n = 2 + rng.index(19);
            let ds = random_dataset(&mut rng, n, 4, "prop1")?;
            let params = curvy_mlp(&[4, 6, 1], seed.wrapping_add(k), 2.0)?;
            let r = verify_prop1(&ds, &params)?;
            let scores = params.score_rows(ds.features())?;
            let lib_gap = (pairwise_sq_loss(&scores, ds.labels())? - r.pairwise)
                .abs()
                .max((reformulated_risk(&scores, ds.labels())? - r.pairwise).abs());

            // stationarity of the batch means at the unclamped closed forms
            let aux = closed_form_aux_unclamped(&scores, ds.labels())?;
            let ctx = ObjectiveContext::new(ds.p(), 0.0)?;
            let mut sum = [0.0f64; 3];
            for (&sc, &y) in scores.iter().zip(ds.labels()) {
                let GPartials { da, db, dalpha, .. } =
                    crate::objective::g_partials(&ctx, &aux, sc, y)?;
                sum[0] += da;
                sum[1] += db;
                sum[2] += dalpha;
            }
            let stat = sum.iter().map(|v| (v / n as f64).abs()).fold(0.0, f64::max);
            Ok((r.max_abs_gap, lib_gap, stat))
        })
        .collect::<Result<_>>()?;
    let max_of = |f: fn(&(f64, f64, f64)) -> f64| reports.iter().map(f).fold(0.0, f64::max);

    let tie = prop1_from_scores(&[0.3; 6], &[1, 0, 1, 0, 0, 0]);
    let tie_gap = (tie.pairwise - 1.0)
        .abs()
        .max((tie.closed_form - 1.0).abs());
    Ok(vec![
        at_most(s, "minmax_gap_100_random", max_of(|r| r.0), 1e-8),
        at_most(s, "library_vs_oracle", max_of(|r| r.1), 1e-12),
        at_most(s, "closed_form_stationarity", max_of(|r| r.2), 1e-10),
        at_most(s, "equal_scores_unit_risk", tie_gap, 1e-12),
    ])
}

fn suite_lemma1(seed: u64) -> Result<Vec<CheckResult>> {
    let s = Suite::Lemma1;
    let mut rng = Prng::new(seed);
    let (mut stationary, mut boundary, mut corner) = (0.0f64, 0.0f64, 0.0f64);
    let mut generic_min = f64::INFINITY;
    let (mut stable, mut total) = (0usize, 0usize);
    for k in 0..20u64 {
        let d = 2 + rng.index(11);
        let params = curvy_mlp(&[d, 5, 1], seed.wrapping_add(k), 1.5)?;
        let aux = random_aux(&mut rng);
        let ctx = ObjectiveContext::new(rng.uniform(0.05, 0.95), rng.uniform(0.0, 0.5))?;
        let x0: Vec<f64> = (0..d).map(|_| rng.uniform(0.0, 1.0)).collect();
        let y = (rng.next_u64() & 1) as u8;
        let r = verify_lemma1(&params, &aux, &ctx, &x0, y, 8.0 / 255.0, rng.next_u64())?;
        stationary = stationary.max(r.stationary_fosc);
        total += 1;
        if let Some(b) = r.boundary_fosc {
            boundary = boundary.max(b);
            stable += 1;
        }
        generic_min = generic_min.min(r.generic_fosc);
        corner = corner.max(r.corner_gap.unwrap_or(0.0));
    }
    Ok(vec![
        at_most(s, "stationary_point_fosc", stationary, 1e-10),
        at_most(s, "boundary_fixed_point_fosc", boundary, 1e-8),
        CheckResult {
            suite: s,
            name: "generic_point_fosc_min".into(),
            value: generic_min,
            bound: "> 0".into(),
            passed: generic_min > 0.0,
        },
        at_most(s, "corner_enumeration_gap", corner, 1e-10),
        CheckResult {
            suite: s,
            name: "sign_stable_instances".into(),
            value: stable as f64,
            bound: format!("reported of {total}"),
            passed: true,
        },
    ])
}

fn suite_concavity(seed: u64) -> Result<Vec<CheckResult>> {
    let s = Suite::Concavity;
    let mut rng = Prng::new(seed);
    let mut alpha_dev = 0.0f64;
    for k in 0..50u64 {
        let ctx = ObjectiveContext::new(rng.uniform(0.01, 0.99), 0.0)?;
        alpha_dev = alpha_dev.max(verify_alpha_concavity(&ctx, 200, seed.wrapping_add(k))?);
    }

    let widths = [6, 8, 1];
    let params = curvy_mlp(&widths, seed, 3.0)?;
    let sample = random_dataset(&mut rng, 40, 6, "gamma-sample")?;
    let scores = params.score_rows(sample.features())?;
    let aux = crate::objective::closed_form_aux(&scores, sample.labels())?;
    let ctx = ObjectiveContext::new(sample.p(), 0.0)?;
    let gamma_hat = estimate_gamma_star(&params, &aux, &ctx, &sample, 200, seed)?;
    let strong = verify_strong_concavity(
        &params,
        &aux,
        &ctx.with_gamma(gamma_hat + 1.0)?,
        1.0,
        1000,
        seed,
    )?;
    let control = verify_strong_concavity(&params, &aux, &ctx, 1.0, 1000, seed)?;
    Ok(vec![
        at_most(s, "alpha_second_difference", alpha_dev, 1e-12),
        CheckResult {
            suite: s,
            name: "gamma_hat".into(),
            value: gamma_hat,
            bound: ">= 0".into(),
            passed: gamma_hat >= 0.0,
        },
        CheckResult {
            suite: s,
            name: "strong_concavity_violations".into(),
            value: strong.violations as f64,
            bound: "== 0".into(),
            passed: strong.passed(),
        },
        CheckResult {
            suite: s,
            name: "negative_control_violations".into(),
            value: control.violations as f64,
            bound: ">= 1".into(),
            passed: control.violations >= 1,
        },
    ])
}

fn suite_gradcheck(seed: u64) -> Result<Vec<CheckResult>> {
    let s = Suite::Gradcheck;
    let run = |widths: &'static [usize], salt: u64| -> Result<f64> {
        let errs: Vec<f64> = (0..100u64)
            .into_par_iter()
            .map(|k| {
                let mut rng = Prng::for_index(seed ^ salt, k);
                let params = curvy_mlp(widths, rng.next_u64(), 1.5)?;
                let aux = random_aux(&mut rng);
                let ctx = ObjectiveContext::new(rng.uniform(0.05, 0.95), rng.uniform(0.0, 1.0))?;
                let x: Vec<f64> = (0..widths[0]).map(|_| rng.uniform(0.0, 1.0)).collect();
                gradcheck(&params, &aux, &ctx, &x, (rng.next_u64() & 1) as u8)
            })
            .collect::<Result<_>>()?;
        Ok(errs.into_iter().fold(0.0, f64::max))
    };
    Ok(vec![
        at_most(s, "linear_max_rel_error", run(&[5, 1], 0x11)?, 1e-6),
        at_most(s, "mlp_max_rel_error", run(&[5, 7, 4, 1], 0x22)?, 1e-6),
    ])
}

/// Runs one suite (or all of them) at a fixed seed.
pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckResult>> {
    match suite {
        Suite::Prop1 => suite_prop1(seed),
        Suite::Lemma1 => suite_lemma1(seed),
        Suite::Concavity => suite_concavity(seed),
        Suite::Gradcheck => suite_gradcheck(seed),
        Suite::All => {
            let mut out = suite_prop1(seed)?;
            out.extend(suite_lemma1(seed)?);
            out.extend(suite_concavity(seed)?);
            out.extend(suite_gradcheck(seed)?);
            Ok(out)
        }
    }
}

/// `suite,check,value,bound,passed` rows after `# key = value` header lines.
pub fn report_csv(results: &[CheckResult], header: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in header {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    out.push_str("suite,check,value,bound,passed\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{:e},{},{}\n",
            r.suite, r.name, r.value, r.bound, r.passed
        ));
    }
    out
}
