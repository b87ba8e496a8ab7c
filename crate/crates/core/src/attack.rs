//! ℓ∞ attacks on the surrogate objective `f`.
//!
//! The attacker maximises `f` inside `{x : ‖x − x⁰‖∞ ≤ ε} ∩ [0,1]^d`.
//! The first-order stationarity value (FOSC)
//!
//! ```text
//! c(x) = max_{x' ∈ ball} ⟨x' − x, ∇ₓf(x)⟩ = ε‖∇ₓf(x)‖₁ − ⟨x − x⁰, ∇ₓf(x)⟩
//! ```
//!
//! measures how far an iterate is from a stationary point of the inner
//! maximisation and drives the early-stopping mask of the batch attack.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::linalg::{linf_dist, sign_scalar, Matrix};
use crate::model::ScorerParams;
use crate::objective::{grad_f, AuxParams, ObjectiveContext};
use crate::rng::Prng;
use crate::{Error, Result};

/// Slack allowed when checking that an iterate is inside the ε-ball.
pub const BALL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub eps: f64,
    pub beta: f64,
    pub k_steps: usize,
    /// `None` derives `c_max` from the first training batch.
    pub c_max: Option<f64>,
    /// Control epoch `T′`; `None` means half of the training epochs.
    pub t_prime: Option<usize>,
    /// Uniform random start inside the ball (evaluation attacks only).
    pub random_start: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            eps: 8.0 / 255.0,
            beta: 2.0 / 255.0,
            k_steps: 10,
            c_max: None,
            t_prime: None,
            random_start: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= self.eps && self.eps <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "attack needs 0 < beta <= eps <= 1 (beta={}, eps={})",
                self.beta, self.eps
            )));
        }
        if self.k_steps == 0 {
            return Err(Error::InvalidArgument("k_steps must be >= 1".into()));
        }
        if matches!(self.c_max, Some(c) if !(c >= 0.0)) {
            return Err(Error::InvalidArgument("c_max must be >= 0".into()));
        }
        if self.t_prime == Some(0) {
            return Err(Error::InvalidArgument("t_prime must be >= 1".into()));
        }
        Ok(())
    }
}

/// Closed-form FOSC at `x` given `∇ₓf(x)`.
pub fn fosc(x: &[f64], x0: &[f64], grad_x: &[f64], eps: f64) -> Result<f64> {
    let dist = linf_dist(x, x0)?;
    if dist > eps + BALL_TOL {
        return Err(Error::OutsideBall { dist, eps });
    }
    if grad_x.len() != x.len() {
        return Err(Error::Shape {
            context: "fosc gradient",
            expected: x.len(),
            got: grad_x.len(),
        });
    }
    // Σ gᵢ·(x*ᵢ − xᵢ) with the corner x*ᵢ = x⁰ᵢ ± ε rounded as in
    // `project_ball`, so fixed points of the signed step give exactly zero.
    Ok(x.iter()
        .zip(x0)
        .zip(grad_x)
        .map(|((&v, &c), &g)| match sign_scalar(g) {
            s if s > 0.0 => g * ((c + eps) - v),
            s if s < 0.0 => g * ((c - eps) - v),
            _ => 0.0,
        })
        .sum())
}

/// Projection onto the ε-ball around `x0`, then onto the unit box.
pub fn project_ball(x: &[f64], x0: &[f64], eps: f64) -> Vec<f64> {
    x.iter()
        .zip(x0)
        .map(|(&v, &c)| v.clamp(c - eps, c + eps).clamp(0.0, 1.0))
        .collect()
}

/// Single signed-gradient step of size ε from the clean point.
pub fn fgsm(
    ctx: &ObjectiveContext,
    params: &ScorerParams,
    aux: &AuxParams,
    x0: &[f64],
    y: u8,
    eps: f64,
) -> Result<Vec<f64>> {
    let g = grad_f(ctx, params, aux, x0, y)?;
    Ok(x0
        .iter()
        .zip(&g.d_x)
        .map(|(&v, &d)| (v + eps * sign_scalar(d)).clamp(0.0, 1.0))
        .collect())
}

/// Result of a batch attack.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvBatch {
    pub x0: Matrix,
    pub x_adv: Matrix,
    /// FOSC at each returned point.
    pub fosc: Vec<f64>,
    pub steps_used: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct PgdSettings {
    eps: f64,
    beta: f64,
    k_steps: usize,
    c_t: f64,
    early_stop: bool,
}

fn pgd_instance(
    ctx: &ObjectiveContext,
    params: &ScorerParams,
    aux: &AuxParams,
    x0: &[f64],
    y: u8,
    start: Vec<f64>,
    s: PgdSettings,
) -> Result<(Vec<f64>, f64, usize)> {
    let mut x = start;
    let mut grad = grad_f(ctx, params, aux, &x, y)?.d_x;
    let mut c = fosc(&x, x0, &grad, s.eps)?;
    let mut steps = 0;
    while steps < s.k_steps {
        let stepped: Vec<f64> = x
            .iter()
            .zip(&grad)
            .map(|(&v, &d)| v + s.beta * sign_scalar(d))
            .collect();
        x = project_ball(&stepped, x0, s.eps);
        steps += 1;
        grad = grad_f(ctx, params, aux, &x, y)?.d_x;
        c = fosc(&x, x0, &grad, s.eps)?;
        if s.early_stop && c <= s.c_t {
            break;
        }
    }
    Ok((x, c, steps))
}

fn pgd_batch(
    ctx: &ObjectiveContext,
    params: &ScorerParams,
    aux: &AuxParams,
    xs: &Matrix,
    ys: &[u8],
    s: PgdSettings,
    random_start: Option<u64>,
) -> Result<AdvBatch> {
    if xs.rows() != ys.len() {
        return Err(Error::Shape {
            context: "attack batch labels",
            expected: xs.rows(),
            got: ys.len(),
        });
    }
    let results: Vec<(Vec<f64>, f64, usize)> = (0..xs.rows())
        .into_par_iter()
        .map(|i| {
            let x0 = xs.row(i);
            let start = match random_start {
                Some(seed) => {
                    let mut rng = Prng::for_index(seed, i as u64);
                    let jittered: Vec<f64> =
                        x0.iter().map(|&v| v + rng.uniform(-s.eps, s.eps)).collect();
                    project_ball(&jittered, x0, s.eps)
                }
                None => x0.to_vec(),
            };
            pgd_instance(ctx, params, aux, x0, ys[i], start, s)
        })
        .collect::<Result<_>>()?;

    let mut x_adv = Matrix::zeros(xs.rows(), xs.cols());
    let mut fosc_vals = Vec::with_capacity(results.len());
    let mut steps_used = Vec::with_capacity(results.len());
    for (i, (x, c, k)) in results.into_iter().enumerate() {
        x_adv.row_mut(i).copy_from_slice(&x);
        fosc_vals.push(c);
        steps_used.push(k);
    }
    Ok(AdvBatch {
        x0: xs.clone(),
        x_adv,
        fosc: fosc_vals,
        steps_used,
    })
}

/// FOSC-masked PGD: each instance takes signed ascent steps on `f` until its
/// FOSC drops to `c_t` or `k_steps` is exhausted.
pub fn pgd_fosc_batch(
    ctx: &ObjectiveContext,
    params: &ScorerParams,
    aux: &AuxParams,
    xs: &Matrix,
    ys: &[u8],
    cfg: &AttackConfig,
    c_t: f64,
) -> Result<AdvBatch> {
    cfg.validate()?;
    if !(c_t >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "c_t must be >= 0, got {c_t}"
        )));
    }
    let s = PgdSettings {
        eps: cfg.eps,
        beta: cfg.beta,
        k_steps: cfg.k_steps,
        c_t,
        early_stop: true,
    };
    pgd_batch(ctx, params, aux, xs, ys, s, None)
}

/// Fixed-budget PGD: every instance takes exactly `k_steps` steps.
/// `random_start` carries the seed for a uniform start inside the ball.
pub fn pgd_fixed_batch(
    ctx: &ObjectiveContext,
    params: &ScorerParams,
    aux: &AuxParams,
    xs: &Matrix,
    ys: &[u8],
    eps: f64,
    beta: f64,
    k_steps: usize,
    random_start: Option<u64>,
) -> Result<AdvBatch> {
    let s = PgdSettings {
        eps,
        beta,
        k_steps,
        c_t: 0.0,
        early_stop: false,
    };
    pgd_batch(ctx, params, aux, xs, ys, s, random_start)
}

/// Evaluation-time attack names: `clean`, `fgsm`, `pgd-<K>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackSpec {
    Clean,
    Fgsm,
    Pgd(usize),
}

impl FromStr for AttackSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "clean" => Ok(Self::Clean),
            "fgsm" => Ok(Self::Fgsm),
            other => other
                .strip_prefix("pgd-")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(Self::Pgd)
                .ok_or_else(|| Error::UnknownAttack(t.to_string())),
        }
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Clean => write!(f, "clean"),
            Self::Fgsm => write!(f, "fgsm"),
            Self::Pgd(k) => write!(f, "pgd-{k}"),
        }
    }
}

/// Parses a comma-separated attack list.
pub fn parse_attack_list(s: &str) -> Result<Vec<AttackSpec>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Applies every attack to the whole dataset at full strength (no FOSC
/// early stop). Results come back in the order of `specs`.
pub fn attack_suite(
    ctx: &ObjectiveContext,
    params: &ScorerParams,
    aux: &AuxParams,
    dataset: &Dataset,
    specs: &[AttackSpec],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Vec<(AttackSpec, Dataset)>> {
    cfg.validate()?;
    let xs = dataset.features();
    let ys = dataset.labels();
    specs
        .iter()
        .map(|&spec| {
            let perturbed = match spec {
                AttackSpec::Clean => xs.clone(),
                AttackSpec::Fgsm => {
                    let rows: Vec<Vec<f64>> = (0..xs.rows())
                        .into_par_iter()
                        .map(|i| fgsm(ctx, params, aux, xs.row(i), ys[i], cfg.eps))
                        .collect::<Result<_>>()?;
                    Matrix::from_rows(&rows)?
                }
                AttackSpec::Pgd(k) => {
                    let start = cfg.random_start.then_some(seed ^ k as u64);
                    pgd_fixed_batch(ctx, params, aux, xs, ys, cfg.eps, cfg.beta, k, start)?.x_adv
                }
            };
            let name = format!("{}+{}", dataset.name(), spec);
            Ok((spec, dataset.with_features(perturbed, name)?))
        })
        .collect()
}
