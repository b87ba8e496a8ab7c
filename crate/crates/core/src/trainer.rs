//! Stochastic gradient descent-ascent with FOSC-scheduled adversarial batches.
//!
//! Every epoch `t` sets the FOSC threshold `c_t = max(0, c_max·(1 − t/T′))`,
//! shuffles the training set and, per mini-batch, builds adversarial examples
//! according to the training mode, evaluates the batch gradients of `f` at
//! them from one frozen snapshot, then descends on `(θ, a, b)` and ascends on
//! `α` simultaneously.

use std::fmt;
use std::str::FromStr;

use crate::attack::{pgd_fixed_batch, pgd_fosc_batch, AttackConfig};
use crate::data::Dataset;
use crate::eval::evaluation_context;
use crate::linalg::l1_norm;
use crate::model::ScorerParams;
use crate::objective::{
    auc_exact, batch_objective, closed_form_aux, grad_f, AuxParams, BatchGrad, ObjectiveContext,
};
use crate::rng::Prng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// Clean batches only.
    Natural,
    /// Fixed-budget PGD, no FOSC control.
    AtPlain,
    /// FOSC-masked PGD with the linear `c_t` schedule.
    AtFosc,
}

impl TrainMode {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Self::Natural => 0,
            Self::AtPlain => 1,
            Self::AtFosc => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Self::Natural),
            1 => Ok(Self::AtPlain),
            2 => Ok(Self::AtFosc),
            t => Err(Error::format("checkpoint", format!("unknown mode tag {t}"))),
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nt" | "natural" => Ok(Self::Natural),
            "at1" | "at_plain" => Ok(Self::AtPlain),
            "at2" | "at_fosc" => Ok(Self::AtFosc),
            other => Err(Error::InvalidArgument(format!(
                "unknown training mode `{other}` (expected nt, at1 or at2)"
            ))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Natural => "nt",
            Self::AtPlain => "at1",
            Self::AtFosc => "at2",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta_w: f64,
    pub eta_alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Both learning rates are multiplied by this every `lr_decay_every` epochs...
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    /// ...but never drop below this floor.
    pub lr_floor: f64,
    /// L2 decay on θ only.
    pub weight_decay: f64,
    /// Heavy-ball momentum on all blocks; 0 gives plain SGDA.
    pub momentum: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// PGD steps for the per-epoch attacked evaluation; `None` skips it.
    pub track_attacked: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta_w: 0.01,
            eta_alpha: 0.1,
            batch_size: 128,
            epochs: 60,
            lr_decay_factor: 0.1,
            lr_decay_every: 30,
            lr_floor: 0.0,
            weight_decay: 5e-4,
            momentum: 0.0,
            seed: 0,
            mode: TrainMode::AtFosc,
            track_attacked: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta_w", self.eta_w),
            ("eta_alpha", self.eta_alpha),
            ("lr_decay_factor", self.lr_decay_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.batch_size == 0 || self.lr_decay_every == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and lr_decay_every must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.lr_floor >= 0.0) {
            return Err(Error::InvalidArgument(
                "weight_decay and lr_floor must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// `(η_w, η_α)` in effect during epoch `t`.
    pub fn learning_rates(&self, t: usize) -> (f64, f64) {
        let scale = self.lr_decay_factor.powi((t / self.lr_decay_every) as i32);
        (
            (self.eta_w * scale).max(self.lr_floor),
            (self.eta_alpha * scale).max(self.lr_floor),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch value of `f` at the training points actually used.
    pub objective: f64,
    pub auc_clean: f64,
    pub auc_attacked: Option<f64>,
    /// Mean over batches of `‖ĝ(w)‖₂`.
    pub grad_norm_w: f64,
    /// Mean FOSC of the points the gradients were taken at.
    pub mean_fosc: f64,
    pub c_t: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: ScorerParams,
    pub aux: AuxParams,
    pub history: TrainHistory,
    pub c_max: f64,
    pub t_prime: usize,
}

/// `max(0, c_max − t·c_max/T′)`, written as `c_max·(1 − t/T′)` so that the
/// endpoints are exact.
pub fn ct_schedule(t: usize, c_max: f64, t_prime: usize) -> f64 {
    if t >= t_prime {
        return 0.0;
    }
    (c_max * (1.0 - t as f64 / t_prime as f64)).max(0.0)
}

/// One simultaneous descent-ascent update from gradients taken at a single
/// snapshot, followed by projection of `(a, b, α)` onto their domains.
pub fn sgda_step(
    params: &mut ScorerParams,
    aux: &mut AuxParams,
    grads: &BatchGrad,
    eta_w: f64,
    eta_alpha: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.d_theta.len() != params.num_params() {
        return Err(Error::Shape {
            context: "sgda_step",
            expected: params.num_params(),
            got: grads.d_theta.len(),
        });
    }
    for (theta, &g) in params.as_flat_mut().iter_mut().zip(&grads.d_theta) {
        *theta -= eta_w * (g + weight_decay * *theta);
    }
    aux.a = (aux.a - eta_w * grads.d_a).clamp(0.0, 1.0);
    aux.b = (aux.b - eta_w * grads.d_b).clamp(0.0, 1.0);
    aux.alpha = (aux.alpha + eta_alpha * grads.d_alpha).clamp(-1.0, 1.0);
    Ok(())
}

struct Velocity {
    theta: Vec<f64>,
    a: f64,
    b: f64,
    alpha: f64,
}

impl Velocity {
    fn new(n: usize) -> Self {
        Self {
            theta: vec![0.0; n],
            a: 0.0,
            b: 0.0,
            alpha: 0.0,
        }
    }

    /// Folds weight decay into the θ gradient and accumulates momentum.
    fn push(&mut self, mu: f64, wd: f64, params: &ScorerParams, g: &BatchGrad) -> BatchGrad {
        for ((v, &gi), &t) in self.theta.iter_mut().zip(&g.d_theta).zip(params.as_flat()) {
            *v = mu * *v + gi + wd * t;
        }
        self.a = mu * self.a + g.d_a;
        self.b = mu * self.b + g.d_b;
        self.alpha = mu * self.alpha + g.d_alpha;
        BatchGrad {
            value: g.value,
            d_theta: self.theta.clone(),
            d_a: self.a,
            d_b: self.b,
            d_alpha: self.alpha,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// FOSC of clean points: `ε‖∇ₓf(x⁰)‖₁`.
fn clean_fosc(
    ctx: &ObjectiveContext,
    params: &ScorerParams,
    aux: &AuxParams,
    ds: &Dataset,
    idx: &[usize],
    eps: f64,
) -> Result<Vec<f64>> {
    idx.iter()
        .map(|&i| {
            let g = grad_f(ctx, params, aux, ds.features().row(i), ds.labels()[i])?;
            Ok(eps * l1_norm(&g.d_x))
        })
        .collect()
}

pub fn train(
    train: &Dataset,
    test: Option<&Dataset>,
    widths: &[usize],
    attack: &AttackConfig,
    cfg: &TrainConfig,
    ctx: &ObjectiveContext,
) -> Result<TrainOutput> {
    train_with(train, test, widths, attack, cfg, ctx, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    train: &Dataset,
    test: Option<&Dataset>,
    widths: &[usize],
    attack: &AttackConfig,
    cfg: &TrainConfig,
    ctx: &ObjectiveContext,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutput> {
    cfg.validate()?;
    attack.validate()?;
    if train.n_pos() == 0 || train.n_neg() == 0 {
        return Err(Error::SingleClass);
    }
    if widths.first() != Some(&train.dim()) {
        return Err(Error::Shape {
            context: "architecture input width",
            expected: train.dim(),
            got: widths.first().copied().unwrap_or(0),
        });
    }
    let eval_set = test.unwrap_or(train);
    let eval_ctx = evaluation_context(eval_set)?;

    let mut params = ScorerParams::init(widths, cfg.seed)?;
    let init_scores = params.score_rows(train.features())?;
    let mut aux = closed_form_aux(&init_scores, train.labels())?;
    let t_prime = attack.t_prime.unwrap_or((cfg.epochs / 2).max(1));
    let mut rng = Prng::for_index(cfg.seed, 1);
    let mut velocity = Velocity::new(params.num_params());
    let mut history = TrainHistory::default();
    let mut c_max = attack.c_max.unwrap_or(0.0);

    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    for t in 0..cfg.epochs {
        rng.shuffle(&mut order);
        if t == 0 && cfg.mode == TrainMode::AtFosc && attack.c_max.is_none() {
            let first = &order[..cfg.batch_size.min(n)];
            c_max = median(clean_fosc(ctx, &params, &aux, train, first, attack.eps)?);
        }
        let c_t = match cfg.mode {
            TrainMode::AtFosc => ct_schedule(t, c_max, t_prime),
            _ => 0.0,
        };
        let (eta_w, eta_alpha) = cfg.learning_rates(t);

        let (mut obj_sum, mut norm_sum, mut fosc_sum) = (0.0, 0.0, 0.0);
        let mut n_batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let xs = train.features().select_rows(batch);
            let ys: Vec<u8> = batch.iter().map(|&i| train.labels()[i]).collect();
            let (points, foscs) = match cfg.mode {
                TrainMode::Natural => {
                    let f = clean_fosc(ctx, &params, &aux, train, batch, attack.eps)?;
                    (xs, f)
                }
                TrainMode::AtPlain => {
                    let adv = pgd_fixed_batch(
                        ctx,
                        &params,
                        &aux,
                        &xs,
                        &ys,
                        attack.eps,
                        attack.beta,
                        attack.k_steps,
                        None,
                    )?;
                    (adv.x_adv, adv.fosc)
                }
                TrainMode::AtFosc => {
                    let adv = pgd_fosc_batch(ctx, &params, &aux, &xs, &ys, attack, c_t)?;
                    (adv.x_adv, adv.fosc)
                }
            };
            let grads = batch_objective(ctx, &params, &aux, &points, &ys)?;
            obj_sum += grads.value;
            norm_sum += grads.norm_w();
            fosc_sum += foscs.iter().sum::<f64>();
            n_batches += 1;

            if cfg.momentum > 0.0 {
                let v = velocity.push(cfg.momentum, cfg.weight_decay, &params, &grads);
                sgda_step(&mut params, &mut aux, &v, eta_w, eta_alpha, 0.0)?;
            } else {
                sgda_step(
                    &mut params,
                    &mut aux,
                    &grads,
                    eta_w,
                    eta_alpha,
                    cfg.weight_decay,
                )?;
            }
        }

        let scores = params.score_rows(eval_set.features())?;
        let auc_clean = auc_exact(&scores, eval_set.labels())?;
        let auc_attacked = match cfg.track_attacked {
            Some(k) => {
                let adv = pgd_fixed_batch(
                    &eval_ctx,
                    &params,
                    &aux,
                    eval_set.features(),
                    eval_set.labels(),
                    attack.eps,
                    attack.beta,
                    k,
                    None,
                )?;
                Some(auc_exact(
                    &params.score_rows(&adv.x_adv)?,
                    eval_set.labels(),
                )?)
            }
            None => None,
        };
        let record = EpochRecord {
            epoch: t,
            objective: obj_sum / n_batches as f64,
            auc_clean,
            auc_attacked,
            grad_norm_w: norm_sum / n_batches as f64,
            mean_fosc: fosc_sum / n as f64,
            c_t,
        };
        on_epoch(&record);
        history.records.push(record);
    }

    Ok(TrainOutput {
        params,
        aux,
        history,
        c_max,
        t_prime,
    })
}

/// Mean `‖ĝ(w)‖₂` over the first and the last tenth of the epochs.
pub fn stationarity_probe(history: &TrainHistory) -> Result<(f64, f64)> {
    const MIN_EPOCHS: usize = 20;
    let n = history.records.len();
    if n < MIN_EPOCHS {
        return Err(Error::HistoryTooShort {
            have: n,
            need: MIN_EPOCHS,
        });
    }
    let m = n / 10;
    let mean = |recs: &[EpochRecord]| recs.iter().map(|r| r.grad_norm_w).sum::<f64>() / m as f64;
    Ok((mean(&history.records[..m]), mean(&history.records[n - m..])))
}
