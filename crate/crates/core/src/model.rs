//! Small differentiable scorers `h(x) ∈ (0, 1)`.
//!
//! A scorer is a stack of dense layers with `tanh` hidden activations and a
//! single logistic-sigmoid output unit. `[d, 1]` is the linear scorer.
//!
//! Parameters live in one flat buffer, layer-major; within a layer the
//! weight matrix comes first (row-major, `out × in`) followed by the bias.
//! That ordering is the one every gradient and update in the crate uses.

use rayon::prelude::*;

use crate::linalg::{dot_unchecked, sigmoid, Matrix};
use crate::rng::Prng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    widths: Vec<usize>,
    flat: Vec<f64>,
}

/// Gradients of `upstream · score` with respect to parameters and input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub d_params: Vec<f64>,
    pub d_input: Vec<f64>,
}

fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::InvalidArgument(
            "architecture needs an input width and at least one layer".into(),
        ));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidArgument(
            "layer widths must be positive".into(),
        ));
    }
    if *widths.last().unwrap() != 1 {
        return Err(Error::InvalidArgument(
            "architecture must end with a single output unit".into(),
        ));
    }
    Ok(())
}

fn count_params(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

/// Parses `linear` or `mlp:H1,H2,...` into layer widths for inputs of size `input_dim`.
pub fn parse_arch(spec: &str, input_dim: usize) -> Result<Vec<usize>> {
    let spec = spec.trim();
    let mut widths = vec![input_dim];
    if spec == "linear" {
    } else if let Some(hidden) = spec.strip_prefix("mlp:") {
        for tok in hidden.split(',') {
            let w: usize = tok.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("bad hidden width `{tok}` in `{spec}`"))
            })?;
            widths.push(w);
        }
    } else {
        return Err(Error::InvalidArgument(format!(
            "unknown architecture `{spec}` (expected `linear` or `mlp:H1,H2,...`)"
        )));
    }
    widths.push(1);
    validate_widths(&widths)?;
    Ok(widths)
}

impl ScorerParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        validate_widths(widths)?;
        let mut rng = Prng::new(seed);
        let mut flat = Vec::with_capacity(count_params(widths));
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                flat.push(rng.uniform(-s, s));
            }
            flat.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            widths: widths.to_vec(),
            flat,
        })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        validate_widths(widths)?;
        Ok(Self {
            widths: widths.to_vec(),
            flat: vec![0.0; count_params(widths)],
        })
    }

    pub fn from_flat(widths: &[usize], flat: Vec<f64>) -> Result<Self> {
        validate_widths(widths)?;
        let expected = count_params(widths);
        if flat.len() != expected {
            return Err(Error::Shape {
                context: "ScorerParams::from_flat",
                expected,
                got: flat.len(),
            });
        }
        Ok(Self {
            widths: widths.to_vec(),
            flat,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_params(&self) -> usize {
        self.flat.len()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "scorer input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Runs the forward pass and returns the activations of every layer
    /// (input first, output score last).
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n_layers = self.widths.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let w = &self.flat[offset..offset + fan_in * fan_out];
            let b = &self.flat[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let input = &acts[l];
            let last = l + 1 == n_layers;
            let out: Vec<f64> = (0..fan_out)
                .map(|j| {
                    let z = dot_unchecked(&w[j * fan_in..(j + 1) * fan_in], input) + b[j];
                    if last {
                        sigmoid(z)
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward(x).last().unwrap()[0])
    }

    /// Score plus exact gradients of `upstream · score`.
    pub fn score_and_backprop(&self, x: &[f64], upstream: f64) -> Result<(f64, GradBundle)> {
        self.check_input(x)?;
        let acts = self.forward(x);
        let n_layers = self.widths.len() - 1;
        let score = acts[n_layers][0];

        let mut d_params = vec![0.0; self.flat.len()];
        // dL/dz for the output unit: upstream · σ'(z) = upstream · s(1 − s)
        let mut delta = vec![upstream * score * (1.0 - score)];
        let mut offset = self.flat.len();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            offset -= fan_in * fan_out + fan_out;
            let input = &acts[l];
            {
                let (dw, db) = d_params[offset..offset + fan_in * fan_out + fan_out]
                    .split_at_mut(fan_in * fan_out);
                for j in 0..fan_out {
                    db[j] = delta[j];
                    let row = &mut dw[j * fan_in..(j + 1) * fan_in];
                    for (g, &a) in row.iter_mut().zip(input) {
                        *g = delta[j] * a;
                    }
                }
            }
            let w = &self.flat[offset..offset + fan_in * fan_out];
            let mut d_in = vec![0.0; fan_in];
            for j in 0..fan_out {
                let row = &w[j * fan_in..(j + 1) * fan_in];
                for (d, &wij) in d_in.iter_mut().zip(row) {
                    *d += delta[j] * wij;
                }
            }
            if l > 0 {
                // input of this layer is tanh output of the previous one
                for (d, &a) in d_in.iter_mut().zip(input) {
                    *d *= 1.0 - a * a;
                }
            }
            delta = d_in;
        }
        Ok((
            score,
            GradBundle {
                d_params,
                d_input: delta,
            },
        ))
    }

    pub fn backprop(&self, x: &[f64], upstream: f64) -> Result<GradBundle> {
        self.score_and_backprop(x, upstream).map(|(_, g)| g)
    }

    /// Scores every row of `xs`, in row order.
    pub fn score_rows(&self, xs: &Matrix) -> Result<Vec<f64>> {
        (0..xs.rows())
            .into_par_iter()
            .map(|i| self.score(xs.row(i)))
            .collect()
    }
}

/// Worst relative error between an analytic gradient and central differences
/// of `objective` (step `1e-5`) over every parameter and input coordinate.
///
/// Relative error is `|analytic − numeric| / max(|analytic|, |numeric|, 1e-3)`;
/// the floor keeps near-zero components from amplifying rounding noise.
pub fn finite_diff_check<F>(
    theta: &[f64],
    x: &[f64],
    analytic_theta: &[f64],
    analytic_x: &[f64],
    objective: F,
) -> f64
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    const H: f64 = 1e-5;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
    let mut worst = 0.0f64;
    let mut t = theta.to_vec();
    for i in 0..t.len() {
        let orig = t[i];
        t[i] = orig + H;
        let fp = objective(&t, x);
        t[i] = orig - H;
        let fm = objective(&t, x);
        t[i] = orig;
        worst = worst.max(rel(analytic_theta[i], (fp - fm) / (2.0 * H)));
    }
    let mut xx = x.to_vec();
    for i in 0..xx.len() {
        let orig = xx[i];
        xx[i] = orig + H;
        let fp = objective(theta, &xx);
        xx[i] = orig - H;
        let fm = objective(theta, &xx);
        xx[i] = orig;
        worst = worst.max(rel(analytic_x[i], (fp - fm) / (2.0 * H)));
    }
    worst
}
