//! Preference optimisation of the toy denoiser.
//!
//! A pair's loss compares the denoising errors of its winner and loser
//! under a shared timestep and independent noise draws. Two forms are
//! available:
//!
//! ```text
//! difference:  L = D_w - D_l
//! sigmoid_ref: L = -log sigmoid(-beta * ((D_w - D_w_ref) - (D_l - D_l_ref)))
//! ```
//!
//! where `D` is the squared noise-prediction error and `_ref` marks a
//! frozen reference copy of the starting checkpoint. Each pair's loss is
//! multiplied by its weight before averaging over the minibatch.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::diffusion::train_internals::{sample_error_grad, standard_normal};
use crate::diffusion::{
    sample_error, train_diffusion, ConditionedSample, DenoiserParams, Gradient, LossRecord,
    NoiseSchedule, TrainConfig,
};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// A (winner, loser) pair of data points under one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub condition: usize,
    pub x_w: Vec<f64>,
    pub x_l: Vec<f64>,
    pub weight: f64,
}

impl TrainPair {
    fn validate(&self) -> Result<()> {
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pair weight must be positive, got {}",
                self.weight
            )));
        }
        if self.x_w.len() != self.x_l.len() {
            return Err(Error::ShapeMismatch(
                "winner and loser differ in dimension".into(),
            ));
        }
        if self.x_w.iter().chain(&self.x_l).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pair sample".into()));
        }
        Ok(())
    }

    pub fn swapped(&self) -> Self {
        TrainPair {
            condition: self.condition,
            x_w: self.x_l.clone(),
            x_l: self.x_w.clone(),
            weight: self.weight,
        }
    }
}

/// Winner side of each pair, as plain conditioned samples for SFT.
pub fn winner_samples(pairs: &[TrainPair]) -> Vec<ConditionedSample> {
    pairs
        .iter()
        .map(|p| ConditionedSample {
            condition: p.condition,
            x: p.x_w.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    Difference,
    #[default]
    SigmoidRef,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Difference => "difference",
            LossMode::SigmoidRef => "sigmoid",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "difference" => Ok(LossMode::Difference),
            "sigmoid" | "sigmoid_ref" => Ok(LossMode::SigmoidRef),
            _ => Err(Error::InvalidParameter(format!("unknown loss mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpoConfig {
    pub loss_mode: LossMode,
    /// Inverse temperature of the sigmoid form.
    pub dpo_beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            loss_mode: LossMode::SigmoidRef,
            dpo_beta: 2.0,
            learning_rate: 0.02,
            steps: 500,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl DpoConfig {
    fn validate(&self) -> Result<()> {
        if self.loss_mode == LossMode::SigmoidRef
            && !(self.dpo_beta.is_finite() && self.dpo_beta > 0.0)
        {
            return Err(Error::InvalidParameter(format!(
                "dpo_beta must be positive, got {}",
                self.dpo_beta
            )));
        }
        self.train_config().validate()
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            steps: self.steps,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

/// Timestep and noise draws shared by one evaluation of a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairNoise {
    pub t: usize,
    pub eps_w: Vec<f64>,
    pub eps_l: Vec<f64>,
}

impl PairNoise {
    /// Uniform timestep, independent standard-normal noise per side.
    pub fn sample(dim: usize, steps: usize, rng: &mut Rng) -> Self {
        let t = rng.random_range(0..steps);
        let eps_w = standard_normal(dim, rng);
        let eps_l = standard_normal(dim, rng);
        PairNoise { t, eps_w, eps_l }
    }
}

struct PairTerms {
    loss: f64,
    grad: Gradient,
    /// Policy denoising errors of winner and loser.
    errors: (f64, f64),
}

fn log_sigmoid(x: f64) -> f64 {
    // log(sigmoid(x)) = -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn pair_terms(
    params: &DenoiserParams,
    reference: Option<&DenoiserParams>,
    pair: &TrainPair,
    noise: &PairNoise,
    sched: &NoiseSchedule,
    config: &DpoConfig,
) -> Result<PairTerms> {
    pair.validate()?;
    let c = pair.condition;
    let mut g_w = params.zeros_like();
    let mut g_l = params.zeros_like();
    let d_w = sample_error_grad(
        params,
        &pair.x_w,
        c,
        noise.t,
        &noise.eps_w,
        sched,
        1.0,
        &mut g_w,
    )?;
    let d_l = sample_error_grad(
        params,
        &pair.x_l,
        c,
        noise.t,
        &noise.eps_l,
        sched,
        1.0,
        &mut g_l,
    )?;
    let (loss, outer) = match config.loss_mode {
        LossMode::Difference => (d_w - d_l, 1.0),
        LossMode::SigmoidRef => {
            let reference = reference.ok_or(Error::MissingReference)?;
            let r_w = sample_error(reference, &pair.x_w, c, noise.t, &noise.eps_w, sched)?;
            let r_l = sample_error(reference, &pair.x_l, c, noise.t, &noise.eps_l, sched)?;
            let z = -config.dpo_beta * ((d_w - r_w) - (d_l - r_l));
            // dL/dz = -sigmoid(-z), dz/dD_w = -beta
            (-log_sigmoid(z), config.dpo_beta * sigmoid(-z))
        }
    };
    let mut grad = g_w;
    grad.scale(outer);
    grad.add_scaled(-outer, &g_l);
    Ok(PairTerms {
        loss,
        grad,
        errors: (d_w, d_l),
    })
}

/// Unweighted preference loss of one pair and its gradient with respect to
/// `params`. `reference` is required in sigmoid mode and ignored otherwise.
pub fn dpo_loss(
    params: &DenoiserParams,
    reference: Option<&DenoiserParams>,
    pair: &TrainPair,
    noise: &PairNoise,
    sched: &NoiseSchedule,
    config: &DpoConfig,
) -> Result<(f64, Gradient)> {
    let terms = pair_terms(params, reference, pair, noise, sched, config)?;
    Ok((terms.loss, terms.grad))
}

/// [`dpo_loss`] scaled by the pair's weight.
pub fn weighted_step_loss(
    params: &DenoiserParams,
    reference: Option<&DenoiserParams>,
    pair: &TrainPair,
    noise: &PairNoise,
    sched: &NoiseSchedule,
    config: &DpoConfig,
) -> Result<(f64, Gradient)> {
    let (loss, mut grad) = dpo_loss(params, reference, pair, noise, sched, config)?;
    grad.scale(pair.weight);
    Ok((loss * pair.weight, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    /// Mean weighted pair loss of the minibatch, before the update.
    pub loss: f64,
    /// Mean `D_l - D_w` of the minibatch, before the update.
    pub margin: f64,
}

/// Preference training from `init` with plain gradient descent. In sigmoid
/// mode `init` is also the frozen reference.
pub fn train_dpo(
    init: &DenoiserParams,
    dataset: &[TrainPair],
    sched: &NoiseSchedule,
    config: &DpoConfig,
) -> Result<(DenoiserParams, Vec<StepMetrics>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("preference dataset"));
    }
    dataset.iter().try_for_each(TrainPair::validate)?;
    let reference = init.clone();
    let mut params = init.clone();
    let mut rng = rng::seeded(config.seed);
    let dim = init.dims().data_dim;
    let scale = 1.0 / config.batch_size as f64;
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut grad = params.zeros_like();
        let (mut loss, mut margin) = (0.0, 0.0);
        for _ in 0..config.batch_size {
            let pair = &dataset[rng.random_range(0..dataset.len())];
            let noise = PairNoise::sample(dim, sched.len(), &mut rng);
            let terms = pair_terms(&params, Some(&reference), pair, &noise, sched, config)?;
            loss += pair.weight * terms.loss;
            margin += terms.errors.1 - terms.errors.0;
            grad.add_scaled(pair.weight * scale, &terms.grad);
        }
        params.add_scaled(-config.learning_rate, &grad);
        if !params.is_finite() {
            return Err(Error::Invariant(format!(
                "parameters diverged at step {step}"
            )));
        }
        log.push(StepMetrics {
            step,
            loss: loss * scale,
            margin: margin * scale,
        });
    }
    Ok((params, log))
}

/// Supervised fine-tuning baseline: the plain denoising loss on winner
/// samples only.
pub fn train_sft(
    init: &DenoiserParams,
    winners: &[ConditionedSample],
    sched: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<(DenoiserParams, Vec<LossRecord>)> {
    if winners.is_empty() {
        return Err(Error::Empty("winner samples"));
    }
    train_diffusion(init, winners, sched, config)
}

/// Monte Carlo draws per pair used by [`evaluate_margin`].
pub const DEFAULT_MARGIN_DRAWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginStats {
    pub mean: f64,
    /// Standard error of the mean across pairs.
    pub std_error: f64,
    pub pairs: usize,
}

// The noise stream of a pair is keyed by its contents, so a pair evaluates
// identically wherever it appears in the set.
fn pair_seed(seed: u64, pair: &TrainPair) -> u64 {
    let words = std::iter::once(pair.condition as u64)
        .chain(pair.x_w.iter().map(|v| v.to_bits()))
        .chain(std::iter::once(u64::MAX))
        .chain(pair.x_l.iter().map(|v| v.to_bits()));
    rng::derive(seed, words)
}

/// Mean over pairs of the per-pair Monte Carlo estimate of
/// `E[D(x_l) - D(x_w)]`, with a shared `(t, eps)` draw for both sides.
pub fn margin_stats(
    params: &DenoiserParams,
    eval_pairs: &[TrainPair],
    sched: &NoiseSchedule,
    seed: u64,
    draws: usize,
) -> Result<MarginStats> {
    if eval_pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    if draws == 0 {
        return Err(Error::InvalidParameter("draws must be at least 1".into()));
    }
    let dim = params.dims().data_dim;
    let per_pair = eval_pairs
        .iter()
        .map(|pair| {
            pair.validate()?;
            let mut rng = rng::seeded(pair_seed(seed, pair));
            let mut total = 0.0;
            for _ in 0..draws {
                let t = rng.random_range(0..sched.len());
                let eps = standard_normal(dim, &mut rng);
                let d_w = sample_error(params, &pair.x_w, pair.condition, t, &eps, sched)?;
                let d_l = sample_error(params, &pair.x_l, pair.condition, t, &eps, sched)?;
                total += d_l - d_w;
            }
            Ok(total / draws as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = per_pair.len() as f64;
    let mean = per_pair.iter().sum::<f64>() / n;
    let std_error = if per_pair.len() > 1 {
        let var = per_pair.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        f64::NAN
    };
    Ok(MarginStats {
        mean,
        std_error,
        pairs: per_pair.len(),
    })
}

/// Expected loser-minus-winner denoising error; higher means a stronger
/// preference for winners.
pub fn evaluate_margin(
    params: &DenoiserParams,
    eval_pairs: &[TrainPair],
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    Ok(margin_stats(params, eval_pairs, sched, seed, DEFAULT_MARGIN_DRAWS)?.mean)
}
