use std::io::{Read, Write};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{forward_noise, DenoiserParams, Gradient, ModelDims, NoiseSchedule};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// A data point and the condition it was drawn under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedSample {
    pub condition: usize,
    pub x: Vec<f64>,
}

/// Parallel lists of clean points, conditions, noise draws and timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x0: Vec<Vec<f64>>,
    pub conditions: Vec<usize>,
    pub eps: Vec<Vec<f64>>,
    pub t: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.x0.len();
        if self.conditions.len() != n || self.eps.len() != n || self.t.len() != n {
            return Err(Error::ShapeMismatch("batch lists differ in length".into()));
        }
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        Ok(())
    }

    /// Draws `size` points with replacement, uniform timesteps in `[0, T)`
    /// and standard-normal noise.
    pub fn sample(data: &[ConditionedSample], size: usize, steps: usize, rng: &mut Rng) -> Self {
        let mut batch = Batch {
            x0: Vec::with_capacity(size),
            conditions: Vec::with_capacity(size),
            eps: Vec::with_capacity(size),
            t: Vec::with_capacity(size),
        };
        for _ in 0..size {
            let item = &data[rng.random_range(0..data.len())];
            batch.t.push(rng.random_range(0..steps));
            batch.eps.push(standard_normal(item.x.len(), rng));
            batch.x0.push(item.x.clone());
            batch.conditions.push(item.condition);
        }
        batch
    }
}

pub(crate) fn standard_normal(len: usize, rng: &mut Rng) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Squared error `||eps - eps_hat(x_t, t, cond)||^2` of one noised sample.
pub fn sample_error(
    params: &DenoiserParams,
    x0: &[f64],
    cond: usize,
    t: usize,
    eps: &[f64],
    sched: &NoiseSchedule,
) -> Result<f64> {
    let x_t = forward_noise(x0, t, eps, sched)?;
    let out = params.forward(&x_t, t, cond)?;
    Ok(out.iter().zip(eps).map(|(y, e)| (y - e).powi(2)).sum())
}

/// Like [`sample_error`], also accumulating `scale * d(error)/d(params)`
/// into `grad`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_error_grad(
    params: &DenoiserParams,
    x0: &[f64],
    cond: usize,
    t: usize,
    eps: &[f64],
    sched: &NoiseSchedule,
    scale: f64,
    grad: &mut Gradient,
) -> Result<f64> {
    let x_t = forward_noise(x0, t, eps, sched)?;
    let acts = params.forward_cached(&x_t, t, cond)?;
    let resid: Vec<f64> = acts.output.iter().zip(eps).map(|(y, e)| y - e).collect();
    let d_out: Vec<f64> = resid.iter().map(|r| 2.0 * scale * r).collect();
    params.backward(&acts, &d_out, grad);
    Ok(resid.iter().map(|r| r * r).sum())
}

/// Mean denoising error over the batch and its gradient.
pub fn diffusion_loss(
    params: &DenoiserParams,
    batch: &Batch,
    sched: &NoiseSchedule,
) -> Result<(f64, Gradient)> {
    batch.validate()?;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = params.zeros_like();
    let mut total = 0.0;
    for i in 0..batch.len() {
        total += sample_error_grad(
            params,
            &batch.x0[i],
            batch.conditions[i],
            batch.t[i],
            &batch.eps[i],
            sched,
            scale,
            &mut grad,
        )?;
    }
    Ok((total * scale, grad))
}

/// Plain gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            steps: 2000,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
}

/// Trains the denoiser on `data` with the plain denoising loss. Returns the
/// final parameters and the pre-update minibatch loss of every step.
pub fn train_diffusion(
    init: &DenoiserParams,
    data: &[ConditionedSample],
    sched: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<(DenoiserParams, Vec<LossRecord>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let mut params = init.clone();
    let mut rng = rng::seeded(config.seed);
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = Batch::sample(data, config.batch_size, sched.len(), &mut rng);
        let (loss, grad) = diffusion_loss(&params, &batch, sched)?;
        params.add_scaled(-config.learning_rate, &grad);
        if !params.is_finite() {
            return Err(Error::Invariant(format!(
                "parameters diverged at step {step}"
            )));
        }
        log.push(LossRecord { step, loss });
    }
    Ok((params, log))
}

/// DDPM ancestral sampler: starts from `N(0, I)` and applies the learned
/// reverse process down to `t = 0`.
pub fn ancestral_sample(
    params: &DenoiserParams,
    cond: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let d = params.dims().data_dim;
    let mut x = standard_normal(d, rng);
    for t in (0..sched.len()).rev() {
        let eps_hat = params.forward(&x, t, cond)?;
        let (alpha, beta, abar) = (sched.alphas()[t], sched.betas()[t], sched.alpha_bars()[t]);
        let coef = beta / (1.0 - abar).sqrt();
        for (xi, e) in x.iter_mut().zip(&eps_hat) {
            *xi = (*xi - coef * e) / alpha.sqrt();
        }
        if t > 0 {
            let z = standard_normal(d, rng);
            for (xi, zi) in x.iter_mut().zip(z) {
                *xi += beta.sqrt() * zi;
            }
        }
    }
    Ok(x)
}

/// On-disk model checkpoint: a small header and the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub d: usize,
    pub h: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub time_embed: usize,
    pub num_conditions: usize,
    pub params: Vec<f64>,
}

pub fn write_checkpoint<W: Write>(
    out: &mut W,
    params: &DenoiserParams,
    sched: &NoiseSchedule,
) -> Result<()> {
    let dims = params.dims();
    let ckpt = Checkpoint {
        d: dims.data_dim,
        h: dims.hidden,
        steps: sched.len(),
        time_embed: dims.time_embed,
        num_conditions: dims.num_conditions,
        params: params.values().to_vec(),
    };
    serde_json::to_writer(&mut *out, &ckpt)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Reads a checkpoint, returning the parameters and the schedule length it
/// was trained with.
pub fn read_checkpoint<R: Read>(source: R) -> Result<(DenoiserParams, usize)> {
    let ckpt: Checkpoint = serde_json::from_reader(source)?;
    let dims = ModelDims {
        data_dim: ckpt.d,
        hidden: ckpt.h,
        time_embed: ckpt.time_embed,
        num_conditions: ckpt.num_conditions,
    };
    Ok((DenoiserParams::from_values(dims, ckpt.params)?, ckpt.steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_schedule, TensorKind};

    fn small_dims() -> ModelDims {
        ModelDims {
            data_dim: 2,
            hidden: 6,
            time_embed: 4,
            num_conditions: 2,
        }
    }

    fn random_batch(n: usize, seed: u64, steps: usize) -> Batch {
        let mut rng = rng::seeded(seed);
        let data: Vec<ConditionedSample> = (0..n)
            .map(|i| ConditionedSample {
                condition: i % 2,
                x: standard_normal(2, &mut rng),
            })
            .collect();
        Batch::sample(&data, n, steps, &mut rng)
    }

    #[test]
    fn rigged_perfect_prediction_has_zero_loss_and_gradient() {
        let sched = make_schedule(10, 1e-4, 0.02).unwrap();
        let mut params = DenoiserParams::zeros(small_dims()).unwrap();
        let eps = vec![0.7, -1.3];
        params.tensor_mut(TensorKind::B3).copy_from_slice(&eps);
        let batch = Batch {
            x0: vec![vec![1.0, 2.0], vec![-0.5, 0.1]],
            conditions: vec![0, 1],
            eps: vec![eps.clone(), eps],
            t: vec![3, 9],
        };
        let (loss, grad) = diffusion_loss(&params, &batch, &sched).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.values().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn loss_is_mean_over_batch() {
        let sched = make_schedule(10, 1e-4, 0.02).unwrap();
        let params = DenoiserParams::init(small_dims(), 1).unwrap();
        let batch = random_batch(5, 2, sched.len());
        let mut doubled = batch.clone();
        doubled.x0.extend(batch.x0.clone());
        doubled.conditions.extend(batch.conditions.clone());
        doubled.eps.extend(batch.eps.clone());
        doubled.t.extend(batch.t.clone());
        let (l1, g1) = diffusion_loss(&params, &batch, &sched).unwrap();
        let (l2, g2) = diffusion_loss(&params, &doubled, &sched).unwrap();
        assert!((l1 - l2).abs() < 1e-12 * l1.max(1.0));
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(l1 > 0.0);
    }

    #[test]
    fn batch_shape_errors() {
        let sched = make_schedule(10, 1e-4, 0.02).unwrap();
        let params = DenoiserParams::init(small_dims(), 1).unwrap();
        let mut batch = random_batch(3, 2, sched.len());
        batch.t.pop();
        assert!(diffusion_loss(&params, &batch, &sched).is_err());
        let empty = Batch {
            x0: vec![],
            conditions: vec![],
            eps: vec![],
            t: vec![],
        };
        assert!(diffusion_loss(&params, &empty, &sched).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let sched = make_schedule(50, 1e-4, 0.02).unwrap();
        let params = DenoiserParams::init(small_dims(), 9).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &params, &sched).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"d\":2,\"h\":6,\"T\":50,"), "{text}");
        let (back, steps) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(steps, 50);
        assert_eq!(back, params);
    }

    #[test]
    fn zero_steps_leave_params_unchanged() {
        let sched = make_schedule(10, 1e-4, 0.02).unwrap();
        let params = DenoiserParams::init(small_dims(), 1).unwrap();
        let data = vec![ConditionedSample {
            condition: 0,
            x: vec![0.0, 1.0],
        }];
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let (out, log) = train_diffusion(&params, &data, &sched, &cfg).unwrap();
        assert_eq!(out, params);
        assert!(log.is_empty());
        assert!(train_diffusion(&params, &[], &sched, &cfg).is_err());
    }

    #[test]
    fn sampler_output_is_finite() {
        let sched = make_schedule(20, 1e-4, 0.02).unwrap();
        let params = DenoiserParams::init(small_dims(), 1).unwrap();
        let x = ancestral_sample(&params, 1, &sched, &mut rng::seeded(0)).unwrap();
        assert_eq!(x.len(), 2);
        assert!(x.iter().all(|v| v.is_finite()));
    }
}
