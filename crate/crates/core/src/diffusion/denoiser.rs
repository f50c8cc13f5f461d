use std::ops::Range;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Sizes of the denoiser network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Data dimension `d`; the network predicts a `d`-vector.
    pub data_dim: usize,
    /// Width `h` of both hidden layers.
    pub hidden: usize,
    /// Length of the sinusoidal timestep embedding (even).
    pub time_embed: usize,
    /// Number of condition ids, one-hot encoded.
    pub num_conditions: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            data_dim: 2,
            hidden: 32,
            time_embed: 8,
            num_conditions: 2,
        }
    }
}

impl ModelDims {
    pub fn input_dim(&self) -> usize {
        self.data_dim + self.time_embed + self.num_conditions
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.hidden == 0 || self.num_conditions == 0 {
            return Err(Error::ShapeMismatch(format!(
                "degenerate model dims {self:?}"
            )));
        }
        if !self.time_embed.is_multiple_of(2) {
            return Err(Error::ShapeMismatch(
                "time embedding length must be even".into(),
            ));
        }
        Ok(())
    }

    /// Parameter count of the whole network.
    pub fn param_count(&self) -> usize {
        self.layout().last().map_or(0, |(_, r)| r.end)
    }

    /// Offsets of each weight and bias tensor inside the flat buffer.
    pub fn layout(&self) -> [(TensorKind, Range<usize>); 6] {
        let (i, h, d) = (self.input_dim(), self.hidden, self.data_dim);
        let sizes = [h * i, h, h * h, h, d * h, d];
        let mut start = 0;
        TensorKind::ALL.map(|kind| {
            let len = sizes[kind as usize];
            let range = start..start + len;
            start += len;
            (kind, range)
        })
    }

    fn range(&self, kind: TensorKind) -> Range<usize> {
        self.layout()[kind as usize].1.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    W1,
    B1,
    W2,
    B2,
    W3,
    B3,
}

impl TensorKind {
    pub const ALL: [TensorKind; 6] = [
        TensorKind::W1,
        TensorKind::B1,
        TensorKind::W2,
        TensorKind::B2,
        TensorKind::W3,
        TensorKind::B3,
    ];
}

/// Flat parameter buffer of the denoiser MLP:
/// `in -> tanh(h) -> tanh(h) -> d`, row-major weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    dims: ModelDims,
    values: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradient = DenoiserParams;

pub(crate) struct Activations {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub(crate) output: Vec<f64>,
}

/// Sinusoidal embedding: `sin(t f_k)` then `cos(t f_k)`, with
/// `f_k = 10000^(-k / half)`.
pub fn time_embedding(t: usize, len: usize) -> Vec<f64> {
    let half = len / 2;
    let freq = |k: usize| (-(10_000f64.ln()) * k as f64 / half as f64).exp();
    let sin = (0..half).map(|k| (t as f64 * freq(k)).sin());
    let cos = (0..half).map(|k| (t as f64 * freq(k)).cos());
    sin.chain(cos).collect()
}

fn matvec(w: &[f64], x: &[f64], b: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(
        w.chunks_exact(x.len())
            .zip(b)
            .map(|(row, bias)| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + bias),
    );
}

impl DenoiserParams {
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(DenoiserParams {
            dims,
            values: vec![0.0; dims.param_count()],
        })
    }

    /// Scaled-normal initialisation (`std = 1/sqrt(fan_in)`), zero biases.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(dims)?;
        let mut rng = rng::seeded(seed);
        let fan_in = [dims.input_dim(), dims.hidden, dims.hidden];
        for (w, fan) in [TensorKind::W1, TensorKind::W2, TensorKind::W3]
            .into_iter()
            .zip(fan_in)
        {
            let normal = Normal::new(0.0, 1.0 / (fan as f64).sqrt()).expect("positive std");
            for v in params.tensor_mut(w) {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(params)
    }

    pub fn from_values(dims: ModelDims, values: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if values.len() != dims.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                dims.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters".into()));
        }
        Ok(DenoiserParams { dims, values })
    }

    pub fn zeros_like(&self) -> Self {
        DenoiserParams {
            dims: self.dims,
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn tensor(&self, kind: TensorKind) -> &[f64] {
        &self.values[self.dims.range(kind)]
    }

    pub fn tensor_mut(&mut self, kind: TensorKind) -> &mut [f64] {
        let range = self.dims.range(kind);
        &mut self.values[range]
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &Self) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn network_input(&self, x_t: &[f64], t: usize, cond: usize) -> Result<Vec<f64>> {
        let dims = &self.dims;
        if x_t.len() != dims.data_dim {
            return Err(Error::ShapeMismatch(format!(
                "input has {} entries, model expects {}",
                x_t.len(),
                dims.data_dim
            )));
        }
        if cond >= dims.num_conditions {
            return Err(Error::ShapeMismatch(format!(
                "condition {cond} out of range for {} conditions",
                dims.num_conditions
            )));
        }
        let mut input = Vec::with_capacity(dims.input_dim());
        input.extend_from_slice(x_t);
        input.extend(time_embedding(t, dims.time_embed));
        input.extend((0..dims.num_conditions).map(|c| if c == cond { 1.0 } else { 0.0 }));
        Ok(input)
    }

    pub(crate) fn forward_cached(&self, x_t: &[f64], t: usize, cond: usize) -> Result<Activations> {
        let input = self.network_input(x_t, t, cond)?;
        let (mut h1, mut h2, mut output) = (Vec::new(), Vec::new(), Vec::new());
        matvec(
            self.tensor(TensorKind::W1),
            &input,
            self.tensor(TensorKind::B1),
            &mut h1,
        );
        h1.iter_mut().for_each(|v| *v = v.tanh());
        matvec(
            self.tensor(TensorKind::W2),
            &h1,
            self.tensor(TensorKind::B2),
            &mut h2,
        );
        h2.iter_mut().for_each(|v| *v = v.tanh());
        matvec(
            self.tensor(TensorKind::W3),
            &h2,
            self.tensor(TensorKind::B3),
            &mut output,
        );
        Ok(Activations {
            input,
            h1,
            h2,
            output,
        })
    }

    /// Predicted noise for `x_t` at timestep `t` under condition `cond`.
    pub fn forward(&self, x_t: &[f64], t: usize, cond: usize) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x_t, t, cond)?.output)
    }

    /// Accumulates `d(output . d_out) / d(params)` into `grad`.
    pub(crate) fn backward(&self, acts: &Activations, d_out: &[f64], grad: &mut Gradient) {
        let h = self.dims.hidden;
        let layout = self.dims.layout();
        let [w1, b1, w2, b2, w3, b3] = layout.map(|(_, r)| r);
        let (params, g) = (&self.values, &mut grad.values);

        // output layer
        let mut d_h2 = vec![0.0; h];
        for (o, &dy) in d_out.iter().enumerate() {
            g[b3.start + o] += dy;
            let row = w3.start + o * h;
            for k in 0..h {
                g[row + k] += dy * acts.h2[k];
                d_h2[k] += params[row + k] * dy;
            }
        }
        let d_z2: Vec<f64> = d_h2
            .iter()
            .zip(&acts.h2)
            .map(|(d, a)| d * (1.0 - a * a))
            .collect();

        // second hidden layer
        let mut d_h1 = vec![0.0; h];
        for (o, &dz) in d_z2.iter().enumerate() {
            g[b2.start + o] += dz;
            let row = w2.start + o * h;
            for k in 0..h {
                g[row + k] += dz * acts.h1[k];
                d_h1[k] += params[row + k] * dz;
            }
        }
        let d_z1: Vec<f64> = d_h1
            .iter()
            .zip(&acts.h1)
            .map(|(d, a)| d * (1.0 - a * a))
            .collect();

        // first hidden layer
        let n_in = acts.input.len();
        for (o, &dz) in d_z1.iter().enumerate() {
            g[b1.start + o] += dz;
            let row = w1.start + o * n_in;
            for (k, x) in acts.input.iter().enumerate() {
                g[row + k] += dz * x;
            }
        }
    }
}
