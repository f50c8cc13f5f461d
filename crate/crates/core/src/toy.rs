//! Synthetic two-mode task for exercising preference training.
//!
//! Each condition owns two Gaussian modes, `A` and `B`. The pre-training
//! population mixes both; preference pairs take winners from `A` and losers
//! from `B`.

use rand_distr::{Distribution, Normal};

use crate::diffusion::{ConditionedSample, ModelDims};
use crate::dpo::TrainPair;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    /// `(mode A centre, mode B centre)` per condition.
    pub centres: Vec<([f64; 2], [f64; 2])>,
    pub std: f64,
}

impl Default for ToyTask {
    fn default() -> Self {
        ToyTask {
            centres: vec![([1.5, 1.5], [-1.5, -1.5]), ([-1.5, 1.5], [1.5, -1.5])],
            std: 0.3,
        }
    }
}

impl ToyTask {
    pub fn num_conditions(&self) -> usize {
        self.centres.len()
    }

    /// Model dimensions matching this task.
    pub fn dims(&self, hidden: usize) -> ModelDims {
        ModelDims {
            data_dim: 2,
            hidden,
            time_embed: 8,
            num_conditions: self.num_conditions(),
        }
    }

    pub fn draw(&self, condition: usize, mode: Mode, rng: &mut Rng) -> Vec<f64> {
        let (a, b) = self.centres[condition];
        let centre = match mode {
            Mode::A => a,
            Mode::B => b,
        };
        let noise = Normal::new(0.0, self.std).expect("positive std");
        centre.iter().map(|c| c + noise.sample(rng)).collect()
    }

    /// `per_mode` points from every (condition, mode) cell.
    pub fn population(&self, per_mode: usize, seed: u64) -> Vec<ConditionedSample> {
        let mut rng = rng::seeded(seed);
        let mut out = Vec::with_capacity(per_mode * 2 * self.num_conditions());
        for _ in 0..per_mode {
            for condition in 0..self.num_conditions() {
                for mode in [Mode::A, Mode::B] {
                    out.push(ConditionedSample {
                        condition,
                        x: self.draw(condition, mode, &mut rng),
                    });
                }
            }
        }
        out
    }

    /// `n` pairs cycling over conditions, winner from `A`, loser from `B`,
    /// unit weight.
    pub fn preference_pairs(&self, n: usize, seed: u64) -> Vec<TrainPair> {
        let mut rng = rng::seeded(seed);
        (0..n)
            .map(|i| {
                let condition = i % self.num_conditions();
                TrainPair {
                    condition,
                    x_w: self.draw(condition, Mode::A, &mut rng),
                    x_l: self.draw(condition, Mode::B, &mut rng),
                    weight: 1.0,
                }
            })
            .collect()
    }

    /// Pairs whose two sides come from the same mode mixture, so winners and
    /// losers are identically distributed.
    pub fn symmetric_pairs(&self, n: usize, seed: u64) -> Vec<TrainPair> {
        let mut rng = rng::seeded(seed);
        let mode = |rng: &mut Rng| {
            if rand::Rng::random_bool(rng, 0.5) {
                Mode::A
            } else {
                Mode::B
            }
        };
        (0..n)
            .map(|i| {
                let condition = i % self.num_conditions();
                let (mw, ml) = (mode(&mut rng), mode(&mut rng));
                TrainPair {
                    condition,
                    x_w: self.draw(condition, mw, &mut rng),
                    x_l: self.draw(condition, ml, &mut rng),
                    weight: 1.0,
                }
            })
            .collect()
    }
}
