//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use rand::seq::index::sample;
use videodpo::diffusion::{DenoiserParams, ModelDims, TensorKind};
use videodpo::rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor on the denominator so that gradients that
/// vanish on both sides compare as absolute differences.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Worst relative error between `analytic` and central finite differences
/// of `loss` over up to `per_tensor` randomly chosen entries of every
/// parameter tensor.
pub fn max_fd_error<F>(
    params: &DenoiserParams,
    analytic: &DenoiserParams,
    per_tensor: usize,
    seed: u64,
    loss: F,
) -> f64
where
    F: Fn(&DenoiserParams) -> f64,
{
    let mut rng = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for (kind, range) in params.dims().layout() {
        let len = range.len();
        let picks = sample(&mut rng, len, per_tensor.min(len));
        for local in picks {
            let idx = range.start + local;
            let mut plus = params.clone();
            plus.values_mut()[idx] += FD_STEP;
            let mut minus = params.clone();
            minus.values_mut()[idx] -= FD_STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            let err = relative_error(analytic.values()[idx], numeric);
            assert!(err.is_finite(), "{kind:?}[{local}]");
            worst = worst.max(err);
        }
    }
    worst
}

pub fn small_dims() -> ModelDims {
    ModelDims {
        data_dim: 2,
        hidden: 16,
        time_embed: 8,
        num_conditions: 3,
    }
}

pub fn tensor_kinds() -> [TensorKind; 6] {
    TensorKind::ALL
}

pub mod toy {
    use videodpo::diffusion::{
        make_schedule, train_diffusion, DenoiserParams, NoiseSchedule, TrainConfig,
    };
    use videodpo::dpo::{
        dpo_loss, evaluate_margin, train_dpo, train_sft, winner_samples, DpoConfig, PairNoise,
        TrainPair,
    };
    use videodpo::pairing::PreferencePair;
    use videodpo::reweight::{build_histogram, weight_pairs, BetaMode, ReweightConfig};
    use videodpo::rng;
    use videodpo::toy::{Mode, ToyTask};

    pub fn schedule() -> NoiseSchedule {
        make_schedule(50, 1e-4, 0.02).unwrap()
    }

    /// The toy denoiser after plain pre-training on both modes.
    pub fn pretrained(task: &ToyTask, seed: u64) -> DenoiserParams {
        let init = DenoiserParams::init(task.dims(32), rng::derive(seed, [1])).unwrap();
        let population = task.population(256, rng::derive(seed, [2]));
        let cfg = TrainConfig {
            learning_rate: 0.05,
            steps: 1500,
            batch_size: 128,
            seed: rng::derive(seed, [3]),
        };
        train_diffusion(&init, &population, &schedule(), &cfg)
            .unwrap()
            .0
    }

    #[derive(Debug, Clone, Copy)]
    pub struct Margins {
        pub pretrained: f64,
        pub dpo: f64,
        pub sft: f64,
    }

    /// Pre-trains, then runs DPO and SFT with the same step budget from the
    /// same checkpoint, evaluating on pairs disjoint from the training set.
    pub fn alignment_run(seed: u64) -> Margins {
        let task = ToyTask::default();
        let sched = schedule();
        let base = pretrained(&task, seed);
        let train = task.preference_pairs(256, rng::derive(seed, [4]));
        let eval = task.preference_pairs(128, rng::derive(seed, [5]));
        let eval_seed = rng::derive(seed, [6]);
        let dpo_cfg = DpoConfig {
            seed: rng::derive(seed, [7]),
            ..DpoConfig::default()
        };
        let (dpo, _) = train_dpo(&base, &train, &sched, &dpo_cfg).unwrap();
        let sft_cfg = TrainConfig {
            learning_rate: dpo_cfg.learning_rate,
            steps: dpo_cfg.steps,
            batch_size: dpo_cfg.batch_size,
            seed: dpo_cfg.seed,
        };
        let (sft, _) = train_sft(&base, &winner_samples(&train), &sched, &sft_cfg).unwrap();
        Margins {
            pretrained: evaluate_margin(&base, &eval, &sched, eval_seed).unwrap(),
            dpo: evaluate_margin(&dpo, &eval, &sched, eval_seed).unwrap(),
            sft: evaluate_margin(&sft, &eval, &sched, eval_seed).unwrap(),
        }
    }

    const COMMON: usize = 45;
    const RARE: usize = 5;

    fn score_pairs() -> (Vec<f64>, Vec<PreferencePair>) {
        let mut scores = Vec::new();
        let mut pairs = Vec::new();
        let mut push = |i: usize, s_w: f64, s_l: f64| {
            scores.extend([s_w, s_l]);
            pairs.push(PreferencePair {
                prompt_id: format!("p{i}"),
                winner_id: "w".into(),
                loser_id: "l".into(),
                s_w,
                s_l,
                gap: s_w - s_l,
            });
        };
        for i in 0..COMMON {
            push(i, 0.515, 0.505);
        }
        for i in 0..RARE {
            push(COMMON + i, 0.95, 0.05);
        }
        (scores, pairs)
    }

    /// Rare-over-common ratio of summed weighted gradient norms, with
    /// weights from the score histogram at the given `alpha`.
    pub fn gradient_mass_ratio(alpha: f64, seed: u64) -> f64 {
        let (scores, pairs) = score_pairs();
        let hist = build_histogram(&scores, 0.01).unwrap();
        let cfg = ReweightConfig {
            alpha,
            beta: BetaMode::Constant(1.0),
        };
        let weights = weight_pairs(&pairs, &hist, &cfg).unwrap();
        let task = ToyTask::default();
        let sched = schedule();
        let params = pretrained(&task, seed);
        let dpo_cfg = DpoConfig::default();
        let mut r = rng::seeded(rng::derive(seed, [8]));
        let mut mass = [0.0, 0.0];
        for (i, wp) in weights.iter().enumerate() {
            let condition = i % task.num_conditions();
            let pair = TrainPair {
                condition,
                x_w: task.draw(condition, Mode::A, &mut r),
                x_l: task.draw(condition, Mode::B, &mut r),
                weight: wp.weight,
            };
            let noise = PairNoise::sample(2, sched.len(), &mut r);
            let (_, grad) =
                dpo_loss(&params, Some(&params), &pair, &noise, &sched, &dpo_cfg).unwrap();
            mass[usize::from(i >= COMMON)] += wp.weight * grad.norm();
        }
        mass[1] / mass[0]
    }
}
