use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{Cli, Command, ModeArg, PairingArgs, PipelineArgs, Switch, TrainToyArgs, WeightArgs};
use crate::diffusion::{
    make_schedule, train_diffusion, write_checkpoint, DenoiserParams, TrainConfig,
};
use crate::dpo::{evaluate_margin, train_dpo, DpoConfig, LossMode, TrainPair};
use crate::io::fmt_sig17;
use crate::pairing::{
    filter_pairs, parse_pair_file, select_pairs, write_pair_file, PreferencePair,
};
use crate::reweight::{
    build_histogram, parse_weighted_pair_file, weight_pairs, write_weighted_pair_file,
    ReweightConfig, ScoreHistogram, WeightedPair,
};
use crate::rng;
use crate::scores::{
    correlation_matrix, gap_vs_n, group_by_prompt, omniscore_groups, parse_score_file,
    parse_scored_file, score_records, write_correlation_csv, write_scored_file, GapSampling,
    OmniScoreConfig, ScoredSample,
};
use crate::toy::{Mode, ToyTask};
use crate::{Error, Result};

const DIFFUSION_STEPS: usize = 50;
const BETA_START: f64 = 1e-4;
const BETA_END: f64 = 0.02;
const PRETRAIN_LR: f64 = 0.05;
const PRETRAIN_BATCH: usize = 128;
const POPULATION_PER_MODE: usize = 256;
const SYNTHETIC_PAIRS: usize = 256;
const EVAL_PAIRS: usize = 128;

/// An error tagged with the pipeline stage that produced it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

type StageResult<T> = std::result::Result<T, StageError>;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut out = BufWriter::new(file);
    body(&mut out)?;
    out.flush()?;
    Ok(())
}

fn load_config(cli: &Cli) -> StageResult<OmniScoreConfig> {
    match &cli.config {
        None => Ok(OmniScoreConfig::default()),
        Some(path) => fs::read_to_string(path)
            .map_err(Error::from)
            .and_then(|text| OmniScoreConfig::from_config_str(&text))
            .stage("config"),
    }
}

/// Executes a parsed command line.
pub fn run(cli: &Cli) -> StageResult<()> {
    match &cli.command {
        Command::Score { input, output } => {
            let config = load_config(cli)?;
            let samples = score_stage(input, &config)?;
            write_file(output, |out| write_scored_file(out, &samples)).stage("score")?;
            if !cli.quiet {
                println!("scored {} samples", samples.len());
            }
            Ok(())
        }
        Command::Pair {
            input,
            output,
            pairing,
        } => {
            let samples = parse_scored_file(open(input).stage("pair")?).stage("pair")?;
            let pairs = pair_stage(&samples, pairing, None)?;
            write_file(output, |out| write_pair_file(out, &pairs)).stage("pair")?;
            if !cli.quiet {
                println!("wrote {} pairs", pairs.len());
            }
            Ok(())
        }
        Command::Reweight {
            scored,
            pairs,
            output,
            weights,
            histogram_out,
        } => {
            let samples = parse_scored_file(open(scored).stage("reweight")?).stage("reweight")?;
            let pairs = parse_pair_file(open(pairs).stage("reweight")?).stage("reweight")?;
            let (hist, weighted) = reweight_stage(&samples, &pairs, weights)?;
            write_file(output, |out| write_weighted_pair_file(out, &weighted)).stage("reweight")?;
            if let Some(path) = histogram_out {
                write_file(path, |out| hist.write_csv(out)).stage("reweight")?;
            }
            if !cli.quiet {
                println!("weighted {} pairs", weighted.len());
            }
            Ok(())
        }
        Command::Pipeline(args) => pipeline(cli, args),
        Command::Analyze {
            input,
            out_dir,
            strategy,
            bin_width,
            draws,
        } => {
            let config = load_config(cli)?;
            let samples = score_stage(input, &config)?;
            analyze(&samples, out_dir, *strategy, *bin_width, *draws, cli.seed).stage("analyze")?;
            if !cli.quiet {
                println!(
                    "wrote analysis for {} samples to {}",
                    samples.len(),
                    out_dir.display()
                );
            }
            Ok(())
        }
        Command::TrainToy(args) => train_toy(cli, args),
    }
}

fn score_stage(input: &Path, config: &OmniScoreConfig) -> StageResult<Vec<ScoredSample>> {
    let records = parse_score_file(open(input).stage("score")?).stage("score")?;
    if records.is_empty() {
        return Err(Error::Empty("score file has no records")).stage("score");
    }
    score_records(&records, config).stage("score")
}

fn pair_stage(
    samples: &[ScoredSample],
    args: &PairingArgs,
    samples_per_prompt: Option<usize>,
) -> StageResult<Vec<PreferencePair>> {
    let run = || -> Result<Vec<PreferencePair>> {
        if !(0.0..1.0).contains(&args.drop_ratio) {
            return Err(Error::InvalidParameter(format!(
                "drop ratio must be in [0, 1), got {}",
                args.drop_ratio
            )));
        }
        let required = match samples_per_prompt {
            Some(n) if n < 2 => {
                return Err(Error::InvalidParameter(format!(
                    "samples per prompt must be at least 2, got {n}"
                )))
            }
            Some(n) => n,
            None => 2,
        };
        let mut pairs = Vec::new();
        for (prompt_id, group) in group_by_prompt(samples) {
            let mismatched = match samples_per_prompt {
                Some(n) => group.len() != n,
                None => group.len() < required,
            };
            if mismatched {
                return Err(Error::GroupTooSmall {
                    prompt_id: prompt_id.to_string(),
                    size: group.len(),
                    requested: required,
                });
            }
            pairs.extend(select_pairs(&group, args.strategy)?);
        }
        filter_pairs(pairs, args.drop_ratio)
    };
    run().stage("pair")
}

fn reweight_stage(
    samples: &[ScoredSample],
    pairs: &[PreferencePair],
    args: &WeightArgs,
) -> StageResult<(ScoreHistogram, Vec<WeightedPair>)> {
    let run = || -> Result<_> {
        let config = ReweightConfig {
            alpha: args.alpha,
            beta: args.beta,
        };
        config.validate()?;
        let scores: Vec<f64> = samples.iter().map(|s| s.omniscore).collect();
        let hist = build_histogram(&scores, args.bin_width)?;
        let weighted = weight_pairs(pairs, &hist, &config)?;
        Ok((hist, weighted))
    };
    run().stage("reweight")
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summary(samples: &[ScoredSample], pairs: &[WeightedPair]) -> String {
    let prompts = group_by_prompt(samples).len();
    let mut s = format!(
        "prompts: {prompts}\nsamples: {}\npairs: {}\n",
        samples.len(),
        pairs.len()
    );
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.weight).collect();
    weights.sort_by(f64::total_cmp);
    if !weights.is_empty() {
        for (name, q) in [
            ("min", 0.0),
            ("p25", 0.25),
            ("median", 0.5),
            ("p75", 0.75),
            ("max", 1.0),
        ] {
            s.push_str(&format!(
                "weight_{name}: {}\n",
                fmt_sig17(quantile(&weights, q))
            ));
        }
    }
    s
}

fn pipeline(cli: &Cli, args: &PipelineArgs) -> StageResult<()> {
    let config = load_config(cli)?;
    let samples = score_stage(&args.input, &config)?;
    if let Some(path) = &args.scored_out {
        write_file(path, |out| write_scored_file(out, &samples)).stage("score")?;
    }
    let pairs = pair_stage(&samples, &args.pairing, args.samples_per_prompt)?;
    if let Some(path) = &args.pairs_out {
        write_file(path, |out| write_pair_file(out, &pairs)).stage("pair")?;
    }
    let (hist, weighted) = reweight_stage(&samples, &pairs, &args.weights)?;
    if let Some(path) = &args.histogram_out {
        write_file(path, |out| hist.write_csv(out)).stage("reweight")?;
    }
    write_file(&args.output, |out| write_weighted_pair_file(out, &weighted)).stage("reweight")?;
    let report = summary(&samples, &weighted);
    if let Some(path) = &args.summary_out {
        write_file(path, |out| Ok(out.write_all(report.as_bytes())?)).stage("summary")?;
    }
    if !cli.quiet {
        print!("{report}");
    }
    Ok(())
}

fn write_histogram_csv(path: &Path, values: &[f64], bin_width: f64) -> Result<()> {
    if values.is_empty() {
        return write_file(path, |out| {
            Ok(writeln!(out, "bin_lower,bin_upper,frequency")?)
        });
    }
    let hist = build_histogram(values, bin_width)?;
    write_file(path, |out| hist.write_csv(out))
}

fn analyze(
    samples: &[ScoredSample],
    out_dir: &Path,
    strategy: crate::pairing::PairingStrategy,
    bin_width: f64,
    draws: usize,
    seed: u64,
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let groups = omniscore_groups(samples);
    let min_size = groups.values().map(Vec::len).min().unwrap_or(0);
    let n_values: Vec<usize> = (1..=min_size).collect();
    let rows = gap_vs_n(&groups, &n_values, GapSampling::Nested { draws, seed })?;
    write_file(&out_dir.join("gap_vs_n.csv"), |out| {
        writeln!(out, "n,mean_gap")?;
        for row in &rows {
            writeln!(out, "{},{}", row.n, fmt_sig17(row.mean_gap))?;
        }
        Ok(())
    })?;
    let scores: Vec<f64> = samples.iter().map(|s| s.omniscore).collect();
    write_histogram_csv(&out_dir.join("omniscore_histogram.csv"), &scores, bin_width)?;
    let mut gaps = Vec::new();
    for group in group_by_prompt(samples).values() {
        gaps.extend(
            select_pairs(group, strategy)?
                .iter()
                .map(|p| p.gap.min(1.0)),
        );
    }
    write_histogram_csv(&out_dir.join("pair_gap_histogram.csv"), &gaps, bin_width)?;
    if samples.len() >= 2 {
        let matrix = correlation_matrix(samples)?;
        write_file(&out_dir.join("correlation.csv"), |out| {
            write_correlation_csv(out, &matrix)
        })?;
    }
    Ok(())
}

/// Places a scored pair in the toy task: the prompt selects the condition,
/// the winner is drawn from the preferred mode and the loser from the other.
fn toy_pairs(
    task: &ToyTask,
    weighted: &[WeightedPair],
    use_weights: bool,
    seed: u64,
) -> Vec<TrainPair> {
    weighted
        .iter()
        .enumerate()
        .map(|(i, wp)| {
            let condition =
                (rng::hash_str(&wp.pair.prompt_id) % task.num_conditions() as u64) as usize;
            let mut r = rng::seeded(rng::derive(seed, [i as u64]));
            TrainPair {
                condition,
                x_w: task.draw(condition, Mode::A, &mut r),
                x_l: task.draw(condition, Mode::B, &mut r),
                weight: if use_weights { wp.weight } else { 1.0 },
            }
        })
        .collect()
}

fn train_toy(cli: &Cli, args: &TrainToyArgs) -> StageResult<()> {
    let task = ToyTask::default();
    let seed = cli.seed;
    let sched = make_schedule(DIFFUSION_STEPS, BETA_START, BETA_END).stage("train-toy")?;
    let dims = task.dims(args.hidden);
    let init = DenoiserParams::init(dims, rng::derive(seed, [1])).stage("train-toy")?;
    let population = task.population(POPULATION_PER_MODE, rng::derive(seed, [2]));
    let pretrain = TrainConfig {
        learning_rate: PRETRAIN_LR,
        steps: args.pretrain_steps,
        batch_size: PRETRAIN_BATCH,
        seed: rng::derive(seed, [3]),
    };
    let (pretrained, _) =
        train_diffusion(&init, &population, &sched, &pretrain).stage("pretrain")?;

    let dataset = match &args.pairs {
        Some(path) => {
            let weighted =
                parse_weighted_pair_file(open(path).stage("train-toy")?).stage("train-toy")?;
            toy_pairs(
                &task,
                &weighted,
                args.alpha_weights == Switch::On,
                rng::derive(seed, [4]),
            )
        }
        None => task.preference_pairs(SYNTHETIC_PAIRS, rng::derive(seed, [4])),
    };
    let eval = task.preference_pairs(EVAL_PAIRS, rng::derive(seed, [5]));
    let eval_seed = rng::derive(seed, [6]);
    let before = evaluate_margin(&pretrained, &eval, &sched, eval_seed).stage("evaluate")?;

    let config = DpoConfig {
        loss_mode: match args.mode {
            ModeArg::Difference => LossMode::Difference,
            ModeArg::Sigmoid => LossMode::SigmoidRef,
        },
        dpo_beta: args.dpo_beta,
        learning_rate: args.lr,
        steps: args.steps,
        batch_size: args.batch_size,
        seed: rng::derive(seed, [7]),
    };
    let (trained, log) = train_dpo(&pretrained, &dataset, &sched, &config).stage("dpo")?;
    let after = evaluate_margin(&trained, &eval, &sched, eval_seed).stage("evaluate")?;

    if let Some(path) = &args.checkpoint_out {
        write_file(path, |out| write_checkpoint(out, &trained, &sched)).stage("train-toy")?;
    }
    if let Some(path) = &args.metrics_out {
        write_file(path, |out| {
            writeln!(out, "step,loss,margin")?;
            for m in &log {
                writeln!(
                    out,
                    "{},{},{}",
                    m.step,
                    fmt_sig17(m.loss),
                    fmt_sig17(m.margin)
                )?;
            }
            Ok(())
        })
        .stage("train-toy")?;
    }
    if !cli.quiet {
        println!("pairs: {}", dataset.len());
        println!("margin_before: {}", fmt_sig17(before));
        println!("margin_after: {}", fmt_sig17(after));
    }
    Ok(())
}
