//! `verify-bounds`: numerical verification suites for the contrastive loss
//! and the mean-classifier excess-risk chain.
//!
//! Four suites run against seeded random worlds (or one fixed world file):
//!
//! * `optimum-equality`: the population loss of the PMI table equals the
//!   negated mutual information.
//! * `optimum-lower-bound`: no similarity table scores below that optimum.
//! * `mean-classifier-bound`: the excess risk of the PMI mean classifier is
//!   nonnegative and within the expected-KL bound; on floor-zero worlds with
//!   their generating partition it vanishes outright.
//! * `perturbation-stability`: perturbing the table by `delta` in sup norm
//!   moves the classifier's supervised loss by at most `2 delta`.
//!
//! Each trial becomes one CSV row; the command exits nonzero if any trial
//! fails its bound.

use std::path::PathBuf;

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use wpse_core::classifier::{excess_risk, mean_classifier, sup_loss};
use wpse_core::infonce::population_loss;
use wpse_core::world::{
    mutual_information, pmi, random_world_with, DiscreteWorld, GeneratorConfig,
    SimilarityTable, SubsetPartition,
};

use crate::common::{fmt_f64, load_world_file};
use crate::output::RunDir;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Fixed world file; when given, every trial reuses this world and only
    /// tables, partitions, and perturbations vary.
    #[arg(long)]
    pub world: Option<PathBuf>,

    /// Trials in the equality and classifier-bound suites.
    #[arg(long, default_value_t = 100)]
    pub worlds: usize,

    /// Trials in the lower-bound suite.
    #[arg(long, default_value_t = 1000)]
    pub pairs: usize,

    /// Trials in the perturbation suite (split across the radii).
    #[arg(long, default_value_t = 1000)]
    pub perturbations: usize,

    /// Perturbation radii.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 2.0])]
    pub perturb: Vec<f64>,

    /// Largest world side length sampled in generated mode.
    #[arg(long, default_value_t = 12, value_parser = clap::value_parser!(u64).range(4..=64))]
    pub max_side: u64,

    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Run directory for the CSV and JSON reports.
    #[arg(short, long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
struct CheckRow {
    suite: &'static str,
    trial: usize,
    observed: f64,
    bound: f64,
    /// Distance to the bound; nonnegative exactly when the trial passes.
    margin: f64,
    pass: bool,
}

#[derive(Debug, Clone, Serialize)]
struct SuiteSummary {
    suite: &'static str,
    trials: usize,
    failures: usize,
    worst_margin: f64,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct Report {
    suites: Vec<SuiteSummary>,
    all_pass: bool,
}

/// Serializable copy of the CLI arguments for the manifest.
#[derive(Debug, Serialize)]
struct ResolvedConfig {
    world: Option<String>,
    worlds: usize,
    pairs: usize,
    perturbations: usize,
    perturb: Vec<f64>,
    max_side: u64,
    seed: u64,
}

fn summarize(suite: &'static str, rows: &[CheckRow]) -> SuiteSummary {
    let failures = rows.iter().filter(|r| !r.pass).count();
    let worst_margin = rows
        .iter()
        .map(|r| r.margin)
        .fold(f64::INFINITY, f64::min);
    SuiteSummary {
        suite,
        trials: rows.len(),
        failures,
        worst_margin,
        pass: failures == 0,
    }
}

/// Draws a fresh world of bounded size, or clones the fixed one.
fn trial_world(
    fixed: Option<&(DiscreteWorld, SubsetPartition)>,
    rng: &mut ChaCha8Rng,
    max_side: usize,
) -> Result<(DiscreteWorld, SubsetPartition)> {
    if let Some((world, partition)) = fixed {
        return Ok((world.clone(), partition.clone()));
    }
    let k = rng.random_range(2..=4usize);
    let n_y = rng.random_range(k..=max_side.max(k));
    let n_x = rng.random_range(2..=max_side);
    let mut cfg = GeneratorConfig::new(n_x, n_y, k, rng.random());
    cfg.concentration = rng.random_range(0.3..3.0);
    random_world_with(&cfg).map_err(Into::into)
}

pub fn run(args: &Args) -> Result<bool> {
    let fixed = match &args.world {
        Some(path) => Some(load_world_file(path)?),
        None => None,
    };
    let max_side = args.max_side as usize;

    // Independent per-trial seeds drawn sequentially so the parallel suites
    // stay deterministic regardless of scheduling.
    let mut master = ChaCha8Rng::seed_from_u64(args.seed);
    let seeds_equality: Vec<u64> = (0..args.worlds).map(|_| master.random()).collect();
    let seeds_lower: Vec<u64> = (0..args.pairs).map(|_| master.random()).collect();
    let seeds_classifier: Vec<u64> = (0..args.worlds).map(|_| master.random()).collect();
    let n_eps_zero = (args.worlds / 10).max(1);
    let seeds_eps_zero: Vec<u64> = (0..n_eps_zero).map(|_| master.random()).collect();
    let seeds_perturb: Vec<u64> = (0..args.perturbations).map(|_| master.random()).collect();

    let equality: Vec<CheckRow> = seeds_equality
        .par_iter()
        .enumerate()
        .map(|(trial, &seed)| -> Result<CheckRow> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (world, _) = trial_world(fixed.as_ref(), &mut rng, max_side)?;
            let g = pmi(&world)?;
            let observed = (population_loss(&g, &world)? + mutual_information(&world)?).abs();
            let bound = 1e-10;
            Ok(CheckRow {
                suite: "optimum-equality",
                trial,
                observed,
                bound,
                margin: bound - observed,
                pass: observed <= bound,
            })
        })
        .collect::<Result<_>>()?;

    let lower: Vec<CheckRow> = seeds_lower
        .par_iter()
        .enumerate()
        .map(|(trial, &seed)| -> Result<CheckRow> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (world, _) = trial_world(fixed.as_ref(), &mut rng, max_side)?;
            let scale = rng.random_range(0.5..4.0);
            let g = SimilarityTable::random(world.n_x(), world.n_y(), scale, rng.random());
            let observed = population_loss(&g, &world)? + mutual_information(&world)?;
            let bound = -1e-12;
            Ok(CheckRow {
                suite: "optimum-lower-bound",
                trial,
                observed,
                bound,
                margin: observed - bound,
                pass: observed >= bound,
            })
        })
        .collect::<Result<_>>()?;

    let classifier: Vec<CheckRow> = seeds_classifier
        .par_iter()
        .enumerate()
        .map(|(trial, &seed)| -> Result<CheckRow> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (world, generating) = trial_world(fixed.as_ref(), &mut rng, max_side)?;
            // Alternate between the generating partition and a fresh random
            // one; the bound must hold for either.
            let partition = if trial % 2 == 0 {
                generating
            } else {
                let frac = rng.random_range(0.0..0.4);
                SubsetPartition::random(world.n_y(), world.n_classes(), frac, &mut rng)?
            };
            let report = excess_risk(&pmi(&world)?, &world, &partition)?;
            let bound = report.rhs_expected + 1e-10;
            let margin = (bound - report.lhs).min(report.lhs + 1e-12);
            Ok(CheckRow {
                suite: "mean-classifier-bound",
                trial,
                observed: report.lhs,
                bound,
                margin,
                pass: margin >= 0.0,
            })
        })
        .collect::<Result<_>>()?;

    let eps_zero: Vec<CheckRow> = seeds_eps_zero
        .par_iter()
        .enumerate()
        .map(|(trial, &seed)| -> Result<CheckRow> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(2..=4usize);
            let n_y = rng.random_range(k..=max_side.max(k));
            let n_x = rng.random_range(2..=max_side);
            let mut cfg = GeneratorConfig::new(n_x, n_y, k, rng.random());
            cfg.floor = 0.0;
            let (world, partition) = random_world_with(&cfg)?;
            let report = excess_risk(&pmi(&world)?, &world, &partition)?;
            let bound = 1e-10;
            Ok(CheckRow {
                suite: "mean-classifier-eps-zero",
                trial,
                observed: report.lhs,
                bound,
                margin: bound - report.lhs,
                pass: report.lhs <= bound,
            })
        })
        .collect::<Result<_>>()?;

    let deltas = &args.perturb;
    let perturbation: Vec<CheckRow> = seeds_perturb
        .par_iter()
        .enumerate()
        .map(|(trial, &seed)| -> Result<CheckRow> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (world, partition) = trial_world(fixed.as_ref(), &mut rng, max_side)?;
            let delta = deltas[trial % deltas.len()];
            let g_star = pmi(&world)?;
            let g = g_star.perturbed(delta, rng.random())?;
            let loss_star = sup_loss(&mean_classifier(&g_star, &world, &partition)?, &world)?;
            let loss = sup_loss(&mean_classifier(&g, &world, &partition)?, &world)?;
            let observed = (loss - loss_star).abs();
            let bound = 2.0 * delta + 1e-10;
            Ok(CheckRow {
                suite: "perturbation-stability",
                trial,
                observed,
                bound,
                margin: bound - observed,
                pass: observed <= bound,
            })
        })
        .collect::<Result<_>>()?;

    // Aggregation is single-threaded and ordered by trial index.
    let mut suites = Vec::new();
    let mut rows = Vec::new();
    for set in [equality, lower, classifier, eps_zero, perturbation] {
        let name = set[0].suite;
        suites.push(summarize(name, &set));
        rows.extend(set);
    }
    let all_pass = suites.iter().all(|s| s.pass);
    let report = Report {
        suites: suites.clone(),
        all_pass,
    };

    let mut run_dir = RunDir::create(&args.out_dir)?;
    run_dir.write_json("bounds.json", &report)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.suite.to_string(),
                r.trial.to_string(),
                fmt_f64(r.observed),
                fmt_f64(r.bound),
                fmt_f64(r.margin),
                r.pass.to_string(),
            ]
        })
        .collect();
    run_dir.write_csv(
        "bounds.csv",
        &["suite", "trial", "observed", "bound", "margin", "pass"],
        &csv_rows,
    )?;
    let config = ResolvedConfig {
        world: args.world.as_ref().map(|p| p.display().to_string()),
        worlds: args.worlds,
        pairs: args.pairs,
        perturbations: args.perturbations,
        perturb: args.perturb.clone(),
        max_side: args.max_side,
        seed: args.seed,
    };
    run_dir
        .finalize("verify-bounds", &config, &[args.seed])
        .context("writing manifest")?;

    for suite in &suites {
        println!(
            "{} {}: {} trials, {} failures, worst margin {}",
            if suite.pass { "PASS" } else { "FAIL" },
            suite.suite,
            suite.trials,
            suite.failures,
            fmt_f64(suite.worst_margin)
        );
    }
    if !all_pass {
        eprintln!("verify-bounds: one or more suites failed");
    }
    Ok(all_pass)
}
