//! `rank`: verify the bilinear rank ceiling on random embedding triples.
//!
//! Any d-dimensional bilinear similarity with a free constant shift fills an
//! `N x N` table `A^T B - c J` of rank at most `d + 1`, so its `(d+2)`-th
//! singular value must vanish. Each trial draws Gaussian `A`, `B` and a
//! uniform shift `c` and checks that singular value against `1e-8` times the
//! largest one.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use wpse_core::analysis::{verify_rank_bound, RankReport, RANK_TOLERANCE};

use crate::common::fmt_f64;
use crate::output::RunDir;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Embedding dimension.
    #[arg(long, default_value_t = 2)]
    pub d: usize,

    /// Side length N of the table (needs N > d + 1).
    #[arg(long, default_value_t = 8)]
    pub n: usize,

    /// Number of random triples.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,

    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Run directory.
    #[arg(short, long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct TrialRow {
    trial: usize,
    shift: f64,
    sigma_top: f64,
    sigma_ceiling: f64,
    ratio: f64,
    pass: bool,
}

#[derive(Serialize)]
struct Summary {
    d: usize,
    n: usize,
    trials: usize,
    failures: usize,
    worst_ratio: f64,
    tolerance: f64,
    pass: bool,
    /// Full singular-value report of the first trial, as a worked example.
    example: RankReport,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

pub fn run(args: &Args) -> Result<bool> {
    if args.n <= args.d + 1 {
        bail!(
            "need n > d + 1 so the ceiling is informative; got n = {}, d = {}",
            args.n,
            args.d
        );
    }
    if args.trials == 0 {
        bail!("need at least one trial");
    }

    let mut master = ChaCha8Rng::seed_from_u64(args.seed);
    let seeds: Vec<u64> = (0..args.trials).map(|_| master.random()).collect();

    let results: Vec<(TrialRow, RankReport)> = seeds
        .par_iter()
        .enumerate()
        .map(|(trial, &seed)| -> Result<(TrialRow, RankReport)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, args.d, args.n);
            let b = random_matrix(&mut rng, args.d, args.n);
            let shift = rng.random_range(-3.0..3.0);
            let report = verify_rank_bound(a.view(), b.view(), shift)?;
            let sigma_top = report.singular_values[0];
            let sigma_ceiling = report.singular_values[args.d + 1];
            let ratio = if sigma_top > 0.0 {
                sigma_ceiling / sigma_top
            } else {
                0.0
            };
            let row = TrialRow {
                trial,
                shift,
                sigma_top,
                sigma_ceiling,
                ratio,
                pass: report.rank_bound_ok,
            };
            Ok((row, report))
        })
        .collect::<Result<_>>()?;

    let failures = results.iter().filter(|(row, _)| !row.pass).count();
    let worst_ratio = results
        .iter()
        .map(|(row, _)| row.ratio)
        .fold(0.0f64, f64::max);
    let summary = Summary {
        d: args.d,
        n: args.n,
        trials: args.trials,
        failures,
        worst_ratio,
        tolerance: RANK_TOLERANCE,
        pass: failures == 0,
        example: results[0].1.clone(),
    };

    let mut run_dir = RunDir::create(&args.out_dir)?;
    run_dir.write_json("rank.json", &summary)?;
    let csv_rows: Vec<Vec<String>> = results
        .iter()
        .map(|(row, _)| {
            vec![
                row.trial.to_string(),
                fmt_f64(row.shift),
                fmt_f64(row.sigma_top),
                fmt_f64(row.sigma_ceiling),
                fmt_f64(row.ratio),
                row.pass.to_string(),
            ]
        })
        .collect();
    run_dir.write_csv(
        "rank.csv",
        &["trial", "shift", "sigma_top", "sigma_ceiling", "ratio", "pass"],
        &csv_rows,
    )?;
    #[derive(Serialize)]
    struct ResolvedConfig {
        d: usize,
        n: usize,
        trials: usize,
        seed: u64,
    }
    run_dir
        .finalize(
            "rank",
            &ResolvedConfig {
                d: args.d,
                n: args.n,
                trials: args.trials,
                seed: args.seed,
            },
            &[args.seed],
        )
        .context("writing manifest")?;

    println!(
        "{} rank ceiling d+1={} on {}x{} tables: {} trials, {} failures, worst ratio {}",
        if summary.pass { "PASS" } else { "FAIL" },
        args.d + 1,
        args.n,
        args.n,
        args.trials,
        failures,
        fmt_f64(worst_ratio)
    );
    Ok(summary.pass)
}
