//! `sweep`: trace how well weighted point sets of growing size M fit a
//! world's PMI table, against the best any d-dimensional bilinear similarity
//! can do.
//!
//! For each M the sweep runs several seeded restarts of a direct
//! shift-invariant Frobenius fit and records the best iterate's Frobenius
//! and sup errors. The summary also reports the bilinear fit floor of the
//! same table, the Frobenius error even the best rank-(d+1) shifted
//! factorization cannot go below.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;
use wpse_core::analysis::{bilinear_fit_floor, universality_sweep, SweepConfig, SweepCurve};
use wpse_core::world::pmi;

use crate::common::{fmt_f64, KernelArgs, WorldArgs, WorldProvenance};
use crate::output::RunDir;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    pub world: WorldArgs,

    #[command(flatten)]
    pub kernel: KernelArgs,

    /// Point counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub m: Vec<usize>,

    /// Point dimension.
    #[arg(long, default_value_t = 2)]
    pub d: usize,

    /// TOML file with the sweep configuration (learning_rate, steps,
    /// restarts, seed, momentum).
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Restarts per point count.
    #[arg(long)]
    pub restarts: Option<usize>,

    /// Optimization steps per restart.
    #[arg(long)]
    pub steps: Option<usize>,

    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,

    /// Momentum.
    #[arg(long)]
    pub momentum: Option<f64>,

    /// Sweep seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Run directory.
    #[arg(short, long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct MSummary {
    m: usize,
    median_sup_error: f64,
    best_sup_error: f64,
    best_frobenius_error: f64,
}

#[derive(Serialize)]
struct Summary {
    d: usize,
    per_m: Vec<MSummary>,
    /// Frobenius floor of any d-dimensional shifted bilinear fit, when the
    /// table is big enough for the ceiling to bind (needs d + 1 < min side).
    bilinear_floor: Option<f64>,
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    world: &'a WorldProvenance,
    kernel: &'a wpse_core::kernel::KernelSpec,
    m: &'a [usize],
    d: usize,
    sweep: &'a SweepConfig,
}

fn resolve_config(args: &Args) -> Result<SweepConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => SweepConfig::default(),
    };
    if let Some(restarts) = args.restarts {
        config.restarts = restarts;
    }
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }
    if let Some(momentum) = args.momentum {
        config.momentum = momentum;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate().context("invalid sweep configuration")?;
    Ok(config)
}

pub fn run(args: &Args) -> Result<bool> {
    let (world, _, provenance) = args.world.load()?;
    let kernel = args.kernel.to_spec()?;
    let config = resolve_config(args)?;

    let curve: SweepCurve = universality_sweep(&world, &kernel, &args.m, args.d, &config)
        .context("sweep failed")?;
    let target = pmi(&world)?;
    let floor = if args.d + 1 < world.n_x().min(world.n_y()) {
        Some(bilinear_fit_floor(&target, args.d)?)
    } else {
        None
    };

    let per_m: Vec<MSummary> = args
        .m
        .iter()
        .map(|&m| MSummary {
            m,
            median_sup_error: curve.median_sup_error(m).unwrap_or(f64::NAN),
            best_sup_error: curve.best_sup_error(m).unwrap_or(f64::NAN),
            best_frobenius_error: curve.best_frobenius_error(m).unwrap_or(f64::NAN),
        })
        .collect();
    let summary = Summary {
        d: args.d,
        per_m,
        bilinear_floor: floor,
    };

    let mut run_dir = RunDir::create(&args.out_dir)?;
    run_dir.write_json("summary.json", &summary)?;
    let csv_rows: Vec<Vec<String>> = curve
        .points
        .iter()
        .map(|p| {
            vec![
                p.m.to_string(),
                fmt_f64(p.frobenius_error),
                fmt_f64(p.sup_error),
                p.restart_seed.to_string(),
            ]
        })
        .collect();
    run_dir.write_csv(
        "curve.csv",
        &["M", "frobenius_error", "sup_error", "seed"],
        &csv_rows,
    )?;
    run_dir
        .finalize(
            "sweep",
            &ResolvedConfig {
                world: &provenance,
                kernel: &kernel,
                m: &args.m,
                d: args.d,
                sweep: &config,
            },
            &[config.seed],
        )
        .context("writing manifest")?;

    for entry in &summary.per_m {
        println!(
            "M={}: median sup error {}, best sup error {}, best frobenius {}",
            entry.m,
            fmt_f64(entry.median_sup_error),
            fmt_f64(entry.best_sup_error),
            fmt_f64(entry.best_frobenius_error)
        );
    }
    match floor {
        Some(f) => println!("bilinear floor (d={}): {}", args.d, fmt_f64(f)),
        None => println!(
            "bilinear floor (d={}): table too small for the ceiling to bind",
            args.d
        ),
    }
    println!("artifacts in {}", args.out_dir.display());
    Ok(true)
}
