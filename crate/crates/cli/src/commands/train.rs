//! `train`: fit a weighted point set embedding model to a world's
//! contrastive loss and write the model, report, and loss trace.
//!
//! Hyperparameters resolve in three layers: built-in defaults (or a
//! `--baseline` / `--wpse` preset), then an optional TOML config file, then
//! individual flags. The run directory receives `model.json`,
//! `report.json`, `trace.csv`, `world.json` (the exact world trained on),
//! and the manifest.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use wpse_core::kernel::KernelSpec;
use wpse_core::rff::EVAL_FEATURES_PRESET;
use wpse_core::trainer::{fit, SimilarityMode, TrainConfig, DEFAULT_WEIGHT_CLIP};
use wpse_core::world::WorldFile;

use crate::common::{build_kernel, fmt_f64, WorldArgs, WorldProvenance};
use crate::output::RunDir;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    pub world: WorldArgs,

    /// TOML file with the full training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Preset: one point per set, linear kernel, exact similarity.
    #[arg(long, conflicts_with = "wpse")]
    pub baseline: bool,

    /// Preset: four points per set, linear+gaussian combination kernel.
    #[arg(long)]
    pub wpse: bool,

    /// Learning rate override.
    #[arg(long)]
    pub lr: Option<f64>,

    /// Step count override.
    #[arg(long)]
    pub steps: Option<usize>,

    /// Training seed override.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Points per instance set.
    #[arg(long)]
    pub mx: Option<usize>,

    /// Points per caption set.
    #[arg(long)]
    pub my: Option<usize>,

    /// Embedding dimension.
    #[arg(long)]
    pub d: Option<usize>,

    /// Kernel override: linear, gaussian, imq, or combo. Rebuilds the whole
    /// kernel from --sigma/--imq-c/--nonlinear/--alpha1/--alpha2.
    #[arg(long)]
    pub kernel: Option<String>,

    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,

    #[arg(long = "imq-c", default_value_t = 1.0)]
    pub imq_c: f64,

    #[arg(long, default_value = "gaussian")]
    pub nonlinear: String,

    #[arg(long, default_value_t = 0.5)]
    pub alpha1: f64,

    #[arg(long, default_value_t = 0.5)]
    pub alpha2: f64,

    /// Similarity mode override: exact or rff.
    #[arg(long)]
    pub mode: Option<String>,

    /// Feature count in rff mode.
    #[arg(long)]
    pub n_features: Option<usize>,

    /// Keep one feature draw for the whole run instead of resampling each step.
    #[arg(long)]
    pub no_resample: bool,

    /// Weight clipping bound override.
    #[arg(long)]
    pub weight_clip: Option<f64>,

    /// Momentum override.
    #[arg(long)]
    pub momentum: Option<f64>,

    /// Feature count of the fixed evaluation draw.
    #[arg(long)]
    pub eval_n_features: Option<usize>,

    /// Run directory.
    #[arg(short, long)]
    pub out_dir: PathBuf,
}

fn default_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        steps: 2000,
        seed: 0,
        m_x: 2,
        m_y: 2,
        d: 2,
        kernel: KernelSpec::Combination {
            alpha1: 0.5,
            alpha2: 0.5,
            nonlinear: Box::new(KernelSpec::Gaussian { sigma: 1.0 }),
        },
        mode: SimilarityMode::Exact,
        weight_clip: DEFAULT_WEIGHT_CLIP,
        momentum: 0.9,
        eval_n_features: EVAL_FEATURES_PRESET,
    }
}

fn resolve_config(args: &Args) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => default_config(),
    };
    if args.baseline {
        config.m_x = 1;
        config.m_y = 1;
        config.kernel = KernelSpec::Linear;
        config.mode = SimilarityMode::Exact;
    }
    if args.wpse {
        config.m_x = 4;
        config.m_y = 4;
        config.kernel = KernelSpec::Combination {
            alpha1: 0.5,
            alpha2: 0.5,
            nonlinear: Box::new(KernelSpec::Gaussian { sigma: 1.0 }),
        };
        config.mode = SimilarityMode::Exact;
    }
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(mx) = args.mx {
        config.m_x = mx;
    }
    if let Some(my) = args.my {
        config.m_y = my;
    }
    if let Some(d) = args.d {
        config.d = d;
    }
    if let Some(kind) = &args.kernel {
        config.kernel = build_kernel(
            kind,
            args.sigma,
            args.imq_c,
            &args.nonlinear,
            args.alpha1,
            args.alpha2,
        )?;
    }
    if let Some(mode) = &args.mode {
        config.mode = match mode.as_str() {
            "exact" => SimilarityMode::Exact,
            "rff" => SimilarityMode::Rff {
                n_features: args
                    .n_features
                    .unwrap_or(wpse_core::rff::TRAIN_FEATURES_PRESET),
                resample_each_step: !args.no_resample,
            },
            other => bail!("unknown similarity mode {other:?}; expected exact or rff"),
        };
    } else if args.n_features.is_some() || args.no_resample {
        if let SimilarityMode::Rff {
            n_features,
            resample_each_step,
        } = &mut config.mode
        {
            if let Some(n) = args.n_features {
                *n_features = n;
            }
            if args.no_resample {
                *resample_each_step = false;
            }
        } else {
            bail!("--n-features/--no-resample require rff mode (pass --mode rff)");
        }
    }
    if let Some(clip) = args.weight_clip {
        config.weight_clip = clip;
    }
    if let Some(momentum) = args.momentum {
        config.momentum = momentum;
    }
    if let Some(n) = args.eval_n_features {
        config.eval_n_features = n;
    }
    config.validate().context("invalid training configuration")?;
    Ok(config)
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    world: &'a WorldProvenance,
    train: &'a TrainConfig,
}

pub fn run(args: &Args) -> Result<bool> {
    let (world, partition, provenance) = args.world.load()?;
    let config = resolve_config(args)?;

    let outcome = fit(&world, &partition, &config).context("training failed")?;
    let report = &outcome.report;

    let mut run_dir = RunDir::create(&args.out_dir)?;
    run_dir.write_json("model.json", &outcome.model)?;
    run_dir.write_json("report.json", report)?;
    run_dir.write_json(
        "world.json",
        &WorldFile::from_parts(&world, &partition, None),
    )?;
    let trace_rows: Vec<Vec<String>> = report
        .loss_trace
        .iter()
        .enumerate()
        .map(|(step, &loss)| vec![step.to_string(), fmt_f64(loss)])
        .collect();
    run_dir.write_csv("trace.csv", &["step", "loss"], &trace_rows)?;
    run_dir
        .finalize(
            "train",
            &ResolvedConfig {
                world: &provenance,
                train: &config,
            },
            &[config.seed],
        )
        .context("writing manifest")?;

    println!(
        "trained {}x{} world (K={}): final_loss={} delta={} grad_check={}",
        world.n_x(),
        world.n_y(),
        world.n_classes(),
        fmt_f64(report.final_loss),
        fmt_f64(report.delta),
        fmt_f64(report.grad_check)
    );
    println!(
        "excess risk: lhs={} rhs_expected={} rhs_sup={}",
        fmt_f64(report.excess.lhs),
        fmt_f64(report.excess.rhs_expected),
        fmt_f64(report.excess.rhs_sup)
    );
    println!(
        "clipping: temperature {} hits, weights {} hits",
        report.temp_clip_hits, report.weight_clip_hits
    );
    println!("artifacts in {}", args.out_dir.display());
    Ok(true)
}
