//! Flag groups and helpers shared by several subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use wpse_core::kernel::KernelSpec;
use wpse_core::world::{
    random_world_with, DiscreteWorld, GeneratorConfig, SubsetPartition, WorldFile,
};

/// Shortest round-trip decimal rendering for CSV cells and log lines.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        serde_json::to_string(&v).unwrap_or_else(|_| v.to_string())
    } else {
        v.to_string()
    }
}

// ---------------------------------------------------------------------------
// Kernel flags
// ---------------------------------------------------------------------------

/// Kernel selection flags. `--kernel combo` (the default in most commands)
/// mixes a linear part with a shift-invariant nonlinear part.
#[derive(Args, Debug, Clone)]
pub struct KernelArgs {
    /// Kernel family: linear, gaussian, imq, or combo.
    #[arg(long, default_value = "combo")]
    pub kernel: String,

    /// Bandwidth of the gaussian kernel.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,

    /// Offset of the inverse multiquadric kernel.
    #[arg(long = "imq-c", default_value_t = 1.0)]
    pub imq_c: f64,

    /// Nonlinear part inside combo: gaussian or imq.
    #[arg(long, default_value = "gaussian")]
    pub nonlinear: String,

    /// Linear mixture weight of combo.
    #[arg(long, default_value_t = 0.5)]
    pub alpha1: f64,

    /// Nonlinear mixture weight of combo.
    #[arg(long, default_value_t = 0.5)]
    pub alpha2: f64,
}

impl KernelArgs {
    pub fn to_spec(&self) -> Result<KernelSpec> {
        let spec = build_kernel(
            &self.kernel,
            self.sigma,
            self.imq_c,
            &self.nonlinear,
            self.alpha1,
            self.alpha2,
        )?;
        spec.validate().context("invalid kernel parameters")?;
        Ok(spec)
    }
}

pub fn build_kernel(
    kind: &str,
    sigma: f64,
    imq_c: f64,
    nonlinear: &str,
    alpha1: f64,
    alpha2: f64,
) -> Result<KernelSpec> {
    let nonlinear_spec = |name: &str| -> Result<KernelSpec> {
        match name {
            "gaussian" => Ok(KernelSpec::Gaussian { sigma }),
            "imq" => Ok(KernelSpec::Imq { c: imq_c }),
            other => bail!("unknown nonlinear kernel {other:?}; expected gaussian or imq"),
        }
    };
    match kind {
        "linear" => Ok(KernelSpec::Linear),
        "gaussian" | "imq" => nonlinear_spec(kind),
        "combo" => Ok(KernelSpec::Combination {
            alpha1,
            alpha2,
            nonlinear: Box::new(nonlinear_spec(nonlinear)?),
        }),
        other => bail!("unknown kernel {other:?}; expected linear, gaussian, imq, or combo"),
    }
}

// ---------------------------------------------------------------------------
// World sources
// ---------------------------------------------------------------------------

/// Where a command gets its world: a JSON file, or the seeded generator.
#[derive(Args, Debug, Clone)]
pub struct WorldArgs {
    /// World file (JSON). When given, the generator flags are ignored.
    #[arg(long)]
    pub world: Option<PathBuf>,

    /// Instances in the generated world.
    #[arg(long, default_value_t = 8)]
    pub nx: usize,

    /// Captions in the generated world.
    #[arg(long, default_value_t = 8)]
    pub ny: usize,

    /// Classes in the generated world.
    #[arg(long, default_value_t = 2)]
    pub k: usize,

    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub world_seed: u64,

    /// Dirichlet concentration of the generator.
    #[arg(long, default_value_t = 1.0)]
    pub concentration: f64,

    /// Full-support floor of the generator (0 keeps KL terms exactly zero).
    #[arg(long)]
    pub floor: Option<f64>,
}

/// Provenance of the world a command ran on, recorded in the manifest.
#[derive(Debug, Clone, serde::Serialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum WorldProvenance {
    File { path: String },
    Generated { config: GeneratorConfig },
}

impl WorldArgs {
    pub fn load(&self) -> Result<(DiscreteWorld, SubsetPartition, WorldProvenance)> {
        if let Some(path) = &self.world {
            let (world, partition) = load_world_file(path)?;
            Ok((
                world,
                partition,
                WorldProvenance::File {
                    path: path.display().to_string(),
                },
            ))
        } else {
            let cfg = self.generator_config();
            let (world, partition) = random_world_with(&cfg)
                .context("generating world from the given dimensions")?;
            Ok((world, partition, WorldProvenance::Generated { config: cfg }))
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        let mut cfg = GeneratorConfig::new(self.nx, self.ny, self.k, self.world_seed);
        cfg.concentration = self.concentration;
        if let Some(floor) = self.floor {
            cfg.floor = floor;
        }
        cfg
    }
}

pub fn load_world_file(path: &Path) -> Result<(DiscreteWorld, SubsetPartition)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading world file {}", path.display()))?;
    let file: WorldFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing world file {}", path.display()))?;
    file.into_parts()
        .with_context(|| format!("validating world file {}", path.display()))
}

pub fn write_world_file(path: &Path, file: &WorldFile) -> Result<()> {
    let mut text = serde_json::to_string_pretty(file).context("serializing world file")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
