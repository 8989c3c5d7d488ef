//! `gen-world`: sample a synthetic world and write it as a JSON world file.

use std::path::PathBuf;

use anyhow::{Context, Result};
use wpse_core::world::{kl_terms, mutual_information, random_world_with, WorldFile};

use crate::common::fmt_f64;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Number of instances.
    #[arg(long)]
    pub nx: usize,

    /// Number of captions.
    #[arg(long)]
    pub ny: usize,

    /// Number of classes.
    #[arg(long)]
    pub k: usize,

    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Dirichlet concentration; small values give peaked structure.
    #[arg(long, default_value_t = 1.0)]
    pub concentration: f64,

    /// Full-support floor; 0 keeps the KL terms of the generating partition
    /// exactly zero.
    #[arg(long)]
    pub floor: Option<f64>,

    /// Draw an independent joint `p(x, y) = p(x) p(y)` instead (PMI is zero).
    #[arg(long)]
    pub independent: bool,

    /// Output world file (JSON).
    #[arg(short, long)]
    pub output: PathBuf,
}

pub fn run(args: &Args) -> Result<bool> {
    let mut cfg = wpse_core::world::GeneratorConfig::new(args.nx, args.ny, args.k, args.seed);
    cfg.concentration = args.concentration;
    if let Some(floor) = args.floor {
        cfg.floor = floor;
    }
    cfg.independent = args.independent;

    let (world, partition) = random_world_with(&cfg).context("generating world")?;
    let file = WorldFile::from_parts(&world, &partition, Some(cfg));
    crate::common::write_world_file(&args.output, &file)?;

    let mi = mutual_information(&world)?;
    let kl = kl_terms(&world, &partition)?;
    println!(
        "wrote {} ({} instances x {} captions, {} classes)",
        args.output.display(),
        world.n_x(),
        world.n_y(),
        world.n_classes()
    );
    println!("mutual information: {}", fmt_f64(mi));
    println!(
        "kl terms: eps1_expected={} eps2_expected={} eps1_sup={} eps2_sup={}",
        fmt_f64(kl.eps1_expected),
        fmt_f64(kl.eps2_expected),
        fmt_f64(kl.eps1_sup),
        fmt_f64(kl.eps2_sup)
    );
    Ok(true)
}
