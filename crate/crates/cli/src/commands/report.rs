//! `report`: summarize a run directory and verify its artifact hashes.
//!
//! Reads the manifest, re-hashes every listed artifact, and prints a
//! per-file verdict. Exits nonzero if any artifact is missing or its
//! content no longer matches the recorded digest.

use std::fs;
use std::path::PathBuf;

use anyhow::Result;

use crate::output::{read_manifest, sha256_hex};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Run directory containing manifest.json.
    #[arg(long)]
    pub run_dir: PathBuf,
}

pub fn run(args: &Args) -> Result<bool> {
    let manifest = read_manifest(&args.run_dir)?;
    println!(
        "{} v{} run: {} ({} artifacts)",
        manifest.tool,
        manifest.version,
        manifest.command,
        manifest.files.len()
    );
    let seeds: Vec<String> = manifest.seeds.iter().map(u64::to_string).collect();
    println!("seeds: [{}]", seeds.join(", "));
    println!("config: {}", serde_json::to_string(&manifest.config)?);

    let mut all_ok = true;
    for entry in &manifest.files {
        let path = args.run_dir.join(&entry.name);
        let verdict = match fs::read(&path) {
            Ok(bytes) => {
                if sha256_hex(&bytes) == entry.sha256 {
                    "ok"
                } else {
                    all_ok = false;
                    "HASH MISMATCH"
                }
            }
            Err(_) => {
                all_ok = false;
                "MISSING"
            }
        };
        println!("  {}  {}  {}", entry.sha256, entry.name, verdict);
    }
    if !all_ok {
        eprintln!("report: artifact verification failed");
    }
    Ok(all_ok)
}
