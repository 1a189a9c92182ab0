use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use clap::Parser;
use serde::{Deserialize, Serialize};

use crate::{Cli, ReplayArgs};

pub const FILE_NAME: &str = "run_manifest.json";

/// Enough to re-run a command: the arguments after the program name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub argv: Vec<String>,
}

pub fn write(out: &Path, argv: &[String]) -> anyhow::Result<()> {
    let m = RunManifest { tool: "gymsense".into(), version: env!("CARGO_PKG_VERSION").into(), argv: argv.to_vec() };
    let path = out.join(FILE_NAME);
    let text = serde_json::to_string_pretty(&m)? + "\n";
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

/// Replaces the value of `--out` (either `--out X` or `--out=X`).
fn with_out(argv: &[String], out: &Path) -> anyhow::Result<Vec<String>> {
    let out = out.to_string_lossy().into_owned();
    let mut result = Vec::with_capacity(argv.len());
    let mut replaced = false;
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
            result.extend(["--out".to_string(), out.clone()]);
            replaced = true;
        } else if a.starts_with("--out=") {
            result.push(format!("--out={out}"));
            replaced = true;
        } else {
            result.push(a.clone());
        }
    }
    if !replaced {
        bail!("the recorded command has no --out to redirect");
    }
    Ok(result)
}

pub fn replay(args: &ReplayArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.manifest).with_context(|| format!("reading {}", args.manifest.display()))?;
    let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", args.manifest.display()))?;
    if m.argv.first().is_some_and(|c| c == "replay") {
        bail!("refusing to replay a replay");
    }
    let argv = match &args.out {
        Some(out) => with_out(&m.argv, out)?,
        None => m.argv.clone(),
    };
    log::info!("replaying: gymsense {}", argv.join(" "));
    let cli = Cli::try_parse_from(std::iter::once("gymsense".to_string()).chain(argv.iter().cloned()))
        .context("the recorded command no longer parses")?;
    crate::run(cli, &argv)
}
