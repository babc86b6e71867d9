//! Command-line experiment runner for `navip`.
//!
//! `prepare` builds a split bundle, `train` fits a checkpoint on it,
//! `evaluate` scores a checkpoint under any set of aggregation strategies and
//! `report` lines up several evaluation runs in one table. Every command
//! writes a `manifest.json` whose `command` field replays it exactly.

pub mod config;
pub mod evaluate;
pub mod prepare;
pub mod report;
pub mod train;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use navip::Strategy;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Parser)]
#[command(name = "navip", version, about = "Graph recommender experiments with inverse-propensity neighbor aggregation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter an interaction log and write a train/validation/test bundle.
    Prepare(prepare::PrepareArgs),
    /// Train embeddings on a bundle and write a checkpoint.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint under one or more aggregation strategies.
    Evaluate(evaluate::EvaluateArgs),
    /// Render a comparison table from evaluation run directories.
    Report(report::ReportArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(args) => prepare::run(&args),
        Command::Train(args) => train::run(&args),
        Command::Evaluate(args) => evaluate::run(&args),
        Command::Report(args) => report::run(&args),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f32" | "single" => Ok(Precision::F32),
            "f64" | "double" => Ok(Precision::F64),
            other => Err(format!("unknown precision '{other}' (expected f32 or f64)")),
        }
    }
}

/// Evaluation seeds: `3`, `1,4,9` or an inclusive range `1..10`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

impl FromStr for SeedList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let seeds = if let Some((a, b)) = s.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|e| format!("bad range start in '{s}': {e}"))?;
            let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|e| format!("bad range end in '{s}': {e}"))?;
            if b < a {
                return Err(format!("empty seed range '{s}'"));
            }
            (a..=b).collect()
        } else {
            parse_list::<u64>(s)?
        };
        if seeds.is_empty() {
            return Err("no seeds given".into());
        }
        Ok(SeedList(seeds))
    }
}

impl fmt::Display for SeedList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&join(&self.0))
    }
}

/// Comma-separated cutoffs such as `5,10,20`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KList(pub Vec<usize>);

impl FromStr for KList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut ks = parse_list::<usize>(s)?;
        if ks.is_empty() || ks.contains(&0) {
            return Err(format!("cutoffs must be positive, got '{s}'"));
        }
        ks.sort_unstable();
        ks.dedup();
        Ok(KList(ks))
    }
}

impl fmt::Display for KList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&join(&self.0))
    }
}

/// Comma-separated strategy names, or `all`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyList(pub Vec<Strategy>);

impl FromStr for StrategyList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(StrategyList(Strategy::ALL.to_vec()));
        }
        let mut out = Vec::new();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            let st: Strategy = name.parse().map_err(|e: navip::Error| e.to_string())?;
            if !out.contains(&st) {
                out.push(st);
            }
        }
        if out.is_empty() {
            return Err("no strategies given".into());
        }
        Ok(StrategyList(out))
    }
}

impl fmt::Display for StrategyList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|s| s.name()).collect();
        f.write_str(&names.join(","))
    }
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<T>().map_err(|e| format!("bad list entry '{v}': {e}")))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub(crate) fn ensure_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        anyhow::bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

pub(crate) fn create_out_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path).with_context(|| format!("creating output directory {}", path.display()))?;
    Ok(path.to_path_buf())
}

/// Builds a replay command line from resolved `(flag, value)` pairs.
pub(crate) fn command_line(sub: &str, pairs: &[(&str, String)]) -> Vec<String> {
    let mut cmd = vec!["navip".to_string(), sub.to_string()];
    for (k, v) in pairs {
        cmd.push(format!("--{k}"));
        cmd.push(v.clone());
    }
    cmd
}
