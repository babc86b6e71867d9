use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use navip::{Dataset, InputFormat, SplitConfig};

use crate::config::ConfigFile;
use crate::{command_line, ensure_exists};

const KEYS: &[&str] = &["input", "format", "min-degree", "test-frac", "val-frac", "seed", "out"];

pub const DEFAULT_MIN_DEGREE: usize = 10;

#[derive(Debug, Clone, Default, Args)]
pub struct PrepareArgs {
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Interaction log to read.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// `movielens_100k` or `tsv_triplet`.
    #[arg(long)]
    pub format: Option<InputFormat>,
    /// Users and items with fewer interactions are dropped (iteratively).
    #[arg(long)]
    pub min_degree: Option<usize>,
    #[arg(long)]
    pub test_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
    /// Split seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bundle directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct PrepareSettings {
    pub input: PathBuf,
    pub format: InputFormat,
    pub min_degree: usize,
    pub split: SplitConfig,
    pub out: PathBuf,
}

impl PrepareSettings {
    pub fn resolve(args: &PrepareArgs) -> Result<Self> {
        let cfg = ConfigFile::optional(args.config.as_deref(), KEYS)?;
        let defaults = SplitConfig::default();
        Ok(Self {
            input: cfg.require("input", args.input.clone())?,
            format: cfg.pick_or("format", args.format, InputFormat::Movielens100k)?,
            min_degree: cfg.pick_or("min-degree", args.min_degree, DEFAULT_MIN_DEGREE)?,
            split: SplitConfig {
                test_frac: cfg.pick_or("test-frac", args.test_frac, defaults.test_frac)?,
                val_frac: cfg.pick_or("val-frac", args.val_frac, defaults.val_frac)?,
                seed: cfg.pick_or("seed", args.seed, defaults.seed)?,
            },
            out: cfg.require("out", args.out.clone())?,
        })
    }

    pub fn command(&self) -> Vec<String> {
        command_line(
            "prepare",
            &[
                ("input", self.input.display().to_string()),
                ("format", self.format.to_string()),
                ("min-degree", self.min_degree.to_string()),
                ("test-frac", self.split.test_frac.to_string()),
                ("val-frac", self.split.val_frac.to_string()),
                ("seed", self.split.seed.to_string()),
                ("out", self.out.display().to_string()),
            ],
        )
    }
}

pub fn run(args: &PrepareArgs) -> Result<()> {
    let settings = PrepareSettings::resolve(args)?;
    let dataset = execute(&settings)?;
    let m = &dataset.manifest;
    println!(
        "prepared {}: {} users, {} items, {} interactions (train {}, validation {}, test {}; repaired {}+{})",
        settings.out.display(),
        m.num_users,
        m.num_items,
        m.num_interactions,
        m.num_train,
        m.num_validation,
        m.num_test,
        m.repaired_validation,
        m.repaired_test,
    );
    Ok(())
}

pub fn execute(settings: &PrepareSettings) -> Result<Dataset> {
    ensure_exists(&settings.input, "input file")?;
    let mut dataset = Dataset::prepare(&settings.input, settings.format, settings.min_degree, &settings.split)
        .with_context(|| format!("preparing {}", settings.input.display()))?;
    dataset.manifest.command = settings.command();
    dataset
        .write_bundle(&settings.out)
        .with_context(|| format!("writing bundle to {}", settings.out.display()))?;
    Ok(dataset)
}
