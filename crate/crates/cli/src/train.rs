use std::fs::File;
use std::io::BufWriter;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use navip::checkpoint::{write_checkpoint, CheckpointMeta};
use navip::training::{train_monitored, write_loss_csv};
use navip::{
    evaluate, AggregationOperator, Dataset, EmbeddingModel, EvalConfig, InteractionGraph, LossKind, Normalization,
    PropensityTable, Scalar, Strategy, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::ConfigFile;
use crate::{command_line, create_out_dir, ensure_exists, sha256_file, write_json, Precision};

const KEYS: &[&str] = &[
    "bundle",
    "epochs",
    "batch-size",
    "learning-rate",
    "l2-weight",
    "loss",
    "strategy",
    "norm",
    "dim",
    "depth",
    "init-std",
    "seed",
    "precision",
    "early-stop-patience",
    "out",
];

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss.csv";
pub const PROPENSITY_FILE: &str = "propensity.csv";

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bundle directory written by `prepare`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2_weight: Option<f64>,
    /// `bpr` or `ips-bpr`.
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Training-time aggregation: `mean`, `propensity` or `navip`.
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// `symmetric` or `random-walk`; defaults to the strategy's own.
    #[arg(long)]
    pub norm: Option<Normalization>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Propagation depth K.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub init_std: Option<f64>,
    /// Run seed (initialization and sampling).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Arithmetic used during training: `f32` or `f64`.
    #[arg(long)]
    pub precision: Option<Precision>,
    /// Stop after this many epochs without a better validation HR@10 and
    /// keep the best epoch's weights; 0 disables.
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    /// Run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub bundle: PathBuf,
    pub config: TrainConfig,
    pub precision: Precision,
    pub early_stop_patience: usize,
    pub out: PathBuf,
}

impl TrainSettings {
    pub fn resolve(args: &TrainArgs) -> Result<Self> {
        let cfg = ConfigFile::optional(args.config.as_deref(), KEYS)?;
        let d = TrainConfig::default();
        let strategy: Strategy = cfg.pick_or("strategy", args.strategy, d.strategy)?;
        let config = TrainConfig {
            epochs: cfg.pick_or("epochs", args.epochs, d.epochs)?,
            batch_size: cfg.pick_or("batch-size", args.batch_size, d.batch_size)?,
            learning_rate: cfg.pick_or("learning-rate", args.learning_rate, d.learning_rate)?,
            l2_weight: cfg.pick_or("l2-weight", args.l2_weight, d.l2_weight)?,
            loss: cfg.pick_or("loss", args.loss, d.loss)?,
            seed: cfg.pick_or("seed", args.seed, d.seed)?,
            strategy,
            normalization: cfg.pick_or("norm", args.norm, strategy.default_normalization())?,
            dim: cfg.pick_or("dim", args.dim, d.dim)?,
            depth: cfg.pick_or("depth", args.depth, d.depth)?,
            init_std: cfg.pick_or("init-std", args.init_std, d.init_std)?,
        };
        config.validate()?;
        Ok(Self {
            bundle: cfg.require("bundle", args.bundle.clone())?,
            config,
            precision: cfg.pick_or("precision", args.precision, Precision::default())?,
            early_stop_patience: cfg.pick_or("early-stop-patience", args.early_stop_patience, 0)?,
            out: cfg.require("out", args.out.clone())?,
        })
    }

    pub fn command(&self) -> Vec<String> {
        let c = &self.config;
        command_line(
            "train",
            &[
                ("bundle", self.bundle.display().to_string()),
                ("epochs", c.epochs.to_string()),
                ("batch-size", c.batch_size.to_string()),
                ("learning-rate", c.learning_rate.to_string()),
                ("l2-weight", c.l2_weight.to_string()),
                ("loss", c.loss.to_string()),
                ("strategy", c.strategy.to_string()),
                ("norm", c.normalization.to_string()),
                ("dim", c.dim.to_string()),
                ("depth", c.depth.to_string()),
                ("init-std", c.init_std.to_string()),
                ("seed", c.seed.to_string()),
                ("precision", self.precision.to_string()),
                ("early-stop-patience", self.early_stop_patience.to_string()),
                ("out", self.out.display().to_string()),
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub command: Vec<String>,
    pub bundle: String,
    pub bundle_manifest_sha256: String,
    pub precision: Precision,
    pub config: TrainConfig,
    pub num_users: usize,
    pub num_items: usize,
    pub num_train: usize,
    pub steps_per_epoch: usize,
    pub epochs_run: usize,
    /// 1-based epoch whose weights were kept.
    pub kept_epoch: usize,
    /// Validation HR@10 of the kept epoch, when early stopping was on.
    pub validation_hr10: Option<f64>,
    pub final_loss: f64,
    pub checkpoint_sha256: String,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let settings = TrainSettings::resolve(args)?;
    let quiet = args.quiet;
    let manifest = execute(&settings, |epoch, loss| {
        if !quiet {
            eprintln!("epoch {:>4}/{}  loss {loss:.6}", epoch + 1, settings.config.epochs);
        }
    })?;
    println!(
        "trained {} ({} epochs, kept epoch {}, final loss {:.6}) -> {}",
        settings.config.strategy,
        manifest.epochs_run,
        manifest.kept_epoch,
        manifest.final_loss,
        settings.out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

pub fn execute(settings: &TrainSettings, on_epoch: impl FnMut(usize, f64)) -> Result<TrainManifest> {
    ensure_exists(&settings.bundle, "bundle directory")?;
    let dataset = Dataset::read_bundle(&settings.bundle)
        .with_context(|| format!("reading bundle {}", settings.bundle.display()))?;
    let graph = InteractionGraph::build(&dataset.train, dataset.num_users(), dataset.num_items())
        .context("building the training graph")?;
    let out = create_out_dir(&settings.out)?;

    let fitted = match settings.precision {
        Precision::F32 => fit::<f32>(&graph, &dataset, settings, &out, on_epoch)?,
        Precision::F64 => fit::<f64>(&graph, &dataset, settings, &out, on_epoch)?,
    };

    let manifest = TrainManifest {
        command: settings.command(),
        bundle: settings.bundle.display().to_string(),
        bundle_manifest_sha256: sha256_file(&settings.bundle.join("manifest.json"))?,
        precision: settings.precision,
        config: settings.config.clone(),
        num_users: graph.num_users(),
        num_items: graph.num_items(),
        num_train: graph.num_edges(),
        steps_per_epoch: graph.num_edges().div_ceil(settings.config.batch_size),
        epochs_run: fitted.epochs_run,
        kept_epoch: fitted.kept_epoch,
        validation_hr10: fitted.validation_hr10,
        final_loss: fitted.final_loss,
        checkpoint_sha256: sha256_file(&out.join(CHECKPOINT_FILE))?,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

struct Fitted {
    epochs_run: usize,
    kept_epoch: usize,
    validation_hr10: Option<f64>,
    final_loss: f64,
}

fn fit<T: Scalar>(
    graph: &InteractionGraph,
    dataset: &Dataset,
    settings: &TrainSettings,
    out: &Path,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Fitted> {
    let cfg = &settings.config;
    let table = PropensityTable::<T>::estimate(graph);
    let patience = settings.early_stop_patience;
    let op = if patience > 0 {
        Some(AggregationOperator::build(graph, Some(&table), cfg.strategy, cfg.normalization)?)
    } else {
        None
    };
    let eval_cfg = EvalConfig {
        k_list: vec![10],
        seed: cfg.seed,
        ..EvalConfig::default()
    };
    let mut best: Option<(usize, f64, EmbeddingModel<T>)> = None;
    let mut failure = None;

    let outcome = train_monitored(graph, &table, cfg, |epoch, loss, model| {
        on_epoch(epoch, loss);
        let Some(op) = &op else {
            return ControlFlow::Continue(());
        };
        let hr = model
            .forward(op)
            .and_then(|fin| evaluate(&fin, graph, &dataset.validation, &eval_cfg))
            .map(|r| r.hr[&10]);
        let hr = match hr {
            Ok(hr) => hr,
            Err(e) => {
                failure = Some(e);
                return ControlFlow::Break(());
            }
        };
        if best.as_ref().is_none_or(|b| hr > b.1) {
            best = Some((epoch, hr, model.clone()));
        }
        if epoch - best.as_ref().map_or(epoch, |b| b.0) >= patience {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .context("training failed")?;
    if let Some(e) = failure {
        return Err(e).context("validation during training failed");
    }

    let epochs_run = outcome.loss_trace.len();
    let (model, kept_epoch, validation_hr10) = match best {
        Some((epoch, hr, model)) => (model, epoch + 1, Some(hr)),
        None => (outcome.model, epochs_run, None),
    };
    let meta = CheckpointMeta {
        strategy: cfg.strategy,
        normalization: cfg.normalization,
        seed: cfg.seed,
    };
    write_checkpoint(&model, &meta, BufWriter::new(create(out, CHECKPOINT_FILE)?))?;
    write_loss_csv(&outcome.loss_trace, BufWriter::new(create(out, LOSS_FILE)?))?;
    table.write_csv(
        BufWriter::new(create(out, PROPENSITY_FILE)?),
        Some(dataset.items.raw_ids()),
    )?;
    Ok(Fitted {
        epochs_run,
        kept_epoch,
        validation_hr10,
        final_loss: outcome.loss_trace.last().copied().unwrap_or(f64::NAN),
    })
}

fn create(dir: &Path, name: &str) -> Result<File> {
    let path = dir.join(name);
    File::create(&path).with_context(|| format!("creating {}", path.display()))
}
