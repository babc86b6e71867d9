use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use navip::checkpoint::read_checkpoint;
use navip::evaluation::{evaluate_excluding, DEFAULT_K_LIST, DEFAULT_NUM_NEGATIVES};
use navip::{AggregationOperator, Dataset, EvalConfig, EvalReport, InteractionGraph, Model, Normalization, PropensityTable, Strategy};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ConfigFile;
use crate::report::{render_summaries, Emit, Segment};
use crate::{command_line, create_out_dir, ensure_exists, sha256_file, write_json, KList, SeedList, StrategyList};

const KEYS: &[&str] = &[
    "checkpoint",
    "bundle",
    "eval-strategies",
    "eval-norm",
    "split",
    "seeds",
    "k",
    "negatives",
    "out",
];

pub const SUMMARY_FILE: &str = "summary.json";
pub const TABLE_FILE: &str = "table.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeldOut {
    Validation,
    #[default]
    Test,
}

impl fmt::Display for HeldOut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeldOut::Validation => "validation",
            HeldOut::Test => "test",
        })
    }
}

impl FromStr for HeldOut {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "validation" | "val" => Ok(HeldOut::Validation),
            "test" => Ok(HeldOut::Test),
            other => Err(format!("unknown split '{other}' (expected validation or test)")),
        }
    }
}

/// Sampled negatives per case, or `all` for full ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Negatives(pub Option<usize>);

impl FromStr for Negatives {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(Negatives(None));
        }
        match s.parse::<usize>() {
            Ok(0) => Err("negatives must be positive or 'all'".into()),
            Ok(n) => Ok(Negatives(Some(n))),
            Err(e) => Err(format!("bad negative count '{s}': {e}")),
        }
    }
}

impl fmt::Display for Negatives {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(n) => write!(f, "{n}"),
            None => f.write_str("all"),
        }
    }
}

/// Normalization used at inference; `default` follows each strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalNorm(pub Option<Normalization>);

impl FromStr for EvalNorm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("default") {
            return Ok(EvalNorm(None));
        }
        s.parse::<Normalization>().map(|n| EvalNorm(Some(n))).map_err(|e| e.to_string())
    }
}

impl fmt::Display for EvalNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(n) => write!(f, "{n}"),
            None => f.write_str("default"),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvaluateArgs {
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Bundle the checkpoint was trained on.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Inference-time strategies, comma separated, or `all`.
    #[arg(long)]
    pub eval_strategies: Option<StrategyList>,
    /// `symmetric`, `random-walk` or `default` (each strategy's own).
    #[arg(long)]
    pub eval_norm: Option<EvalNorm>,
    /// Held-out positives to rank: `validation` or `test`.
    #[arg(long)]
    pub split: Option<HeldOut>,
    /// Evaluation seeds: `1..10`, `1,2,3` or a single value.
    #[arg(long)]
    pub seeds: Option<SeedList>,
    /// Cutoffs, comma separated.
    #[arg(long)]
    pub k: Option<KList>,
    /// Sampled negatives per positive, or `all`.
    #[arg(long)]
    pub negatives: Option<Negatives>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct EvaluateSettings {
    pub checkpoint: PathBuf,
    pub bundle: PathBuf,
    pub strategies: StrategyList,
    pub eval_norm: EvalNorm,
    pub split: HeldOut,
    pub seeds: SeedList,
    pub k: KList,
    pub negatives: Negatives,
    pub out: PathBuf,
}

impl EvaluateSettings {
    pub fn resolve(args: &EvaluateArgs) -> Result<Self> {
        let cfg = ConfigFile::optional(args.config.as_deref(), KEYS)?;
        Ok(Self {
            checkpoint: cfg.require("checkpoint", args.checkpoint.clone())?,
            bundle: cfg.require("bundle", args.bundle.clone())?,
            strategies: cfg.pick_or("eval-strategies", args.eval_strategies.clone(), StrategyList(Strategy::ALL.to_vec()))?,
            eval_norm: cfg.pick_or("eval-norm", args.eval_norm, EvalNorm(None))?,
            split: cfg.pick_or("split", args.split, HeldOut::default())?,
            seeds: cfg.pick_or("seeds", args.seeds.clone(), SeedList((1..=10).collect()))?,
            k: cfg.pick_or("k", args.k.clone(), KList(DEFAULT_K_LIST.to_vec()))?,
            negatives: cfg.pick_or("negatives", args.negatives, Negatives(Some(DEFAULT_NUM_NEGATIVES)))?,
            out: cfg.require("out", args.out.clone())?,
        })
    }

    pub fn command(&self) -> Vec<String> {
        command_line(
            "evaluate",
            &[
                ("checkpoint", self.checkpoint.display().to_string()),
                ("bundle", self.bundle.display().to_string()),
                ("eval-strategies", self.strategies.to_string()),
                ("eval-norm", self.eval_norm.to_string()),
                ("split", self.split.to_string()),
                ("seeds", self.seeds.to_string()),
                ("k", self.k.to_string()),
                ("negatives", self.negatives.to_string()),
                ("out", self.out.display().to_string()),
            ],
        )
    }
}

/// Seed-aggregated metrics of one inference-time strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub normalization: Normalization,
    pub mean: BTreeMap<String, f64>,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std: BTreeMap<String, f64>,
    pub stderr: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub train_strategy: Strategy,
    pub train_normalization: Normalization,
    pub train_seed: u64,
    pub split: HeldOut,
    pub seeds: Vec<u64>,
    pub k_list: Vec<usize>,
    pub num_negatives: Option<usize>,
    pub num_cases: usize,
    pub strategies: Vec<StrategySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateManifest {
    pub command: Vec<String>,
    pub checkpoint: String,
    pub checkpoint_sha256: String,
    pub bundle: String,
    pub bundle_manifest_sha256: String,
    pub reports: Vec<String>,
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let settings = EvaluateSettings::resolve(args)?;
    let summary = execute(&settings)?;
    print!(
        "{}",
        render_summaries(&[(String::new(), &summary)], Segment::Overall, Emit::Table)
    );
    println!(
        "{} cases, seeds {}; reports in {}",
        summary.num_cases,
        settings.seeds,
        settings.out.display()
    );
    Ok(())
}

pub fn execute(settings: &EvaluateSettings) -> Result<EvalSummary> {
    ensure_exists(&settings.checkpoint, "checkpoint")?;
    ensure_exists(&settings.bundle, "bundle directory")?;
    let dataset = Dataset::read_bundle(&settings.bundle)
        .with_context(|| format!("reading bundle {}", settings.bundle.display()))?;
    let graph = InteractionGraph::build(&dataset.train, dataset.num_users(), dataset.num_items())
        .context("building the training graph")?;
    let file = File::open(&settings.checkpoint).with_context(|| format!("opening {}", settings.checkpoint.display()))?;
    let (model, meta) = read_checkpoint::<f64, _>(BufReader::new(file))
        .with_context(|| format!("reading checkpoint {}", settings.checkpoint.display()))?;
    if model.num_users() != graph.num_users() || model.num_items() != graph.num_items() {
        bail!(
            "checkpoint has {} users and {} items but the bundle has {} and {}",
            model.num_users(),
            model.num_items(),
            graph.num_users(),
            graph.num_items()
        );
    }
    let (cases, known) = match settings.split {
        HeldOut::Test => (&dataset.test, &dataset.validation),
        HeldOut::Validation => (&dataset.validation, &dataset.test),
    };
    let out = create_out_dir(&settings.out)?;
    let table = PropensityTable::<f64>::estimate(&graph);

    let mut report_files = Vec::new();
    let mut rows = Vec::new();
    for &strategy in &settings.strategies.0 {
        let norm = settings.eval_norm.0.unwrap_or(strategy.default_normalization());
        let reports = evaluate_strategy(&model, &graph, &table, strategy, norm, cases, known, settings)?;
        let dir = out.join(strategy.name());
        fs::create_dir_all(&dir)?;
        for r in &reports {
            let name = format!("{}/seed-{}.json", strategy.name(), r.seed);
            write_json(&out.join(&name), &r.to_flat_json())?;
            report_files.push(name);
        }
        let row = summarize(strategy, norm, &reports);
        let mut averaged = serde_json::Map::new();
        for (k, v) in &row.mean {
            averaged.insert(k.clone(), Value::from(*v));
        }
        averaged.insert("num_cases".into(), Value::from(reports[0].num_cases));
        averaged.insert("num_head_cases".into(), Value::from(reports[0].num_head_cases));
        averaged.insert("num_tail_cases".into(), Value::from(reports[0].num_tail_cases));
        averaged.insert("seeds".into(), Value::from(settings.seeds.0.clone()));
        averaged.insert("strategy".into(), Value::from(strategy.name()));
        averaged.insert("normalization".into(), Value::from(norm.name()));
        let name = format!("{}.json", strategy.name());
        write_json(&out.join(&name), &Value::Object(averaged))?;
        report_files.push(name);
        rows.push(row);
    }

    let summary = EvalSummary {
        train_strategy: meta.strategy,
        train_normalization: meta.normalization,
        train_seed: meta.seed,
        split: settings.split,
        seeds: settings.seeds.0.clone(),
        k_list: settings.k.0.clone(),
        num_negatives: settings.negatives.0,
        num_cases: cases.len(),
        strategies: rows,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    report_files.push(SUMMARY_FILE.into());

    let labelled = [(String::new(), &summary)];
    let mut text = String::new();
    for segment in [Segment::Overall, Segment::Head, Segment::Tail] {
        text.push_str(&format!("# {segment} (mean over {} seeds)\n", summary.seeds.len()));
        text.push_str(&render_summaries(&labelled, segment, Emit::Table));
        text.push('\n');
    }
    fs::write(out.join(TABLE_FILE), text)?;
    report_files.push(TABLE_FILE.into());

    let manifest = EvaluateManifest {
        command: settings.command(),
        checkpoint: settings.checkpoint.display().to_string(),
        checkpoint_sha256: sha256_file(&settings.checkpoint)?,
        bundle: settings.bundle.display().to_string(),
        bundle_manifest_sha256: sha256_file(&settings.bundle.join("manifest.json"))?,
        reports: report_files,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn evaluate_strategy(
    model: &Model,
    graph: &InteractionGraph,
    table: &PropensityTable<f64>,
    strategy: Strategy,
    norm: Normalization,
    cases: &[(usize, usize)],
    known: &[(usize, usize)],
    settings: &EvaluateSettings,
) -> Result<Vec<EvalReport>> {
    let op = AggregationOperator::build(graph, Some(table), strategy, norm)?;
    let emb = model.reaggregate(&op)?;
    settings
        .seeds
        .0
        .iter()
        .map(|&seed| {
            let cfg = EvalConfig {
                k_list: settings.k.0.clone(),
                num_negatives: settings.negatives.0,
                seed,
            };
            let report = evaluate_excluding(&emb, graph, cases, known, &cfg)?.with_operator(strategy, norm);
            check_report(&report, cases.len())
                .with_context(|| format!("report for {strategy}, seed {seed} failed its consistency checks"))?;
            Ok(report)
        })
        .collect()
}

/// Metrics lie in [0, 1], grow with k, and NDCG never exceeds HR.
pub fn check_report(report: &EvalReport, num_cases: usize) -> Result<()> {
    if report.num_cases != num_cases {
        bail!("ranked {} cases, expected {num_cases}", report.num_cases);
    }
    let groups = [
        (&report.hr, &report.ndcg),
        (&report.hr_head, &report.ndcg_head),
        (&report.hr_tail, &report.ndcg_tail),
    ];
    for (hr, ndcg) in groups {
        let mut prev = (0.0, 0.0);
        for (k, &h) in hr {
            let n = ndcg.get(k).copied().unwrap_or(f64::NAN);
            if !(0.0..=1.0).contains(&h) || !(0.0..=1.0).contains(&n) {
                bail!("metric at k={k} outside [0, 1]: hr {h}, ndcg {n}");
            }
            if n > h + 1e-12 {
                bail!("ndcg {n} exceeds hr {h} at k={k}");
            }
            if h < prev.0 || n < prev.1 {
                bail!("metrics decrease at k={k}");
            }
            prev = (h, n);
        }
    }
    Ok(())
}

pub fn summarize(strategy: Strategy, normalization: Normalization, reports: &[EvalReport]) -> StrategySummary {
    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        if let Value::Object(obj) = r.to_flat_json() {
            for (k, v) in obj {
                if let (true, Some(x)) = (k.contains('@'), v.as_f64()) {
                    samples.entry(k).or_default().push(x);
                }
            }
        }
    }
    let mut mean = BTreeMap::new();
    let mut std = BTreeMap::new();
    let mut stderr = BTreeMap::new();
    for (k, xs) in samples {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let s = if xs.len() > 1 {
            (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        mean.insert(k.clone(), m);
        std.insert(k.clone(), s);
        stderr.insert(k, s / n.sqrt());
    }
    StrategySummary {
        strategy,
        normalization,
        mean,
        std,
        stderr,
    }
}

pub fn read_summary(dir: &Path) -> Result<EvalSummary> {
    crate::read_json(&dir.join(SUMMARY_FILE))
}
