use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Result};
use clap::Args;
use navip::evaluation::{metric_headers, render_csv, render_table};
use serde::{Deserialize, Serialize};

use crate::config::ConfigFile;
use crate::evaluate::{read_summary, EvalSummary};
use crate::{command_line, create_out_dir, ensure_exists, sha256_file, write_json};

const KEYS: &[&str] = &["runs", "emit", "segment", "out"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Emit {
    #[default]
    Table,
    Csv,
}

impl FromStr for Emit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "table" | "txt" => Ok(Emit::Table),
            "csv" => Ok(Emit::Csv),
            other => Err(format!("unknown output kind '{other}' (expected table or csv)")),
        }
    }
}

impl fmt::Display for Emit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Emit::Table => "table",
            Emit::Csv => "csv",
        })
    }
}

/// Which item segment the metric columns describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Segment {
    #[default]
    Overall,
    Head,
    Tail,
}

impl Segment {
    fn keys(self) -> (&'static str, &'static str) {
        match self {
            Segment::Overall => ("hr", "ndcg"),
            Segment::Head => ("hr_head", "ndcg_head"),
            Segment::Tail => ("hr_tail", "ndcg_tail"),
        }
    }
}

impl FromStr for Segment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "overall" | "all" => Ok(Segment::Overall),
            "head" => Ok(Segment::Head),
            "tail" => Ok(Segment::Tail),
            other => Err(format!("unknown segment '{other}' (expected overall, head or tail)")),
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Segment::Overall => "overall",
            Segment::Head => "head",
            Segment::Tail => "tail",
        })
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ReportArgs {
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Evaluation output directories.
    pub runs: Vec<PathBuf>,
    /// `table` (per-column maxima in bold) or `csv`.
    #[arg(long)]
    pub emit: Option<Emit>,
    /// `overall`, `head` or `tail`.
    #[arg(long)]
    pub segment: Option<Segment>,
    /// Directory for the rendered report and its manifest; stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportManifest {
    pub command: Vec<String>,
    pub summaries_sha256: BTreeMap<String, String>,
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let cfg = ConfigFile::optional(args.config.as_deref(), KEYS)?;
    let runs: Vec<PathBuf> = if args.runs.is_empty() {
        cfg.raw("runs")
            .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect())
            .unwrap_or_default()
    } else {
        args.runs.clone()
    };
    if runs.is_empty() {
        bail!("no run directories given");
    }
    let emit: Emit = cfg.pick_or("emit", args.emit, Emit::default())?;
    let segment: Segment = cfg.pick_or("segment", args.segment, Segment::default())?;
    let out: Option<PathBuf> = cfg.pick("out", args.out.clone())?;

    let mut summaries = Vec::new();
    for dir in &runs {
        ensure_exists(dir, "run directory")?;
        summaries.push((dir.display().to_string(), read_summary(dir)?));
    }
    let labelled: Vec<(String, &EvalSummary)> = summaries.iter().map(|(d, s)| (d.clone(), s)).collect();
    let text = render_summaries(&labelled, segment, emit);

    match out {
        None => print!("{text}"),
        Some(dir) => {
            let dir = create_out_dir(&dir)?;
            let name = match emit {
                Emit::Table => "report.txt",
                Emit::Csv => "report.csv",
            };
            fs::write(dir.join(name), &text)?;
            let mut pairs = vec![("emit", emit.to_string()), ("segment", segment.to_string())];
            pairs.push(("out", dir.display().to_string()));
            let mut command = command_line("report", &pairs);
            command.extend(runs.iter().map(|r| r.display().to_string()));
            let summaries_sha256 = runs
                .iter()
                .map(|r| Ok((r.display().to_string(), sha256_file(&r.join(crate::evaluate::SUMMARY_FILE))?)))
                .collect::<Result<_>>()?;
            write_json(&dir.join("manifest.json"), &ReportManifest { command, summaries_sha256 })?;
            println!("wrote {}", dir.join(name).display());
        }
    }
    Ok(())
}

/// One row per (run, inference strategy), labelled `train/eval`. Labels get
/// the run name as a prefix only when they would otherwise collide.
pub fn render_summaries(runs: &[(String, &EvalSummary)], segment: Segment, emit: Emit) -> String {
    let ks: BTreeSet<usize> = runs.iter().flat_map(|(_, s)| s.k_list.iter().copied()).collect();
    let ks: Vec<usize> = ks.into_iter().collect();
    let (hr_key, ndcg_key) = segment.keys();

    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for (run, summary) in runs {
        for row in &summary.strategies {
            let label = format!("{}/{}", summary.train_strategy, row.strategy);
            let value = |key: &str, k: usize| row.mean.get(&format!("{key}@{k}")).copied().unwrap_or(f64::NAN);
            let vals: Vec<f64> = ks
                .iter()
                .map(|&k| value(hr_key, k))
                .chain(ks.iter().map(|&k| value(ndcg_key, k)))
                .collect();
            labels.push((run.clone(), label));
            rows.push(vals);
        }
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, l) in &labels {
        *counts.entry(l.as_str()).or_default() += 1;
    }
    let rows: Vec<(String, Vec<f64>)> = labels
        .iter()
        .zip(rows)
        .map(|((run, label), vals)| {
            let name = if counts[label.as_str()] > 1 && !run.is_empty() {
                format!("{run}:{label}")
            } else {
                label.clone()
            };
            (name, vals)
        })
        .collect();

    let headers = metric_headers(&ks);
    match emit {
        Emit::Table => render_table("train/eval", &headers, &rows, true),
        Emit::Csv => render_csv("train/eval", &headers, &rows),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::{HeldOut, StrategySummary};
    use navip::{Normalization, Strategy};

    fn summary(train: Strategy, rows: &[(Strategy, f64)]) -> EvalSummary {
        EvalSummary {
            train_strategy: train,
            train_normalization: train.default_normalization(),
            train_seed: 0,
            split: HeldOut::Test,
            seeds: vec![1],
            k_list: vec![10],
            num_negatives: Some(99),
            num_cases: 10,
            strategies: rows
                .iter()
                .map(|&(s, h)| StrategySummary {
                    strategy: s,
                    normalization: Normalization::Symmetric,
                    mean: [("hr@10".to_string(), h), ("ndcg@10".to_string(), h / 2.0)].into(),
                    std: BTreeMap::new(),
                    stderr: BTreeMap::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn bold_maxima_and_csv_parity() {
        let a = summary(Strategy::Mean, &[(Strategy::Mean, 0.5), (Strategy::Navip, 0.52)]);
        let runs = [("a".to_string(), &a)];
        let table = render_summaries(&runs, Segment::Overall, Emit::Table);
        assert!(table.contains("**0.5200**"));
        assert!(table.contains("mean/navip"));
        assert!(!table.contains("**0.5000**"));
        let csv = render_summaries(&runs, Segment::Overall, Emit::Csv);
        assert_eq!(csv, "train/eval,HR@10,NDCG@10\nmean/mean,0.5000,0.2500\nmean/navip,0.5200,0.2600\n");
    }

    #[test]
    fn single_row_has_no_bold() {
        let a = summary(Strategy::Navip, &[(Strategy::Navip, 0.5)]);
        let table = render_summaries(&[("a".to_string(), &a)], Segment::Overall, Emit::Table);
        assert!(!table.contains("**"));
        assert!(table.contains("navip/navip"));
    }

    #[test]
    fn colliding_labels_get_run_prefix() {
        let a = summary(Strategy::Mean, &[(Strategy::Mean, 0.5)]);
        let b = summary(Strategy::Mean, &[(Strategy::Mean, 0.6)]);
        let csv = render_summaries(&[("r1".into(), &a), ("r2".into(), &b)], Segment::Overall, Emit::Csv);
        assert!(csv.contains("r1:mean/mean,0.5000"));
        assert!(csv.contains("r2:mean/mean,0.6000"));
    }
}
