//! HR@k / NDCG@k with one held-out positive ranked against sampled negatives.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{Map, Value};

use crate::aggregation::{Normalization, Strategy};
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::model::FinalEmbeddings;
use crate::scalar::Scalar;

pub const DEFAULT_K_LIST: [usize; 3] = [5, 10, 20];
pub const DEFAULT_NUM_NEGATIVES: usize = 99;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub k_list: Vec<usize>,
    /// `None` ranks against every eligible item.
    pub num_negatives: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_list: DEFAULT_K_LIST.to_vec(),
            num_negatives: Some(DEFAULT_NUM_NEGATIVES),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub hr_head: BTreeMap<usize, f64>,
    pub ndcg_head: BTreeMap<usize, f64>,
    pub hr_tail: BTreeMap<usize, f64>,
    pub ndcg_tail: BTreeMap<usize, f64>,
    pub num_cases: usize,
    pub num_head_cases: usize,
    pub num_tail_cases: usize,
    /// Cases that had fewer eligible negatives than requested.
    pub shortfall_cases: usize,
    pub seed: u64,
    pub strategy: Option<Strategy>,
    pub normalization: Option<Normalization>,
}

/// 1-based rank of `scores[positive]`; the positive loses every tie.
pub fn tie_rank<T: PartialOrd>(scores: &[T], positive: usize) -> usize {
    let target = &scores[positive];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, s)| j != positive && s >= target)
        .count()
}

/// Items in the top and bottom `ceil(0.1 N)` by training degree (ties broken
/// by ascending index). Both lists are returned in ranking order.
pub fn head_tail_split(graph: &InteractionGraph) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = graph.num_items();
    if n < 10 {
        return Err(Error::Config(format!("head/tail split needs at least 10 items, got {n}")));
    }
    let deg = graph.item_degree();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| deg[b].cmp(&deg[a]).then(a.cmp(&b)));
    let size = n.div_ceil(10);
    Ok((order[..size].to_vec(), order[n - size..].to_vec()))
}

/// Evaluates `cases` against the final embeddings. Negatives exclude the
/// user's training items and every positive in `cases`.
pub fn evaluate<T: Scalar>(
    final_emb: &FinalEmbeddings<T>,
    train: &InteractionGraph,
    cases: &[(usize, usize)],
    config: &EvalConfig,
) -> Result<EvalReport> {
    evaluate_excluding(final_emb, train, cases, &[], config)
}

/// As [`evaluate`], additionally excluding `known_positives` (e.g. the other
/// held-out split) from the negative pool.
pub fn evaluate_excluding<T: Scalar>(
    final_emb: &FinalEmbeddings<T>,
    train: &InteractionGraph,
    cases: &[(usize, usize)],
    known_positives: &[(usize, usize)],
    config: &EvalConfig,
) -> Result<EvalReport> {
    if final_emb.num_users() != train.num_users() || final_emb.num_items() != train.num_items() {
        return Err(Error::DimensionMismatch {
            expected: train.num_nodes(),
            actual: final_emb.matrix().rows(),
        });
    }
    evaluate_scores(|u, i| final_emb.score(u, i).as_f64(), train, cases, known_positives, config)
}

/// Core evaluation over an arbitrary scoring function.
pub fn evaluate_scores<F>(
    score: F,
    train: &InteractionGraph,
    cases: &[(usize, usize)],
    known_positives: &[(usize, usize)],
    config: &EvalConfig,
) -> Result<EvalReport>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let m = train.num_users();
    let n = train.num_items();
    if config.k_list.is_empty() || config.k_list.contains(&0) {
        return Err(Error::Config("k list must be nonempty and positive".into()));
    }
    for &(u, i) in cases.iter().chain(known_positives) {
        if u >= m || i >= n {
            return Err(Error::NodeOutOfRange {
                side: if u >= m { "user" } else { "item" },
                index: if u >= m { u } else { i },
                len: if u >= m { m } else { n },
            });
        }
    }

    let mut excluded: Vec<Vec<usize>> = (0..m).map(|u| train.user_items(u).to_vec()).collect();
    for &(u, i) in cases.iter().chain(known_positives) {
        excluded[u].push(i);
    }
    for row in &mut excluded {
        row.sort_unstable();
        row.dedup();
    }

    let segments = if n >= 10 {
        let (head, tail) = head_tail_split(train)?;
        let mut seg = vec![Segment::Middle; n];
        head.iter().for_each(|&i| seg[i] = Segment::Head);
        tail.iter().for_each(|&i| seg[i] = Segment::Tail);
        Some(seg)
    } else {
        None
    };

    let outcomes: Vec<(usize, bool)> = cases
        .par_iter()
        .enumerate()
        .map(|(idx, &(u, pos))| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(idx as u64);
            let (negatives, short) = sample_negatives(&excluded[u], n, config.num_negatives, &mut rng);
            let target = score(u, pos);
            let above = negatives.iter().filter(|&&j| score(u, j) >= target).count();
            (1 + above, short)
        })
        .collect();

    let mut acc = Accumulator::new(&config.k_list);
    let mut head = Accumulator::new(&config.k_list);
    let mut tail = Accumulator::new(&config.k_list);
    let mut shortfall_cases = 0;
    for (&(_, pos), &(rank, short)) in cases.iter().zip(&outcomes) {
        acc.add(rank);
        match segments.as_ref().map(|s| s[pos]) {
            Some(Segment::Head) => head.add(rank),
            Some(Segment::Tail) => tail.add(rank),
            _ => {}
        }
        shortfall_cases += short as usize;
    }

    let (hr, ndcg) = acc.means();
    let (hr_head, ndcg_head) = head.means();
    let (hr_tail, ndcg_tail) = tail.means();
    Ok(EvalReport {
        hr,
        ndcg,
        hr_head,
        ndcg_head,
        hr_tail,
        ndcg_tail,
        num_cases: acc.cases,
        num_head_cases: head.cases,
        num_tail_cases: tail.cases,
        shortfall_cases,
        seed: config.seed,
        strategy: None,
        normalization: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Segment {
    Head,
    Middle,
    Tail,
}

/// Distinct uniform negatives outside `excluded` (sorted). Returns the
/// negatives and whether fewer than requested were available.
fn sample_negatives(
    excluded: &[usize],
    num_items: usize,
    requested: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, bool) {
    let eligible = num_items - excluded.len();
    let all = || {
        (0..num_items)
            .filter(|i| excluded.binary_search(i).is_err())
            .collect::<Vec<_>>()
    };
    match requested {
        None => (all(), false),
        Some(k) if k >= eligible => (all(), k > eligible),
        Some(k) => {
            let mut chosen = Vec::with_capacity(k);
            while chosen.len() < k {
                let cand = rng.random_range(0..num_items);
                if excluded.binary_search(&cand).is_err() && !chosen.contains(&cand) {
                    chosen.push(cand);
                }
            }
            (chosen, false)
        }
    }
}

struct Accumulator<'a> {
    k_list: &'a [usize],
    hits: Vec<f64>,
    gains: Vec<f64>,
    cases: usize,
}

impl<'a> Accumulator<'a> {
    fn new(k_list: &'a [usize]) -> Self {
        Self {
            k_list,
            hits: vec![0.0; k_list.len()],
            gains: vec![0.0; k_list.len()],
            cases: 0,
        }
    }

    fn add(&mut self, rank: usize) {
        self.cases += 1;
        let gain = 1.0 / ((rank + 1) as f64).log2();
        for (j, &k) in self.k_list.iter().enumerate() {
            if rank <= k {
                self.hits[j] += 1.0;
                self.gains[j] += gain;
            }
        }
    }

    fn means(&self) -> (BTreeMap<usize, f64>, BTreeMap<usize, f64>) {
        if self.cases == 0 {
            return (BTreeMap::new(), BTreeMap::new());
        }
        let c = self.cases as f64;
        let hr = self.k_list.iter().zip(&self.hits).map(|(&k, &h)| (k, h / c)).collect();
        let ndcg = self.k_list.iter().zip(&self.gains).map(|(&k, &g)| (k, g / c)).collect();
        (hr, ndcg)
    }
}

impl EvalReport {
    pub fn with_operator(mut self, strategy: Strategy, normalization: Normalization) -> Self {
        self.strategy = Some(strategy);
        self.normalization = Some(normalization);
        self
    }

    /// Flat JSON object: `hr@5`, `ndcg@5`, `hr_head@5`, ..., plus counts and metadata.
    pub fn to_flat_json(&self) -> Value {
        let mut obj = Map::new();
        let groups = [
            ("hr", &self.hr),
            ("ndcg", &self.ndcg),
            ("hr_head", &self.hr_head),
            ("ndcg_head", &self.ndcg_head),
            ("hr_tail", &self.hr_tail),
            ("ndcg_tail", &self.ndcg_tail),
        ];
        for (name, map) in groups {
            for (k, v) in map {
                obj.insert(format!("{name}@{k}"), Value::from(*v));
            }
        }
        obj.insert("num_cases".into(), Value::from(self.num_cases));
        obj.insert("num_head_cases".into(), Value::from(self.num_head_cases));
        obj.insert("num_tail_cases".into(), Value::from(self.num_tail_cases));
        obj.insert("shortfall_cases".into(), Value::from(self.shortfall_cases));
        obj.insert("seed".into(), Value::from(self.seed));
        obj.insert(
            "strategy".into(),
            self.strategy.map_or(Value::Null, |s| Value::from(s.name())),
        );
        obj.insert(
            "normalization".into(),
            self.normalization.map_or(Value::Null, |n| Value::from(n.name())),
        );
        Value::Object(obj)
    }

    pub fn from_flat_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Config("report JSON must be an object".into()))?;
        let mut report = EvalReport::default();
        let count = |key: &str| obj.get(key).and_then(Value::as_u64).unwrap_or(0);
        for (key, v) in obj {
            let Some((name, k)) = key.split_once('@') else { continue };
            let (Ok(k), Some(v)) = (k.parse::<usize>(), v.as_f64()) else {
                return Err(Error::Config(format!("bad metric entry '{key}'")));
            };
            let map = match name {
                "hr" => &mut report.hr,
                "ndcg" => &mut report.ndcg,
                "hr_head" => &mut report.hr_head,
                "ndcg_head" => &mut report.ndcg_head,
                "hr_tail" => &mut report.hr_tail,
                "ndcg_tail" => &mut report.ndcg_tail,
                _ => continue,
            };
            map.insert(k, v);
        }
        report.num_cases = count("num_cases") as usize;
        report.num_head_cases = count("num_head_cases") as usize;
        report.num_tail_cases = count("num_tail_cases") as usize;
        report.shortfall_cases = count("shortfall_cases") as usize;
        report.seed = count("seed");
        report.strategy = obj.get("strategy").and_then(Value::as_str).map(str::parse).transpose()?;
        report.normalization = obj
            .get("normalization")
            .and_then(Value::as_str)
            .map(str::parse)
            .transpose()?;
        Ok(report)
    }
}

/// Column headers `HR@k...` then `NDCG@k...` for the given cutoffs.
pub fn metric_headers(k_list: &[usize]) -> Vec<String> {
    k_list
        .iter()
        .map(|k| format!("HR@{k}"))
        .chain(k_list.iter().map(|k| format!("NDCG@{k}")))
        .collect()
}

/// Values matching [`metric_headers`]; missing cutoffs read as NaN.
pub fn metric_values(hr: &BTreeMap<usize, f64>, ndcg: &BTreeMap<usize, f64>, k_list: &[usize]) -> Vec<f64> {
    k_list
        .iter()
        .map(|k| hr.get(k).copied().unwrap_or(f64::NAN))
        .chain(k_list.iter().map(|k| ndcg.get(k).copied().unwrap_or(f64::NAN)))
        .collect()
}

/// Aligned plain-text table. With `mark_best`, the per-column maximum is
/// wrapped in `**`.
pub fn render_table(label_header: &str, headers: &[String], rows: &[(String, Vec<f64>)], mark_best: bool) -> String {
    let best: Vec<f64> = (0..headers.len())
        .map(|c| rows.iter().map(|r| r.1[c]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(_, vals)| {
            vals.iter()
                .enumerate()
                .map(|(c, &v)| {
                    let s = format!("{v:.4}");
                    if mark_best && rows.len() > 1 && v == best[c] {
                        format!("**{s}**")
                    } else {
                        s
                    }
                })
                .collect()
        })
        .collect();
    let label_w = rows
        .iter()
        .map(|r| r.0.len())
        .chain([label_header.len()])
        .max()
        .unwrap_or(0);
    let widths: Vec<usize> = (0..headers.len())
        .map(|c| cells.iter().map(|r| r[c].len()).chain([headers[c].len()]).max().unwrap_or(0))
        .collect();

    let mut out = String::new();
    let line = |label: &str, vals: &[String]| {
        let mut s = format!("{label:<label_w$}");
        for (v, w) in vals.iter().zip(&widths) {
            s.push_str(&format!(" | {v:>w$}"));
        }
        s.push('\n');
        s
    };
    out.push_str(&line(label_header, headers));
    let rule: usize = label_w + widths.iter().map(|w| w + 3).sum::<usize>();
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for ((label, _), vals) in rows.iter().zip(&cells) {
        out.push_str(&line(label, vals));
    }
    out
}

/// CSV with the same numbers and precision as [`render_table`].
pub fn render_csv(label_header: &str, headers: &[String], rows: &[(String, Vec<f64>)]) -> String {
    let mut out = format!("{label_header},{}\n", headers.join(","));
    for (label, vals) in rows {
        let vals: Vec<String> = vals.iter().map(|v| format!("{v:.4}")).collect();
        out.push_str(&format!("{label},{}\n", vals.join(",")));
    }
    out
}
