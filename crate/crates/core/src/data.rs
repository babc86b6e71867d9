//! Interaction log ingestion, minimum-degree filtering and pseudo-unbiased
//! train / validation / test splitting.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propensity::PropensityTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    /// `user item [rating] [timestamp]`, whitespace separated, `#` comments.
    TsvTriplet,
    /// The four-column tab-separated `u.data` layout.
    Movielens100k,
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputFormat::TsvTriplet => "tsv_triplet",
            InputFormat::Movielens100k => "movielens_100k",
        })
    }
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "tsv_triplet" | "tsv" => Ok(InputFormat::TsvTriplet),
            "movielens_100k" | "ml100k" | "ml_100k" => Ok(InputFormat::Movielens100k),
            other => Err(Error::Config(format!(
                "unknown input format '{other}' (expected tsv_triplet or movielens_100k)"
            ))),
        }
    }
}

/// One observed interaction with raw identifiers. Ratings are discarded:
/// every observation counts as a positive.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
}

pub fn load_interactions(path: &Path, format: InputFormat) -> Result<Vec<RawInteraction>> {
    let file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    parse_interactions(BufReader::new(file), format, path)
}

pub fn parse_interactions<R: BufRead>(reader: R, format: InputFormat, path: &Path) -> Result<Vec<RawInteraction>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        match format {
            InputFormat::TsvTriplet => {
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let fields: Vec<&str> = trimmed.split_whitespace().collect();
                if !(2..=4).contains(&fields.len()) {
                    return Err(err(format!("expected 2 to 4 fields, found {}", fields.len())));
                }
                if let Some(r) = fields.get(2) {
                    r.parse::<f64>().map_err(|_| err(format!("rating '{r}' is not a number")))?;
                }
                if let Some(t) = fields.get(3) {
                    t.parse::<i64>().map_err(|_| err(format!("timestamp '{t}' is not an integer")))?;
                }
                out.push(RawInteraction {
                    user: fields[0].to_string(),
                    item: fields[1].to_string(),
                });
            }
            InputFormat::Movielens100k => {
                if line.trim().is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
                if fields.len() != 4 {
                    return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
                }
                for (name, v) in ["user", "item", "rating", "timestamp"].iter().zip(&fields) {
                    v.parse::<u64>()
                        .map_err(|_| err(format!("{name} '{v}' is not a nonnegative integer")))?;
                }
                out.push(RawInteraction {
                    user: fields[0].to_string(),
                    item: fields[1].to_string(),
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(out)
}

/// Dense index <-> raw identifier mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn from_raw(raw: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(raw.len());
        for (k, id) in raw.iter().enumerate() {
            if index.insert(id.clone(), k).is_some() {
                return Err(Error::Config(format!("duplicate raw id '{id}'")));
            }
        }
        Ok(Self { raw, index })
    }

    fn intern(&mut self, id: &str) -> usize {
        if let Some(&k) = self.index.get(id) {
            return k;
        }
        let k = self.raw.len();
        self.raw.push(id.to_string());
        self.index.insert(id.to_string(), k);
        k
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw(&self, dense: usize) -> &str {
        &self.raw[dense]
    }

    pub fn raw_ids(&self) -> &[String] {
        &self.raw
    }

    pub fn dense(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredInteractions {
    pub users: IdMap,
    pub items: IdMap,
    /// Unique dense `(user, item)` pairs in first-appearance order.
    pub edges: Vec<(usize, usize)>,
}

/// Repeatedly drops users and items with fewer than `threshold` distinct
/// interactions until none remain, then assigns dense ids by first appearance.
pub fn filter_min_degree(raw: &[RawInteraction], threshold: usize) -> Result<FilteredInteractions> {
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut seen = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    for r in raw {
        let p = (users.intern(&r.user), items.intern(&r.item));
        if seen.insert(p) {
            pairs.push(p);
        }
    }

    loop {
        let mut user_deg = vec![0usize; users.len()];
        let mut item_deg = vec![0usize; items.len()];
        for &(u, i) in &pairs {
            user_deg[u] += 1;
            item_deg[i] += 1;
        }
        let before = pairs.len();
        pairs.retain(|&(u, i)| user_deg[u] >= threshold && item_deg[i] >= threshold);
        if pairs.len() == before {
            break;
        }
    }
    if pairs.is_empty() {
        return Err(Error::FilteredEmpty(threshold));
    }

    let mut dense_users = IdMap::default();
    let mut dense_items = IdMap::default();
    let edges = pairs
        .iter()
        .map(|&(u, i)| (dense_users.intern(users.raw(u)), dense_items.intern(items.raw(i))))
        .collect();
    Ok(FilteredInteractions {
        users: dense_users,
        items: dense_items,
        edges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_frac: 0.05,
            val_frac: 0.05,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<(usize, usize)>,
    pub validation: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    /// Held-out draws in sampling order, before cold-start repair.
    pub test_drawn: Vec<(usize, usize)>,
    pub validation_drawn: Vec<(usize, usize)>,
    pub repaired_test: usize,
    pub repaired_validation: usize,
}

/// Indices of `k` items drawn sequentially without replacement, each draw
/// picking a remaining index with probability proportional to its weight.
///
/// Uses exponential keys `ln(U) / w` (Efraimidis-Spirakis); sorting by key
/// reproduces the sequential draw order exactly in distribution.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(idx, &w)| {
            let u: f64 = 1.0 - rng.random::<f64>();
            (u.ln() / w, idx)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, idx)| idx).collect()
}

/// Splits `edges` into train / validation / test with held-out draws weighted
/// by `1 / p_i`, where `p_i` is the relative popularity of the item over all
/// of `edges`. Held-out interactions whose user or item would be absent from
/// train are moved back to train.
pub fn pseudo_unbiased_split(edges: &[(usize, usize)], num_items: usize, config: &SplitConfig) -> Result<Split> {
    for (name, f) in [("test", config.test_frac), ("validation", config.val_frac)] {
        if !(f > 0.0 && f < 0.5) {
            return Err(Error::Config(format!("{name} fraction {f} outside (0, 0.5)")));
        }
    }
    let mut counts = vec![0usize; num_items];
    for &(_, i) in edges {
        if i >= num_items {
            return Err(Error::NodeOutOfRange {
                side: "item",
                index: i,
                len: num_items,
            });
        }
        counts[i] += 1;
    }
    let table = PropensityTable::<f64>::from_item_counts(&counts);
    let total = edges.len();
    let n_test = (config.test_frac * total as f64).round() as usize;
    let n_val = (config.val_frac * total as f64).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let weights: Vec<f64> = edges.iter().map(|&(_, i)| table.inverse_weight(i)).collect();
    let test_idx = weighted_sample_without_replacement(&weights, n_test, &mut rng);

    let mut taken = vec![false; total];
    test_idx.iter().for_each(|&e| taken[e] = true);
    let remaining: Vec<usize> = (0..total).filter(|&e| !taken[e]).collect();
    let rem_weights: Vec<f64> = remaining.iter().map(|&e| weights[e]).collect();
    rng.set_stream(1);
    let val_idx: Vec<usize> = weighted_sample_without_replacement(&rem_weights, n_val, &mut rng)
        .into_iter()
        .map(|k| remaining[k])
        .collect();
    val_idx.iter().for_each(|&e| taken[e] = true);

    let num_users = edges.iter().map(|&(u, _)| u + 1).max().unwrap_or(0);
    let mut user_in_train = vec![false; num_users];
    let mut item_in_train = vec![false; num_items];
    let mut train: Vec<(usize, usize)> = Vec::with_capacity(total);
    for (e, &(u, i)) in edges.iter().enumerate() {
        if !taken[e] {
            train.push((u, i));
            user_in_train[u] = true;
            item_in_train[i] = true;
        }
    }

    let mut repair = |drawn: &[usize], train: &mut Vec<(usize, usize)>| {
        let mut kept = Vec::with_capacity(drawn.len());
        let mut moved = 0;
        for &e in drawn {
            let (u, i) = edges[e];
            if user_in_train[u] && item_in_train[i] {
                kept.push((u, i));
            } else {
                train.push((u, i));
                user_in_train[u] = true;
                item_in_train[i] = true;
                moved += 1;
            }
        }
        (kept, moved)
    };
    let (mut test, repaired_test) = repair(&test_idx, &mut train);
    let (mut validation, repaired_validation) = repair(&val_idx, &mut train);

    train.sort_unstable();
    test.sort_unstable();
    validation.sort_unstable();
    Ok(Split {
        train,
        validation,
        test,
        test_drawn: test_idx.iter().map(|&e| edges[e]).collect(),
        validation_drawn: val_idx.iter().map(|&e| edges[e]).collect(),
        repaired_test,
        repaired_validation,
    })
}

/// Provenance recorded next to a split bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub source: String,
    pub format: InputFormat,
    pub min_degree: usize,
    pub split: SplitConfig,
    pub num_raw_interactions: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub num_train: usize,
    pub num_validation: usize,
    pub num_test: usize,
    pub test_drawn: usize,
    pub validation_drawn: usize,
    pub repaired_test: usize,
    pub repaired_validation: usize,
    /// Arguments that reproduce the bundle.
    #[serde(default)]
    pub command: Vec<String>,
}

/// A prepared dataset: id maps plus the three splits in dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub users: IdMap,
    pub items: IdMap,
    pub train: Vec<(usize, usize)>,
    pub validation: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub manifest: SplitManifest,
}

impl Dataset {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    /// Loads, filters and splits in one pass.
    pub fn prepare(path: &Path, format: InputFormat, min_degree: usize, split: &SplitConfig) -> Result<Self> {
        let raw = load_interactions(path, format)?;
        let filtered = filter_min_degree(&raw, min_degree)?;
        let s = pseudo_unbiased_split(&filtered.edges, filtered.items.len(), split)?;
        let manifest = SplitManifest {
            source: path.display().to_string(),
            format,
            min_degree,
            split: *split,
            num_raw_interactions: raw.len(),
            num_users: filtered.users.len(),
            num_items: filtered.items.len(),
            num_interactions: filtered.edges.len(),
            num_train: s.train.len(),
            num_validation: s.validation.len(),
            num_test: s.test.len(),
            test_drawn: s.test_drawn.len(),
            validation_drawn: s.validation_drawn.len(),
            repaired_test: s.repaired_test,
            repaired_validation: s.repaired_validation,
            command: Vec::new(),
        };
        Ok(Self {
            users: filtered.users,
            items: filtered.items,
            train: s.train,
            validation: s.validation,
            test: s.test,
            manifest,
        })
    }

    /// Writes `train.tsv`, `val.tsv`, `test.tsv`, `user_ids.tsv`,
    /// `item_ids.tsv` and `manifest.json` into `dir`.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_pairs(&dir.join("train.tsv"), &self.train)?;
        write_pairs(&dir.join("val.tsv"), &self.validation)?;
        write_pairs(&dir.join("test.tsv"), &self.test)?;
        write_ids(&dir.join("user_ids.tsv"), &self.users)?;
        write_ids(&dir.join("item_ids.tsv"), &self.items)?;
        let mut json = serde_json::to_string_pretty(&self.manifest)?;
        json.push('\n');
        fs::write(dir.join("manifest.json"), json)?;
        Ok(())
    }

    pub fn read_bundle(dir: &Path) -> Result<Self> {
        let manifest: SplitManifest = serde_json::from_str(&read_file(&dir.join("manifest.json"))?)?;
        let users = read_ids(&dir.join("user_ids.tsv"))?;
        let items = read_ids(&dir.join("item_ids.tsv"))?;
        let train = read_pairs(&dir.join("train.tsv"), users.len(), items.len())?;
        let validation = read_pairs(&dir.join("val.tsv"), users.len(), items.len())?;
        let test = read_pairs(&dir.join("test.tsv"), users.len(), items.len())?;
        Ok(Self {
            users,
            items,
            train,
            validation,
            test,
            manifest,
        })
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_pairs(path: &Path, pairs: &[(usize, usize)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (u, i) in pairs {
        writeln!(w, "{u}\t{i}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_ids(path: &Path, ids: &IdMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, raw) in ids.raw_ids().iter().enumerate() {
        writeln!(w, "{raw}\t{k}")?;
    }
    w.flush()?;
    Ok(())
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        message: message.into(),
    }
}

fn read_pairs(path: &Path, num_users: usize, num_items: usize) -> Result<Vec<(usize, usize)>> {
    let text = read_file(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(u), Some(i), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_error(path, idx + 1, "expected two tab-separated indices"));
        };
        let u: usize = u.parse().map_err(|_| parse_error(path, idx + 1, format!("bad user index '{u}'")))?;
        let i: usize = i.parse().map_err(|_| parse_error(path, idx + 1, format!("bad item index '{i}'")))?;
        if u >= num_users || i >= num_items {
            return Err(parse_error(path, idx + 1, format!("pair ({u}, {i}) out of range")));
        }
        out.push((u, i));
    }
    Ok(out)
}

fn read_ids(path: &Path) -> Result<IdMap> {
    let text = read_file(path)?;
    let mut raw = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let Some((id, k)) = line.split_once('\t') else {
            return Err(parse_error(path, idx + 1, "expected raw_id<TAB>dense_index"));
        };
        if k.parse::<usize>().ok() != Some(raw.len()) {
            return Err(parse_error(path, idx + 1, format!("dense index '{k}' out of sequence")));
        }
        raw.push(id.to_string());
    }
    IdMap::from_raw(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, format: InputFormat) -> Result<Vec<RawInteraction>> {
        parse_interactions(text.as_bytes(), format, Path::new("mem"))
    }

    #[test]
    fn parses_movielens_line() {
        let r = parse("42\t7\t5\t881250949\n", InputFormat::Movielens100k).unwrap();
        assert_eq!(r, vec![RawInteraction { user: "42".into(), item: "7".into() }]);
    }

    #[test]
    fn ratings_are_binarized() {
        let r = parse("1\t2\t1\t10\n1\t3\t5\t11\n", InputFormat::Movielens100k).unwrap();
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn triplets_with_comments() {
        let text = "# header\nalice song1 4.5\n\nbob song2\ncarol song1 3 1700000000\n";
        let r = parse(text, InputFormat::TsvTriplet).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[1].item, "song2");
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        match parse("1\t2\t3\t4\n1\t2\n", InputFormat::Movielens100k) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse("a b c d e\n", InputFormat::TsvTriplet) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse("a b five\n", InputFormat::TsvTriplet) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("# only\n", InputFormat::TsvTriplet), Err(Error::EmptyInput(_))));
    }

    fn raw(pairs: &[(usize, usize)]) -> Vec<RawInteraction> {
        pairs
            .iter()
            .map(|&(u, i)| RawInteraction {
                user: format!("u{u}"),
                item: format!("i{i}"),
            })
            .collect()
    }

    #[test]
    fn below_threshold_is_an_error() {
        let pairs: Vec<_> = (0..9).map(|i| (0, i)).collect();
        assert!(matches!(filter_min_degree(&raw(&pairs), 10), Err(Error::FilteredEmpty(10))));
    }

    #[test]
    fn complete_block_at_threshold_survives() {
        let pairs: Vec<_> = (0..10).flat_map(|u| (0..10).map(move |i| (u, i))).collect();
        let f = filter_min_degree(&raw(&pairs), 10).unwrap();
        assert_eq!(f.edges.len(), 100);
        assert_eq!(f.users.len(), 10);
        assert_eq!(f.users.raw(0), "u0");
    }

    #[test]
    fn filtering_iterates_to_a_fixed_point() {
        // 3x3 complete block plus a user with 3 items, one of which only it holds.
        // Threshold 3: item i9 (degree 1) goes, then u9 falls to 2 and goes too.
        let mut pairs: Vec<_> = (0..3).flat_map(|u| (0..3).map(move |i| (u, i))).collect();
        pairs.extend([(9, 0), (9, 1), (9, 9)]);
        let f = filter_min_degree(&raw(&pairs), 3).unwrap();
        assert_eq!(f.edges.len(), 9);
        assert!(f.users.dense("u9").is_none());
        assert!(f.items.dense("i9").is_none());
    }

    #[test]
    fn duplicates_are_binarized() {
        let mut pairs: Vec<_> = (0..2).flat_map(|u| (0..2).map(move |i| (u, i))).collect();
        pairs.push((0, 0));
        let f = filter_min_degree(&raw(&pairs), 2).unwrap();
        assert_eq!(f.edges.len(), 4);
    }

    fn block(users: usize, items: usize) -> Vec<(usize, usize)> {
        (0..users).flat_map(|u| (0..items).map(move |i| (u, i))).collect()
    }

    #[test]
    fn split_partitions_and_avoids_cold_start() {
        let mut edges = block(40, 30);
        edges.retain(|&(u, i)| (u * 13 + i * 7) % 5 != 0 || i == u % 30);
        let cfg = SplitConfig { test_frac: 0.1, val_frac: 0.1, seed: 3 };
        let s = pseudo_unbiased_split(&edges, 30, &cfg).unwrap();
        let mut all: Vec<_> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        let mut expected = edges.clone();
        expected.sort_unstable();
        assert_eq!(all, expected);
        for &(u, i) in s.validation.iter().chain(&s.test) {
            assert!(s.train.iter().any(|&(tu, _)| tu == u));
            assert!(s.train.iter().any(|&(_, ti)| ti == i));
        }
        assert_eq!(s.test.len() + s.repaired_test, (0.1 * edges.len() as f64).round() as usize);
        assert_eq!(s, pseudo_unbiased_split(&edges, 30, &cfg).unwrap());
    }

    #[test]
    fn uniform_popularity_draw_counts() {
        let edges = block(100, 100);
        let cfg = SplitConfig { test_frac: 0.05, val_frac: 0.05, seed: 9 };
        let s = pseudo_unbiased_split(&edges, 100, &cfg).unwrap();
        assert_eq!(s.test_drawn.len(), 500);
        assert_eq!(s.validation_drawn.len(), 500);
        assert_eq!(s.repaired_test + s.repaired_validation, 0);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let edges = block(3, 3);
        for (t, v) in [(0.0, 0.1), (0.5, 0.1), (0.1, -0.1)] {
            let cfg = SplitConfig { test_frac: t, val_frac: v, seed: 0 };
            assert!(pseudo_unbiased_split(&edges, 3, &cfg).is_err());
        }
    }

    /// Exact inclusion probability of the single rare interaction under
    /// sequential weighted sampling of `k` draws from `n_pop` unit-weight
    /// interactions and one interaction of weight `w`.
    fn rare_inclusion_oracle(n_pop: usize, w: f64, k: usize) -> f64 {
        let mut p_not_yet = 1.0;
        let mut included = 0.0;
        for draw in 0..k {
            let remaining_pop = (n_pop - draw) as f64;
            let p_rare = w / (w + remaining_pop);
            included += p_not_yet * p_rare;
            p_not_yet *= 1.0 - p_rare;
        }
        included
    }

    #[test]
    fn sequential_sampling_matches_exact_inclusion_probability() {
        let trials = 20_000;
        let weights: Vec<f64> = std::iter::once(10.0).chain(std::iter::repeat_n(1.0, 100)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut hits = 0usize;
        for _ in 0..trials {
            if weighted_sample_without_replacement(&weights, 5, &mut rng).contains(&0) {
                hits += 1;
            }
        }
        let p = rare_inclusion_oracle(100, 10.0, 5);
        let observed = hits as f64 / trials as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((observed - p).abs() < 4.0 * sigma, "observed {observed}, exact {p}");
    }

    #[test]
    fn inclusion_frequency_ranks_like_inverse_propensity() {
        // items with degrees 1, 4, 9, 16, 25, 36 -> weights 6, 3, 2, 1.5, 1.2, 1
        let degrees = [1usize, 4, 9, 16, 25, 36];
        let mut edges = Vec::new();
        let mut user = 0;
        for (i, &d) in degrees.iter().enumerate() {
            for _ in 0..d {
                edges.push((user, i));
                user += 1;
            }
        }
        let cfg = |seed| SplitConfig { test_frac: 0.02, val_frac: 0.02, seed };
        let mut freq = vec![0.0; degrees.len()];
        for seed in 0..3000 {
            let s = pseudo_unbiased_split(&edges, degrees.len(), &cfg(seed)).unwrap();
            for &(_, i) in &s.test_drawn {
                freq[i] += 1.0 / degrees[i] as f64;
            }
        }
        let weights: Vec<f64> = degrees.iter().map(|&d| (36.0 / d as f64).sqrt()).collect();
        assert!(spearman(&weights, &freq) > 0.99, "{freq:?}");
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let rank = |x: &[f64]| {
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
            let mut r = vec![0.0; x.len()];
            for (pos, &i) in idx.iter().enumerate() {
                r[i] = pos as f64;
            }
            r
        };
        let (ra, rb) = (rank(a), rank(b));
        let n = a.len() as f64;
        let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("log.tsv");
        let mut text = String::new();
        for u in 0..12 {
            for i in 0..12 {
                if (u + i) % 4 != 0 {
                    text.push_str(&format!("user{u} item{i} 1\n"));
                }
            }
        }
        fs::write(&src, text).unwrap();
        let split = SplitConfig { test_frac: 0.1, val_frac: 0.1, seed: 5 };
        let ds = Dataset::prepare(&src, InputFormat::TsvTriplet, 3, &split).unwrap();
        let out = dir.path().join("bundle");
        ds.write_bundle(&out).unwrap();
        let back = Dataset::read_bundle(&out).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.manifest.num_train + back.manifest.num_validation + back.manifest.num_test, ds.manifest.num_interactions);
    }
}
