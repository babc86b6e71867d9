//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Positional arguments select criteria by
//! number, e.g. `cargo test --test acceptance -- 1 3`.
//!
//! Criteria 2, 5, 6, 7 and 8 need `data/ml-100k/u.data` at the workspace
//! root (see `scripts/fetch_movielens.sh`).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use navip::data::{pseudo_unbiased_split, weighted_sample_without_replacement};
use navip::evaluation::evaluate_excluding;
use navip::training::{bpr_loss, ips_bpr_loss, train_with, Triple};
use navip::{
    AggregationOperator, Dataset, EmbeddingModel, EvalConfig, EvalReport, InputFormat, InteractionGraph, Matrix,
    Normalization, PropensityTable, SplitConfig, Strategy, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (usize, &'static str, fn() -> Check);

fn main() -> ExitCode {
    let selected: BTreeSet<usize> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [Criterion; 8] = [
        (1, "operator matches dense Laplacian oracle", criterion_1),
        (2, "random-walk rows are stochastic", criterion_2),
        (3, "analytic gradients match finite differences", criterion_3),
        (4, "metrics match brute-force ranking oracle", criterion_4),
        (5, "propensity recount and split statistics", criterion_5),
        (6, "MovieLens inference-time aggregation swap", criterion_6),
        (7, "train-and-infer strategy ordering", criterion_7),
        (8, "pipeline determinism", criterion_8),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} PASS [{secs:.1}s] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL [{secs:.1}s] {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, budget_secs: u64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < budget_secs as f64, || {
        format!("took {:.1}s, budget {budget_secs}s", elapsed.as_secs_f64())
    })
}

// ---------------------------------------------------------------------------
// Random instances and dense oracles

struct Instance {
    m: usize,
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng, max_users: usize, max_items: usize) -> Self {
        let m = rng.random_range(1..=max_users);
        let n = rng.random_range(1..=max_items);
        let density = rng.random_range(0.1..0.7);
        let mut set = BTreeSet::new();
        for u in 0..m {
            for i in 0..n {
                if rng.random_bool(density) {
                    set.insert((u, i));
                }
            }
        }
        for u in 0..m {
            if !set.iter().any(|&(a, _)| a == u) {
                set.insert((u, rng.random_range(0..n)));
            }
        }
        for i in 0..n {
            if !set.iter().any(|&(_, b)| b == i) {
                set.insert((rng.random_range(0..m), i));
            }
        }
        Self {
            m,
            n,
            edges: set.into_iter().collect(),
        }
    }

    fn graph(&self) -> InteractionGraph {
        InteractionGraph::build(&self.edges, self.m, self.n).unwrap()
    }

    /// `sqrt(deg(i) / max deg)` from a direct count of the edge list.
    fn propensity(&self) -> Vec<f64> {
        let mut deg = vec![0usize; self.n];
        for &(_, i) in &self.edges {
            deg[i] += 1;
        }
        let max = *deg.iter().max().unwrap() as f64;
        deg.iter().map(|&c| (c as f64 / max).sqrt()).collect()
    }

    /// Dense propagation matrix: Lambda with raw weights, normalized by its
    /// row sums D as D^-1 Lambda or D^-1/2 Lambda D^-1/2.
    fn dense_operator(&self, strategy: Strategy, norm: Normalization) -> Vec<Vec<f64>> {
        let p = self.propensity();
        let dim = self.m + self.n;
        let mut lambda = vec![vec![0.0; dim]; dim];
        for &(u, i) in &self.edges {
            let w = match strategy {
                Strategy::Mean => 1.0,
                Strategy::Propensity => p[i],
                Strategy::Navip => 1.0 / p[i],
            };
            lambda[u][self.m + i] = w;
            lambda[self.m + i][u] = w;
        }
        let d: Vec<f64> = lambda.iter().map(|r| r.iter().sum()).collect();
        (0..dim)
            .map(|a| {
                (0..dim)
                    .map(|b| match norm {
                        Normalization::RandomWalk => lambda[a][b] / d[a],
                        Normalization::Symmetric => lambda[a][b] / (d[a] * d[b]).sqrt(),
                    })
                    .collect()
            })
            .collect()
    }
}

fn combos() -> Vec<(Strategy, Normalization)> {
    Strategy::ALL
        .iter()
        .flat_map(|&s| Normalization::ALL.iter().map(move |&n| (s, n)))
        .collect()
}

fn dense_mul(a: &[Vec<f64>], x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..x[0].len())
                .map(|c| row.iter().zip(x).map(|(w, xr)| w * xr[c]).sum())
                .collect()
        })
        .collect()
}

fn to_rows(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn table_for(graph: &InteractionGraph) -> PropensityTable<f64> {
    PropensityTable::estimate(graph)
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for g in 0..50 {
        let inst = Instance::random(&mut rng, 15, 15);
        let graph = inst.graph();
        let table = table_for(&graph);
        let d = rng.random_range(1..=8);
        let x = random_matrix(&mut rng, inst.m + inst.n, d, 1.0);
        let xr = to_rows(&x);
        for (s, norm) in combos() {
            let op = AggregationOperator::build(&graph, Some(&table), s, norm).map_err(|e| e.to_string())?;
            let oracle = inst.dense_operator(s, norm);
            let dense = to_rows(&op.to_dense());
            let expected = dense_mul(&oracle, &xr);
            let got = to_rows(&op.propagate(&x).map_err(|e| e.to_string())?);
            for (a, b) in dense.iter().flatten().zip(oracle.iter().flatten()) {
                worst = worst.max((a - b).abs());
            }
            for (a, b) in got.iter().flatten().zip(expected.iter().flatten()) {
                worst = worst.max((a - b).abs());
            }
            ensure(worst <= 1e-9, || format!("graph {g} {s}/{norm}: deviation {worst:e}"))?;
        }
    }
    within(start.elapsed(), 10)?;
    Ok(format!("50 graphs x 6 operators, max entry deviation {worst:.2e} (tol 1e-9)"))
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut graphs: Vec<(String, InteractionGraph)> = (0..50)
        .map(|g| (format!("random graph {g}"), Instance::random(&mut rng, 15, 15).graph()))
        .collect();
    let ml = movielens()?;
    graphs.push(("MovieLens train".into(), ml.graph.clone()));
    graphs.push(("MovieLens full".into(), full_graph(&ml.dataset)));
    let mut worst: f64 = 0.0;
    for (name, graph) in &graphs {
        let table = table_for(graph);
        for s in [Strategy::Navip, Strategy::Mean] {
            let op = AggregationOperator::build(graph, Some(&table), s, Normalization::RandomWalk)
                .map_err(|e| e.to_string())?;
            for (a, sum) in op.row_sums().into_iter().enumerate() {
                worst = worst.max((sum - 1.0).abs());
                ensure((sum - 1.0).abs() <= 1e-9, || format!("{name} {s}: row {a} sums to {sum}"))?;
            }
        }
    }
    Ok(format!(
        "{} graphs incl. MovieLens (train and full), max |row sum - 1| = {worst:.2e}",
        graphs.len()
    ))
}

// ---------------------------------------------------------------------------

fn softplus_neg(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Loss recomputed from dense matrix powers.
fn dense_loss(
    oracle: &[Vec<f64>],
    e: &[Vec<f64>],
    depth: usize,
    m: usize,
    batch: &[Triple],
    weights: &[f64],
    l2: f64,
) -> f64 {
    let alpha = 1.0 / (depth + 1) as f64;
    let mut layer = e.to_vec();
    let mut fin: Vec<Vec<f64>> = e.iter().map(|r| r.iter().map(|v| alpha * v).collect()).collect();
    for _ in 0..depth {
        layer = dense_mul(oracle, &layer);
        for (f, l) in fin.iter_mut().zip(&layer) {
            for (a, b) in f.iter_mut().zip(l) {
                *a += alpha * b;
            }
        }
    }
    let b = batch.len() as f64;
    let mut data = 0.0;
    let mut reg = 0.0;
    for t in batch {
        let (fu, fp, fneg) = (&fin[t.user], &fin[m + t.pos], &fin[m + t.neg]);
        let x: f64 = (0..fu.len()).map(|c| fu[c] * (fp[c] - fneg[c])).sum();
        data += weights[t.pos] * softplus_neg(x);
        for r in [t.user, m + t.pos, m + t.neg] {
            reg += e[r].iter().map(|v| v * v).sum::<f64>();
        }
    }
    data / b + l2 * reg / (3.0 * b)
}

fn random_batch(rng: &mut ChaCha8Rng, graph: &InteractionGraph, size: usize) -> Vec<Triple> {
    let users: Vec<usize> = (0..graph.num_users())
        .filter(|&u| graph.user_items(u).len() < graph.num_items())
        .collect();
    (0..size)
        .map(|_| {
            let user = users[rng.random_range(0..users.len())];
            let items = graph.user_items(user);
            let pos = items[rng.random_range(0..items.len())];
            let neg = loop {
                let j = rng.random_range(0..graph.num_items());
                if !graph.has_edge(user, j) {
                    break j;
                }
            };
            Triple { user, pos, neg }
        })
        .collect()
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let combos = combos();
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut attempts = 0;
    let h = 1e-5;
    while done < 20 {
        attempts += 1;
        let inst = Instance::random(&mut rng, 5, 5);
        if inst.m + inst.n < 3 {
            continue;
        }
        let graph = inst.graph();
        if (0..inst.m).all(|u| graph.user_items(u).len() == inst.n) {
            continue;
        }
        let (strategy, norm) = combos[done % combos.len()];
        let d = rng.random_range(1..=4);
        let depth = rng.random_range(0..=3);
        let l2 = if done % 2 == 0 { 0.05 } else { 0.0 };
        let table = table_for(&graph);
        let op = AggregationOperator::build(&graph, Some(&table), strategy, norm).map_err(|e| e.to_string())?;
        let oracle = inst.dense_operator(strategy, norm);
        let e0 = random_matrix(&mut rng, inst.m + inst.n, d, 0.8);
        let size = rng.random_range(1..=6);
        let batch = random_batch(&mut rng, &graph, size);
        let p = inst.propensity();

        for ips in [false, true] {
            let weights: Vec<f64> = if ips { p.iter().map(|x| 1.0 / x).collect() } else { vec![1.0; inst.n] };
            let model = EmbeddingModel::from_embeddings(inst.m, inst.n, e0.clone()).unwrap().with_depth(depth);
            let fin = model.forward(&op).map_err(|e| e.to_string())?;
            let (loss, grad) = if ips {
                ips_bpr_loss(&model, &op, &fin, &batch, &table, l2)
            } else {
                bpr_loss(&model, &op, &fin, &batch, l2)
            }
            .map_err(|e| e.to_string())?;

            let base = to_rows(&e0);
            let oracle_loss = dense_loss(&oracle, &base, depth, inst.m, &batch, &weights, l2);
            ensure((loss - oracle_loss).abs() <= 1e-12 * oracle_loss.abs().max(1.0), || {
                format!("instance {done}: loss {loss} vs dense oracle {oracle_loss}")
            })?;
            for r in 0..base.len() {
                for c in 0..d {
                    let mut plus = base.clone();
                    plus[r][c] += h;
                    let mut minus = base.clone();
                    minus[r][c] -= h;
                    let fd = (dense_loss(&oracle, &plus, depth, inst.m, &batch, &weights, l2)
                        - dense_loss(&oracle, &minus, depth, inst.m, &batch, &weights, l2))
                        / (2.0 * h);
                    let g = grad[(r, c)];
                    let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                    worst = worst.max(rel);
                    ensure(rel < 1e-4, || {
                        format!(
                            "instance {done} ({strategy}/{norm}, K={depth}, d={d}, ips={ips}): entry ({r},{c}) analytic {g:e} vs numeric {fd:e}"
                        )
                    })?;
                }
            }
        }
        done += 1;
    }
    within(start.elapsed(), 30)?;
    Ok(format!(
        "20 instances ({attempts} drawn), BPR and IPS-BPR, all 6 operators, max relative error {worst:.2e} (tol 1e-4)"
    ))
}

// ---------------------------------------------------------------------------

struct RankCase {
    rank: usize,
    segment: Option<bool>,
}

/// Full ranking of every eligible item, recomputed from scratch.
fn brute_force_report(
    emb: &Matrix<f64>,
    m: usize,
    n: usize,
    train: &[(usize, usize)],
    cases: &[(usize, usize)],
    known: &[(usize, usize)],
    k_list: &[usize],
) -> EvalReport {
    let positives: BTreeSet<(usize, usize)> = train.iter().chain(cases).chain(known).copied().collect();
    let score = |u: usize, i: usize| -> f64 { emb.row(u).iter().zip(emb.row(m + i)).map(|(a, b)| a * b).sum() };

    let mut deg = vec![0usize; n];
    for &(_, i) in train {
        deg[i] += 1;
    }
    let mut by_pop: Vec<usize> = (0..n).collect();
    by_pop.sort_by_key(|&i| (std::cmp::Reverse(deg[i]), i));
    let size = n.div_ceil(10);
    let head: BTreeSet<usize> = by_pop[..size].iter().copied().collect();
    let tail: BTreeSet<usize> = by_pop[n - size..].iter().copied().collect();

    let ranked: Vec<RankCase> = cases
        .iter()
        .map(|&(u, pos)| {
            let s = score(u, pos);
            let rank = 1 + (0..n)
                .filter(|&j| !positives.contains(&(u, j)) && score(u, j) >= s)
                .count();
            let segment = if n < 10 {
                None
            } else if head.contains(&pos) {
                Some(true)
            } else if tail.contains(&pos) {
                Some(false)
            } else {
                None
            };
            RankCase { rank, segment }
        })
        .collect();

    let metrics = |sel: &dyn Fn(&RankCase) -> bool| {
        let chosen: Vec<usize> = ranked.iter().filter(|c| sel(c)).map(|c| c.rank).collect();
        let mut hr = BTreeMap::new();
        let mut ndcg = BTreeMap::new();
        if !chosen.is_empty() {
            for &k in k_list {
                let mut hits = 0.0;
                let mut gain = 0.0;
                for &r in &chosen {
                    if r <= k {
                        hits += 1.0;
                        gain += 1.0 / ((r + 1) as f64).log2();
                    }
                }
                hr.insert(k, hits / chosen.len() as f64);
                ndcg.insert(k, gain / chosen.len() as f64);
            }
        }
        (hr, ndcg, chosen.len())
    };
    let (hr, ndcg, num_cases) = metrics(&|_| true);
    let (hr_head, ndcg_head, num_head_cases) = metrics(&|c| c.segment == Some(true));
    let (hr_tail, ndcg_tail, num_tail_cases) = metrics(&|c| c.segment == Some(false));
    EvalReport {
        hr,
        ndcg,
        hr_head,
        ndcg_head,
        hr_tail,
        ndcg_tail,
        num_cases,
        num_head_cases,
        num_tail_cases,
        shortfall_cases: 0,
        seed: 0,
        strategy: None,
        normalization: None,
    }
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let k_list = vec![1, 5, 10, 20];
    let mut total_cases = 0;
    let mut instances = 0;
    while instances < 100 {
        let inst = Instance::random(&mut rng, 30, 200);
        let graph = inst.graph();
        let mut cases = Vec::new();
        let mut known = Vec::new();
        for u in 0..inst.m {
            for i in 0..inst.n {
                if !graph.has_edge(u, i) {
                    match rng.random_range(0..10) {
                        0 => cases.push((u, i)),
                        1 => known.push((u, i)),
                        _ => {}
                    }
                }
            }
        }
        if cases.is_empty() {
            continue;
        }
        let d = rng.random_range(1..=4);
        // Coarse values make score ties common.
        let quantized = instances % 2 == 0;
        let emb = Matrix::from_fn(inst.m + inst.n, d, |_, _| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if quantized {
                (v * 2.0).round() / 2.0
            } else {
                v
            }
        });
        let fin = navip::FinalEmbeddings::new(inst.m, emb.clone());
        let cfg = EvalConfig {
            k_list: k_list.clone(),
            num_negatives: None,
            seed: instances as u64,
        };
        let got = evaluate_excluding(&fin, &graph, &cases, &known, &cfg).map_err(|e| e.to_string())?;
        let mut want = brute_force_report(&emb, inst.m, inst.n, &inst.edges, &cases, &known, &k_list);
        want.seed = cfg.seed;
        ensure(got == want, || format!("instance {instances}: {got:?}\nvs oracle {want:?}"))?;

        let sampled = EvalConfig {
            num_negatives: Some(rng.random_range(1..=99)),
            ..cfg
        };
        let a = evaluate_excluding(&fin, &graph, &cases, &known, &sampled).map_err(|e| e.to_string())?;
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| evaluate_excluding(&fin, &graph, &cases, &known, &sampled))
            .map_err(|e| e.to_string())?;
        ensure(
            serde_json::to_vec(&a.to_flat_json()).unwrap() == serde_json::to_vec(&b.to_flat_json()).unwrap(),
            || format!("instance {instances}: sampled evaluation not reproducible"),
        )?;
        total_cases += cases.len();
        instances += 1;
    }
    Ok(format!(
        "100 instances, {total_cases} cases: full ranking identical to oracle; sampled mode bit-identical across runs and thread counts"
    ))
}

// ---------------------------------------------------------------------------

fn criterion_5() -> Check {
    let ml = movielens()?;

    // Independent recount straight from the raw file.
    let text = fs::read_to_string(movielens_path()).map_err(|e| e.to_string())?;
    let mut pairs: BTreeSet<(String, String)> = BTreeSet::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut cols = line.split('\t');
        pairs.insert((cols.next().unwrap().to_string(), cols.next().unwrap().to_string()));
    }
    loop {
        let mut du: HashMap<&str, usize> = HashMap::new();
        let mut di: HashMap<&str, usize> = HashMap::new();
        for (u, i) in &pairs {
            *du.entry(u).or_default() += 1;
            *di.entry(i).or_default() += 1;
        }
        let keep: BTreeSet<(String, String)> = pairs
            .iter()
            .filter(|(u, i)| du[u.as_str()] >= 10 && di[i.as_str()] >= 10)
            .cloned()
            .collect();
        if keep.len() == pairs.len() {
            break;
        }
        pairs = keep;
    }
    let users: BTreeSet<&str> = pairs.iter().map(|(u, _)| u.as_str()).collect();
    let mut full_counts: HashMap<&str, usize> = HashMap::new();
    for (_, i) in &pairs {
        *full_counts.entry(i).or_default() += 1;
    }
    ensure(users.len() == 943, || format!("recount keeps {} users, expected 943", users.len()))?;
    ensure(full_counts.len() == ml.dataset.num_items(), || "item count differs from recount".into())?;

    let recount_p = |counts: &HashMap<&str, usize>, raw: &str| -> f64 {
        let max = *counts.values().max().unwrap() as f64;
        (counts[raw] as f64 / max).sqrt()
    };
    let items = &ml.dataset.items;

    let mut full_deg = vec![0usize; items.len()];
    for &(_, i) in ml.dataset.train.iter().chain(&ml.dataset.validation).chain(&ml.dataset.test) {
        full_deg[i] += 1;
    }
    let full_table = PropensityTable::<f64>::from_item_counts(&full_deg);
    let train_table = table_for(&ml.graph);
    let mut train_counts: HashMap<&str, usize> = HashMap::new();
    for &(_, i) in &ml.dataset.train {
        *train_counts.entry(items.raw(i)).or_default() += 1;
    }
    let mut worst: f64 = 0.0;
    for i in 0..items.len() {
        let raw = items.raw(i);
        worst = worst.max((full_table.propensity(i) - recount_p(&full_counts, raw)).abs());
        worst = worst.max((train_table.propensity(i) - recount_p(&train_counts, raw)).abs());
    }
    ensure(worst <= 1e-15, || format!("propensity deviates from recount by {worst:e}"))?;

    // Two items with degrees 100 and 1: per-draw selection mass 10 : 1.
    let mut edges: Vec<(usize, usize)> = (0..100).map(|u| (u, 0)).collect();
    edges.push((0, 1));
    let trials = 1000u64;
    let single = SplitConfig {
        test_frac: 0.01,
        val_frac: 0.01,
        seed: 0,
    };
    let mut rare = 0u64;
    let mut popular = 0u64;
    for seed in 0..trials {
        let s = pseudo_unbiased_split(&edges, 2, &SplitConfig { seed, ..single }).map_err(|e| e.to_string())?;
        ensure(s.test_drawn.len() == 1, || format!("expected one test draw, got {}", s.test_drawn.len()))?;
        for &(_, i) in &s.test_drawn {
            if i == 1 {
                rare += 1;
            } else {
                popular += 1;
            }
        }
    }
    let rare_rate = rare as f64 / trials as f64;
    let pop_rate = popular as f64 / (trials as f64 * 100.0);
    let ratio = rare_rate / pop_rate;
    // Delta-method standard deviation of the ratio under the 10:1 hypothesis.
    let q = 10.0 / 110.0;
    let sd_rare = (q * (1.0 - q) / trials as f64).sqrt();
    let sigma = 100.0 / (1.0 - q).powi(2) * sd_rare;
    ensure((ratio - 10.0).abs() <= 3.0 * sigma, || {
        format!("per-draw ratio {ratio:.2}, expected 10 +- {:.2} (3 sigma)", 3.0 * sigma)
    })?;

    // With the default 5% the draws are without replacement; compare the
    // inclusion frequency with the exact sequential-sampling probability.
    let k = 5;
    let mut included = 0u64;
    for seed in 0..trials {
        let s = pseudo_unbiased_split(&edges, 2, &SplitConfig { seed, ..SplitConfig::default() })
            .map_err(|e| e.to_string())?;
        ensure(s.test_drawn.len() == k, || format!("expected {k} test draws, got {}", s.test_drawn.len()))?;
        included += s.test_drawn.iter().any(|&(_, i)| i == 1) as u64;
    }
    // P(rare never drawn in k sequential draws) with 100 popular weights of 1.
    let mut miss = 1.0;
    for j in 0..k {
        let remaining = 100.0 - j as f64;
        miss *= remaining / (remaining + 10.0);
    }
    let expect = 1.0 - miss;
    let observed = included as f64 / trials as f64;
    let sd = (expect * (1.0 - expect) / trials as f64).sqrt();
    ensure((observed - expect).abs() <= 3.0 * sd, || {
        format!("5-draw rare inclusion {observed:.3}, exact {expect:.3} +- {:.3}", 3.0 * sd)
    })?;

    // Sampler alone: first-draw frequencies over a larger weight vector.
    let weights: Vec<f64> = (1..=20).map(|w| w as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut hits = [0u64; 20];
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let draws = 200_000;
    for _ in 0..draws {
        hits[weighted_sample_without_replacement(&weights, 1, &mut rng)[0]] += 1;
    }
    for (i, &h) in hits.iter().enumerate() {
        let pi = weights[i] / total;
        let sd = (pi * (1.0 - pi) / draws as f64).sqrt();
        let freq = h as f64 / draws as f64;
        ensure((freq - pi).abs() <= 4.0 * sd, || format!("sampler item {i}: {freq:.4} vs {pi:.4}"))?;
    }

    Ok(format!(
        "propensities equal recount (max dev {worst:.1e}, 943 users, {} items); rare:popular per-draw ratio {ratio:.2} (10 +- {:.2}); 5-draw inclusion {observed:.3} vs exact {expect:.3}",
        items.len(),
        3.0 * sigma
    ))
}

// ---------------------------------------------------------------------------
// MovieLens experiments

const PAPER_HR10: [(Strategy, f64); 3] = [(Strategy::Mean, 0.506), (Strategy::Navip, 0.511), (Strategy::Propensity, 0.493)];
const EVAL_SEEDS: std::ops::RangeInclusive<u64> = 1..=5;

struct MovieLens {
    dataset: Dataset,
    graph: InteractionGraph,
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn movielens_path() -> PathBuf {
    workspace_root().join("data/ml-100k/u.data")
}

fn movielens() -> Result<&'static MovieLens, String> {
    static ML: OnceLock<Result<MovieLens, String>> = OnceLock::new();
    ML.get_or_init(|| {
        let path = movielens_path();
        if !path.exists() {
            return Err(format!(
                "MovieLens-100k not found at {}; run scripts/fetch_movielens.sh",
                path.display()
            ));
        }
        let dataset = Dataset::prepare(&path, InputFormat::Movielens100k, 10, &SplitConfig::default())
            .map_err(|e| e.to_string())?;
        let graph = InteractionGraph::build(&dataset.train, dataset.num_users(), dataset.num_items())
            .map_err(|e| e.to_string())?;
        Ok(MovieLens { dataset, graph })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn full_graph(ds: &Dataset) -> InteractionGraph {
    let all: Vec<_> = ds.train.iter().chain(&ds.validation).chain(&ds.test).copied().collect();
    InteractionGraph::build(&all, ds.num_users(), ds.num_items()).unwrap()
}

struct Trained {
    model: EmbeddingModel<f64>,
    seconds: f64,
    final_loss: f64,
}

/// One 100-epoch run per training strategy (default normalization, f32
/// arithmetic, run seed 0), shared by criteria 6 and 7.
fn trained(strategy: Strategy) -> Result<&'static Trained, String> {
    static RUNS: [OnceLock<Result<Trained, String>>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = Strategy::ALL.iter().position(|&s| s == strategy).unwrap();
    RUNS[slot]
        .get_or_init(|| {
            let ml = movielens()?;
            let start = Instant::now();
            let cfg = TrainConfig {
                strategy,
                normalization: strategy.default_normalization(),
                ..TrainConfig::default()
            };
            let table = PropensityTable::<f32>::estimate(&ml.graph);
            let out = train_with(&ml.graph, &table, &cfg, |_, _| {}).map_err(|e| e.to_string())?;
            let e = out.model.embeddings();
            let wide = Matrix::from_vec(e.rows(), e.cols(), e.as_slice().iter().map(|&x| x as f64).collect()).unwrap();
            let model = EmbeddingModel::from_embeddings(ml.graph.num_users(), ml.graph.num_items(), wide)
                .unwrap()
                .with_depth(cfg.depth);
            Ok(Trained {
                model,
                seconds: start.elapsed().as_secs_f64(),
                final_loss: *out.loss_trace.last().unwrap(),
            })
        })
        .as_ref()
        .map_err(Clone::clone)
}

struct Scores {
    hr10_mean: f64,
    hr10_se: f64,
    ndcg10_mean: f64,
    all: EvalReport,
}

/// Seed-averaged test metrics with the given inference operator.
fn scores(model: &EmbeddingModel<f64>, strategy: Strategy) -> Result<Scores, String> {
    let ml = movielens()?;
    let table = table_for(&ml.graph);
    let op = AggregationOperator::build(&ml.graph, Some(&table), strategy, strategy.default_normalization())
        .map_err(|e| e.to_string())?;
    let fin = model.reaggregate(&op).map_err(|e| e.to_string())?;
    let reports: Vec<EvalReport> = EVAL_SEEDS
        .map(|seed| {
            let cfg = EvalConfig {
                seed,
                ..EvalConfig::default()
            };
            evaluate_excluding(&fin, &ml.graph, &ml.dataset.test, &ml.dataset.validation, &cfg)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let n = reports.len() as f64;
    let hr: Vec<f64> = reports.iter().map(|r| r.hr[&10]).collect();
    let mean = hr.iter().sum::<f64>() / n;
    let var = hr.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut avg = reports[0].clone();
    for map in [&mut avg.hr, &mut avg.ndcg, &mut avg.hr_head, &mut avg.ndcg_head, &mut avg.hr_tail, &mut avg.ndcg_tail] {
        map.values_mut().for_each(|v| *v = 0.0);
    }
    for r in &reports {
        for (dst, src) in [
            (&mut avg.hr, &r.hr),
            (&mut avg.ndcg, &r.ndcg),
            (&mut avg.hr_head, &r.hr_head),
            (&mut avg.ndcg_head, &r.ndcg_head),
            (&mut avg.hr_tail, &r.hr_tail),
            (&mut avg.ndcg_tail, &r.ndcg_tail),
        ] {
            for (k, v) in src {
                *dst.get_mut(k).unwrap() += v / n;
            }
        }
    }
    Ok(Scores {
        hr10_mean: mean,
        hr10_se: (var / n).sqrt(),
        ndcg10_mean: avg.ndcg[&10],
        all: avg,
    })
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let run = trained(Strategy::Mean)?;
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    let mut hr = BTreeMap::new();
    for (s, paper) in PAPER_HR10 {
        let sc = scores(&run.model, s)?;
        let delta = sc.hr10_mean - paper;
        lines.push(format!(
            "{s} HR@10 {:.4} (paper {paper:.3}, {delta:+.4}) NDCG@10 {:.4} HR@10 head/tail {:.3}/{:.3}",
            sc.hr10_mean,
            sc.ndcg10_mean,
            sc.all.hr_head[&10],
            sc.all.hr_tail[&10]
        ));
        if delta.abs() > 0.04 {
            failures.push(format!("{s} HR@10 off by {delta:+.4}"));
        }
        hr.insert(s, sc.hr10_mean);
    }
    let (m, nv, p) = (hr[&Strategy::Mean], hr[&Strategy::Navip], hr[&Strategy::Propensity]);
    if !(nv >= m && m > p) {
        failures.push(format!("ordering navip {nv:.4} >= mean {m:.4} > propensity {p:.4} does not hold"));
    }
    if start.elapsed() > Duration::from_secs(30 * 60) {
        failures.push(format!("took {:.0}s, budget 1800s", start.elapsed().as_secs_f64()));
    }
    let summary = format!(
        "trained Mean in {:.0}s (final loss {:.4}); {}",
        run.seconds,
        run.final_loss,
        lines.join("; ")
    );
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", failures.join("; ")))
    }
}

fn criterion_7() -> Check {
    let mut res = BTreeMap::new();
    let mut lines = Vec::new();
    for s in [Strategy::Mean, Strategy::Propensity, Strategy::Navip] {
        let run = trained(s)?;
        let sc = scores(&run.model, s)?;
        lines.push(format!("{s}/{s} HR@10 {:.4} +- {:.4}", sc.hr10_mean, sc.hr10_se));
        res.insert(s, (sc.hr10_mean, sc.hr10_se));
    }
    let at_least = |a: Strategy, b: Strategy| {
        let ((ma, sa), (mb, sb)) = (res[&a], res[&b]);
        ma - mb >= -(sa * sa + sb * sb).sqrt()
    };
    let ok = at_least(Strategy::Navip, Strategy::Mean) && at_least(Strategy::Mean, Strategy::Propensity);

    // Gap narrowing relative to the inference-only swap of criterion 6.
    let mean_model = &trained(Strategy::Mean)?.model;
    let swap: Vec<f64> = Strategy::ALL
        .iter()
        .map(|&s| scores(mean_model, s).map(|sc| sc.hr10_mean))
        .collect::<Result<_, _>>()?;
    let spread = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
    let joint: Vec<f64> = res.values().map(|v| v.0).collect();
    let summary = format!(
        "{}; spread {:.4} train+infer vs {:.4} inference-only ({})",
        lines.join(", "),
        spread(&joint),
        spread(&swap),
        if spread(&joint) < spread(&swap) { "gap narrowed" } else { "gap did not narrow" }
    );
    if ok {
        Ok(summary)
    } else {
        Err(format!("ordering navip >= mean >= propensity violated beyond one standard error; {summary}"))
    }
}

// ---------------------------------------------------------------------------

fn criterion_8() -> Check {
    let input = movielens_path();
    movielens()?;
    let base = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_navip");
    let input = input.canonicalize().map_err(|e| e.to_string())?;
    let steps: [Vec<&str>; 3] = [
        vec!["prepare", "--input", input.to_str().unwrap(), "--format", "movielens_100k", "--seed", "3", "--out", "bundle"],
        vec!["train", "--bundle", "bundle", "--epochs", "2", "--seed", "11", "--quiet", "--out", "run"],
        vec![
            "evaluate", "--checkpoint", "run/checkpoint.bin", "--bundle", "bundle", "--seeds", "1..3",
            "--eval-strategies", "all", "--out", "eval",
        ],
    ];
    let mut dirs = Vec::new();
    for name in ["first", "second"] {
        let dir = base.path().join(name);
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        for args in &steps {
            let out = Command::new(bin).args(args).current_dir(&dir).output().map_err(|e| e.to_string())?;
            ensure(out.status.success(), || {
                format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr))
            })?;
        }
        dirs.push(dir);
    }
    let files = list_files(&dirs[0]);
    ensure(files == list_files(&dirs[1]), || "runs produced different file sets".into())?;
    let mut json = 0;
    for f in &files {
        let a = fs::read(dirs[0].join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(dirs[1].join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{} differs between runs", f.display()))?;
        json += (f.extension().and_then(|e| e.to_str()) == Some("json")) as usize;
    }
    ensure(files.iter().any(|f| f.ends_with("checkpoint.bin")), || "no checkpoint written".into())?;
    Ok(format!(
        "prepare -> train -> evaluate twice: {} files byte-identical ({json} JSON, checkpoint included)",
        files.len()
    ))
}

fn list_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}
