//! Sparse neighbor-aggregation operators over the joint `(M + N)` node space.
//!
//! Users occupy rows `0..M` and items rows `M..M+N`. Every edge `(u, i)`
//! carries a raw weight that depends on the item only:
//!
//! | strategy     | raw weight |
//! |--------------|------------|
//! | `Mean`       | `1`        |
//! | `Propensity` | `p_i`      |
//! | `Navip`      | `1 / p_i`  |
//!
//! With `S_a` the raw row sum of node `a`, random-walk normalization gives
//! `w / S_a` (rows sum to one) and symmetric normalization gives
//! `w / sqrt(S_a * S_b)`. `Mean` + `Symmetric` is the LightGCN operator
//! `1 / sqrt(|N(u)| |N(i)|)`. The diagonal is always zero.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::matrix::{axpy, Matrix};
use crate::propensity::PropensityTable;
use crate::scalar::Scalar;

/// Embedding columns accumulated per pass; 64 matches the default width.
const BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Mean,
    Propensity,
    Navip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Symmetric,
    RandomWalk,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Mean, Strategy::Propensity, Strategy::Navip];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mean => "mean",
            Strategy::Propensity => "propensity",
            Strategy::Navip => "navip",
        }
    }

    /// Every strategy defaults to row normalization, so `Mean` is a plain
    /// neighbor average and swapping strategies at inference only changes
    /// the edge weights. `Symmetric` stays available for LightGCN proper.
    pub fn default_normalization(self) -> Normalization {
        Normalization::RandomWalk
    }

    pub fn needs_propensity(self) -> bool {
        !matches!(self, Strategy::Mean)
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Strategy::Mean => 0,
            Strategy::Propensity => 1,
            Strategy::Navip => 2,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(b as usize).copied()
    }
}

impl Normalization {
    pub const ALL: [Normalization; 2] = [Normalization::Symmetric, Normalization::RandomWalk];

    pub fn name(self) -> &'static str {
        match self {
            Normalization::Symmetric => "symmetric",
            Normalization::RandomWalk => "random-walk",
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Normalization::Symmetric => 0,
            Normalization::RandomWalk => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(b as usize).copied()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Strategy::Mean),
            "propensity" => Ok(Strategy::Propensity),
            "navip" => Ok(Strategy::Navip),
            other => Err(Error::Config(format!(
                "unknown strategy '{other}' (expected mean, propensity or navip)"
            ))),
        }
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "symmetric" | "sym" => Ok(Normalization::Symmetric),
            "random-walk" | "random_walk" | "rw" => Ok(Normalization::RandomWalk),
            other => Err(Error::Config(format!(
                "unknown normalization '{other}' (expected symmetric or random-walk)"
            ))),
        }
    }
}

/// Fixed sparse linear map `H -> A H`, stored row-wise.
///
/// The sparsity pattern is symmetric (bipartite adjacency), so the
/// transpose shares `offsets`/`columns` and only needs its own weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOperator<T> {
    strategy: Strategy,
    normalization: Normalization,
    num_users: usize,
    num_items: usize,
    offsets: Vec<usize>,
    columns: Vec<usize>,
    weights: Vec<T>,
    transposed: Vec<T>,
}

impl<T: Scalar> AggregationOperator<T> {
    pub fn build(
        graph: &InteractionGraph,
        table: Option<&PropensityTable<T>>,
        strategy: Strategy,
        normalization: Normalization,
    ) -> Result<Self> {
        let m = graph.num_users();
        let n = graph.num_items();

        let raw: Vec<T> = match (strategy, table) {
            (Strategy::Mean, _) => vec![T::one(); n],
            (_, None) => {
                return Err(Error::Config(format!(
                    "strategy '{strategy}' requires a propensity table"
                )))
            }
            (_, Some(t)) if t.num_items() != n => {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: t.num_items(),
                })
            }
            (Strategy::Propensity, Some(t)) => t.propensities().to_vec(),
            (Strategy::Navip, Some(t)) => (0..n).map(|i| t.inverse_weight(i)).collect(),
        };

        let mut row_sum = Vec::with_capacity(m + n);
        for u in 0..m {
            row_sum.push(graph.user_items(u).iter().map(|&i| raw[i]).sum::<T>());
        }
        for (i, &w) in raw.iter().enumerate() {
            row_sum.push(std::iter::repeat_n(w, graph.item_users(i).len()).sum::<T>());
        }

        let norm = |w: T, a: usize, b: usize| match normalization {
            Normalization::RandomWalk => w / row_sum[a],
            Normalization::Symmetric => w / (row_sum[a] * row_sum[b]).sqrt(),
        };

        let nnz = 2 * graph.num_edges();
        let mut offsets = Vec::with_capacity(m + n + 1);
        let mut columns = Vec::with_capacity(nnz);
        let mut weights = Vec::with_capacity(nnz);
        let mut transposed = Vec::with_capacity(nnz);
        offsets.push(0);
        for u in 0..m {
            for &i in graph.user_items(u) {
                let b = m + i;
                columns.push(b);
                weights.push(norm(raw[i], u, b));
                transposed.push(norm(raw[i], b, u));
            }
            offsets.push(columns.len());
        }
        for (i, &w) in raw.iter().enumerate() {
            let a = m + i;
            for &u in graph.item_users(i) {
                columns.push(u);
                weights.push(norm(w, a, u));
                transposed.push(norm(w, u, a));
            }
            offsets.push(columns.len());
        }

        Ok(Self {
            strategy,
            normalization,
            num_users: m,
            num_items: n,
            offsets,
            columns,
            weights,
            transposed,
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn dim(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn nnz(&self) -> usize {
        self.columns.len()
    }

    /// Column indices and weights of row `a`.
    pub fn row(&self, a: usize) -> (&[usize], &[T]) {
        let span = self.offsets[a]..self.offsets[a + 1];
        (&self.columns[span.clone()], &self.weights[span])
    }

    pub fn weight(&self, a: usize, b: usize) -> Option<T> {
        let (cols, w) = self.row(a);
        cols.binary_search(&b).ok().map(|k| w[k])
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.dim()).map(|a| self.row(a).1.iter().copied().sum()).collect()
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut dense = Matrix::zeros(self.dim(), self.dim());
        for a in 0..self.dim() {
            let (cols, w) = self.row(a);
            for (&b, &x) in cols.iter().zip(w) {
                dense[(a, b)] = x;
            }
        }
        dense
    }

    /// Returns `A * input`; `input` must have `M + N` rows.
    pub fn propagate(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        let mut out = Matrix::zeros(input.rows(), input.cols());
        self.propagate_into(input, &mut out)?;
        Ok(out)
    }

    /// Writes `A * input` into `out`, overwriting its contents.
    pub fn propagate_into(&self, input: &Matrix<T>, out: &mut Matrix<T>) -> Result<()> {
        self.apply(&self.weights, input, out)
    }

    /// Writes `A^T * input` into `out`; used to back-propagate gradients.
    pub fn propagate_transpose_into(&self, input: &Matrix<T>, out: &mut Matrix<T>) -> Result<()> {
        self.apply(&self.transposed, input, out)
    }

    fn apply(&self, weights: &[T], input: &Matrix<T>, out: &mut Matrix<T>) -> Result<()> {
        self.check_rows(input.rows())?;
        self.check_rows(out.rows())?;
        if out.cols() != input.cols() {
            return Err(Error::DimensionMismatch {
                expected: input.cols(),
                actual: out.cols(),
            });
        }
        let d = input.cols();
        if d == 0 {
            return Ok(());
        }
        let src = input.as_slice();
        let fill_row = |(a, out_row): (usize, &mut [T])| {
            let span = self.offsets[a]..self.offsets[a + 1];
            let mut start = 0;
            while start < d {
                let len = (d - start).min(BLOCK);
                let mut acc = [T::zero(); BLOCK];
                if len == BLOCK {
                    for k in span.clone() {
                        let base = self.columns[k] * d + start;
                        let block: &[T; BLOCK] = src[base..base + BLOCK].try_into().unwrap();
                        let w = weights[k];
                        for j in 0..BLOCK {
                            acc[j] += w * block[j];
                        }
                    }
                } else {
                    for k in span.clone() {
                        let base = self.columns[k] * d + start;
                        axpy(weights[k], &src[base..base + len], &mut acc[..len]);
                    }
                }
                out_row[start..start + len].copy_from_slice(&acc[..len]);
                start += len;
            }
        };
        // Each output row is computed by one task in a fixed order, so the
        // result is identical for any number of worker threads.
        if rayon::current_num_threads() > 1 {
            out.as_mut_slice().par_chunks_mut(d).enumerate().for_each(fill_row);
        } else {
            out.as_mut_slice().chunks_mut(d).enumerate().for_each(fill_row);
        }
        Ok(())
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: rows,
            });
        }
        Ok(())
    }
}
