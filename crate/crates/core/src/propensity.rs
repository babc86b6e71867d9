//! Item propensity from relative popularity: `p_i = sqrt(deg(i) / max_j deg(j))`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, Side};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityTable<T> {
    item_propensity: Vec<T>,
    max_popularity: usize,
}

impl<T: Scalar> PropensityTable<T> {
    /// Estimates propensities from the item degrees of `graph`.
    pub fn estimate(graph: &InteractionGraph) -> Self {
        Self::from_item_counts(graph.item_degree())
    }

    /// Estimates propensities from raw per-item interaction counts.
    ///
    /// Counts of zero yield a propensity of zero; callers that divide by the
    /// propensity must reject such items first.
    pub fn from_item_counts(counts: &[usize]) -> Self {
        let max_popularity = counts.iter().copied().max().unwrap_or(0);
        let max = T::from_count(max_popularity.max(1));
        let item_propensity = counts
            .iter()
            .map(|&c| (T::from_count(c) / max).sqrt())
            .collect();
        Self {
            item_propensity,
            max_popularity,
        }
    }

    /// Raises every propensity to at least `floor`, bounding inverse weights by `1 / floor`.
    pub fn with_floor(mut self, floor: T) -> Result<Self> {
        if !(floor > T::zero() && floor <= T::one()) {
            return Err(Error::Config(format!("propensity floor {floor} outside (0, 1]")));
        }
        for p in &mut self.item_propensity {
            *p = p.max(floor);
        }
        Ok(self)
    }

    pub fn num_items(&self) -> usize {
        self.item_propensity.len()
    }

    pub fn max_popularity(&self) -> usize {
        self.max_popularity
    }

    pub fn propensities(&self) -> &[T] {
        &self.item_propensity
    }

    #[inline]
    pub fn propensity(&self, item: usize) -> T {
        self.item_propensity[item]
    }

    /// `1 / p_i`, the IPS weight of any interaction with `item`.
    #[inline]
    pub fn inverse_weight(&self, item: usize) -> T {
        self.item_propensity[item].recip()
    }

    /// Sum of inverse weights over a node's incident edges.
    ///
    /// For a user this is `sum_{i in N(u)} 1/p_i`; for an item each incident
    /// edge carries the item's own weight, giving `deg(i) / p_i`. Both are row
    /// sums of the inverse-propensity weighted adjacency.
    pub fn normalizer_z(&self, graph: &InteractionGraph, node: usize, side: Side) -> Result<T> {
        let neighbors = graph.neighbors(node, side)?;
        Ok(match side {
            Side::User => neighbors.iter().map(|&i| self.inverse_weight(i)).sum(),
            Side::Item => neighbors.iter().map(|_| self.inverse_weight(node)).sum(),
        })
    }

    /// Writes `item_id,propensity` rows. `item_ids` maps dense indices to raw
    /// identifiers; when absent the dense index is written.
    pub fn write_csv<W: Write>(&self, mut out: W, item_ids: Option<&[String]>) -> Result<()> {
        writeln!(out, "item_id,propensity")?;
        for (i, p) in self.item_propensity.iter().enumerate() {
            match item_ids {
                Some(ids) => writeln!(out, "{},{}", ids[i], p)?,
                None => writeln!(out, "{i},{p}")?,
            }
        }
        Ok(())
    }
}
