//! Immutable user-item bipartite interaction graph.
//!
//! Both orientations are stored in compressed sparse row form so that
//! neighbor iteration is a contiguous slice lookup from either side.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::User => "user",
            Side::Item => "item",
        }
    }
}

/// Binary interactions between `num_users` users and `num_items` items.
///
/// Invariants: both orientations hold the same edge set, rows are strictly
/// increasing, and every node has at least one neighbor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    user_offsets: Vec<usize>,
    user_items: Vec<usize>,
    item_offsets: Vec<usize>,
    item_users: Vec<usize>,
    user_degree: Vec<usize>,
    item_degree: Vec<usize>,
}

impl InteractionGraph {
    /// Builds the graph from `(user, item)` pairs. Duplicates collapse to a
    /// single edge; isolated users or items are rejected.
    pub fn build(edges: &[(usize, usize)], num_users: usize, num_items: usize) -> Result<Self> {
        for (index, &(user, item)) in edges.iter().enumerate() {
            if user >= num_users || item >= num_items {
                return Err(Error::EdgeOutOfRange {
                    index,
                    user,
                    item,
                    num_users,
                    num_items,
                });
            }
        }

        let mut sorted = edges.to_vec();
        sorted.sort_unstable();
        sorted.dedup();

        let mut user_degree = vec![0usize; num_users];
        let mut item_degree = vec![0usize; num_items];
        for &(u, i) in &sorted {
            user_degree[u] += 1;
            item_degree[i] += 1;
        }

        let isolated_users: Vec<usize> = (0..num_users).filter(|&u| user_degree[u] == 0).collect();
        let isolated_items: Vec<usize> = (0..num_items).filter(|&i| item_degree[i] == 0).collect();
        if !isolated_users.is_empty() || !isolated_items.is_empty() {
            return Err(Error::IsolatedNodes {
                users: isolated_users,
                items: isolated_items,
            });
        }

        let user_offsets = prefix_offsets(&user_degree);
        let user_items: Vec<usize> = sorted.iter().map(|&(_, i)| i).collect();

        // Scanning user-major sorted edges fills each item row in increasing user order.
        let item_offsets = prefix_offsets(&item_degree);
        let mut cursor = item_offsets[..num_items].to_vec();
        let mut item_users = vec![0usize; sorted.len()];
        for &(u, i) in &sorted {
            item_users[cursor[i]] = u;
            cursor[i] += 1;
        }

        Ok(Self {
            num_users,
            num_items,
            user_offsets,
            user_items,
            item_offsets,
            item_users,
            user_degree,
            item_degree,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.user_items.len()
    }

    /// Total node count `M + N` of the joint user/item index space.
    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn neighbors(&self, node: usize, side: Side) -> Result<&[usize]> {
        let len = match side {
            Side::User => self.num_users,
            Side::Item => self.num_items,
        };
        if node >= len {
            return Err(Error::NodeOutOfRange {
                side: side.name(),
                index: node,
                len,
            });
        }
        Ok(match side {
            Side::User => self.user_items(node),
            Side::Item => self.item_users(node),
        })
    }

    #[inline]
    pub fn user_items(&self, user: usize) -> &[usize] {
        &self.user_items[self.user_offsets[user]..self.user_offsets[user + 1]]
    }

    #[inline]
    pub fn item_users(&self, item: usize) -> &[usize] {
        &self.item_users[self.item_offsets[item]..self.item_offsets[item + 1]]
    }

    pub fn user_degree(&self) -> &[usize] {
        &self.user_degree
    }

    pub fn item_degree(&self) -> &[usize] {
        &self.item_degree
    }

    pub fn has_edge(&self, user: usize, item: usize) -> bool {
        user < self.num_users && self.user_items(user).binary_search(&item).is_ok()
    }

    /// Edges in canonical (user-major, item-ascending) order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_users).flat_map(move |u| self.user_items(u).iter().map(move |&i| (u, i)))
    }
}

fn prefix_offsets(degree: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(degree.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for &d in degree {
        acc += d;
        offsets.push(acc);
    }
    offsets
}
