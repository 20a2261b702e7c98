use serde::{Deserialize, Serialize};

use crate::error::{EmotError, Result};
use crate::scalar::Scalar;

/// Default bound on the number of enumerated paths.
pub const DEFAULT_PATH_LIMIT: usize = 10_000_000;

/// Finite path lattice: for each time `t` in `0..=T` and asset `j`, a
/// strictly increasing list of attainable prices.
///
/// Paths are enumerated lexicographically in `(t, j, node)` with the first
/// coordinate most significant, so the paths sharing a prefix `x_{0:t}`
/// form a contiguous index block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr<S>", into = "GridRepr<S>")]
#[serde(bound(serialize = "S: Scalar + Serialize", deserialize = "S: Scalar + Deserialize<'de>"))]
pub struct MarketGrid<S> {
    nodes: Vec<Vec<Vec<S>>>,
    num_assets: usize,
    block_sizes: Vec<usize>,
    suffix_counts: Vec<usize>,
    path_count: usize,
}

#[derive(Serialize, Deserialize)]
struct GridRepr<S> {
    nodes: Vec<Vec<Vec<S>>>,
}

impl<S: Scalar> TryFrom<GridRepr<S>> for MarketGrid<S> {
    type Error = EmotError;
    fn try_from(r: GridRepr<S>) -> Result<Self> {
        MarketGrid::new(r.nodes)
    }
}

impl<S: Scalar> From<MarketGrid<S>> for GridRepr<S> {
    fn from(g: MarketGrid<S>) -> Self {
        GridRepr { nodes: g.nodes }
    }
}

impl<S: Scalar> MarketGrid<S> {
    /// `nodes[t][j]` is the node list `K_t^j`.
    pub fn new(nodes: Vec<Vec<Vec<S>>>) -> Result<Self> {
        Self::with_limit(nodes, DEFAULT_PATH_LIMIT)
    }

    pub fn with_limit(nodes: Vec<Vec<Vec<S>>>, limit: usize) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(EmotError::InvalidGrid("need at least two dates (T >= 1)".into()));
        }
        let d = nodes[0].len();
        if d == 0 {
            return Err(EmotError::InvalidGrid("need at least one asset".into()));
        }
        for (t, per_t) in nodes.iter().enumerate() {
            if per_t.len() != d {
                return Err(EmotError::InvalidGrid(format!(
                    "time {t} has {} assets, expected {d}",
                    per_t.len()
                )));
            }
            for (j, k) in per_t.iter().enumerate() {
                if k.is_empty() {
                    return Err(EmotError::InvalidGrid(format!("K_{t}^{j} is empty")));
                }
                if k.iter().any(|v| !v.is_finite()) {
                    return Err(EmotError::InvalidGrid(format!("K_{t}^{j} has a non-finite node")));
                }
                if k.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(EmotError::InvalidGrid(format!("K_{t}^{j} is not strictly increasing")));
                }
            }
        }
        let block_sizes: Vec<usize> = nodes
            .iter()
            .map(|per_t| per_t.iter().map(Vec::len).product())
            .collect();
        let mut path_count: usize = 1;
        for &b in &block_sizes {
            path_count = path_count
                .checked_mul(b)
                .filter(|&p| p <= limit)
                .ok_or_else(|| EmotError::TooLarge(format!("path count exceeds limit {limit}")))?;
        }
        let horizon = nodes.len() - 1;
        let mut suffix_counts = vec![1; horizon + 1];
        for t in (0..horizon).rev() {
            suffix_counts[t] = suffix_counts[t + 1] * block_sizes[t + 1];
        }
        Ok(Self {
            nodes,
            num_assets: d,
            block_sizes,
            suffix_counts,
            path_count,
        })
    }

    /// Single-asset grid from `K_0, ..., K_T`.
    pub fn one_dim(nodes: Vec<Vec<S>>) -> Result<Self> {
        Self::new(nodes.into_iter().map(|k| vec![k]).collect())
    }

    pub fn num_assets(&self) -> usize {
        self.num_assets
    }

    /// Last date `T`.
    pub fn horizon(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self, t: usize, j: usize) -> &[S] {
        &self.nodes[t][j]
    }

    pub fn all_nodes(&self) -> &[Vec<Vec<S>>] {
        &self.nodes
    }

    pub fn path_count(&self) -> usize {
        self.path_count
    }

    /// Number of nodes of the product set at time `t`.
    pub fn block_size(&self, t: usize) -> usize {
        self.block_sizes[t]
    }

    /// Number of distinct prefixes `x_{0:t}`.
    pub fn prefix_count(&self, t: usize) -> usize {
        self.path_count / self.suffix_counts[t]
    }

    /// Number of paths sharing a given prefix `x_{0:t}`.
    pub fn suffix_count(&self, t: usize) -> usize {
        self.suffix_counts[t]
    }

    pub fn check_time(&self, t: usize) -> Result<()> {
        if t > self.horizon() {
            Err(EmotError::TimeOutOfRange { t, horizon: self.horizon() })
        } else {
            Ok(())
        }
    }

    /// Index of the time-`t` product node visited by `path`.
    #[inline]
    pub fn block_of(&self, path: usize, t: usize) -> usize {
        (path / self.suffix_counts[t]) % self.block_sizes[t]
    }

    #[inline]
    pub fn prefix_of(&self, path: usize, t: usize) -> usize {
        path / self.suffix_counts[t]
    }

    /// Node index of asset `j` inside the time-`t` product node `block`.
    #[inline]
    pub fn node_index(&self, t: usize, block: usize, j: usize) -> usize {
        let stride: usize = self.nodes[t][j + 1..].iter().map(Vec::len).product();
        (block / stride) % self.nodes[t][j].len()
    }

    /// Price of asset `j` at the time-`t` product node `block`.
    #[inline]
    pub fn block_value(&self, t: usize, block: usize, j: usize) -> S {
        self.nodes[t][j][self.node_index(t, block, j)]
    }

    /// Coordinates of a time-`t` product node.
    pub fn block_point(&self, t: usize, block: usize) -> Vec<S> {
        (0..self.num_assets).map(|j| self.block_value(t, block, j)).collect()
    }

    /// `x_t^j` along `path`.
    #[inline]
    pub fn value(&self, path: usize, t: usize, j: usize) -> S {
        self.block_value(t, self.block_of(path, t), j)
    }

    pub fn path(&self, index: usize) -> Path<S> {
        let horizon = self.horizon();
        let mut node_indices = Vec::with_capacity(horizon + 1);
        let mut values = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            let b = self.block_of(index, t);
            node_indices.push((0..self.num_assets).map(|j| self.node_index(t, b, j)).collect());
            values.push(self.block_point(t, b));
        }
        Path { index, node_indices, values }
    }

    pub fn paths(&self) -> impl Iterator<Item = Path<S>> + '_ {
        (0..self.path_count).map(move |p| self.path(p))
    }

    /// Path index from per-`(t, j)` node indices.
    pub fn path_index(&self, node_indices: &[Vec<usize>]) -> Result<usize> {
        if node_indices.len() != self.nodes.len() {
            return Err(EmotError::DimensionMismatch("path has wrong number of dates".into()));
        }
        let mut idx = 0;
        for (t, per_t) in node_indices.iter().enumerate() {
            if per_t.len() != self.num_assets {
                return Err(EmotError::DimensionMismatch("path has wrong number of assets".into()));
            }
            for (j, &k) in per_t.iter().enumerate() {
                if k >= self.nodes[t][j].len() {
                    return Err(EmotError::DimensionMismatch(format!("node index {k} out of range at ({t},{j})")));
                }
                idx = idx * self.nodes[t][j].len() + k;
            }
        }
        Ok(idx)
    }

    /// True when every `K_0^j` is a singleton.
    pub fn has_deterministic_start(&self) -> bool {
        self.nodes[0].iter().all(|k| k.len() == 1)
    }

    /// Spot `x_0^j` for deterministic-start grids.
    pub fn spot(&self, j: usize) -> Option<S> {
        (self.nodes[0][j].len() == 1).then(|| self.nodes[0][j][0])
    }

    pub fn max_abs_value(&self) -> S {
        self.nodes
            .iter()
            .flatten()
            .flatten()
            .fold(S::zero(), |m, v| m.max(v.abs()))
    }
}

/// One element of the path space with its node indices and prices.
#[derive(Debug, Clone, PartialEq)]
pub struct Path<S> {
    pub index: usize,
    /// `node_indices[t][j]`.
    pub node_indices: Vec<Vec<usize>>,
    /// `values[t][j] = x_t^j`.
    pub values: Vec<Vec<S>>,
}

impl<S: Scalar> Path<S> {
    #[inline]
    pub fn x(&self, t: usize, j: usize) -> S {
        self.values[t][j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_nodes() {
        assert!(MarketGrid::<f64>::one_dim(vec![vec![1.0], vec![]]).is_err());
        assert!(MarketGrid::<f64>::one_dim(vec![vec![1.0], vec![2.0, 1.0]]).is_err());
        assert!(MarketGrid::<f64>::one_dim(vec![vec![1.0], vec![f64::NAN]]).is_err());
        assert!(MarketGrid::<f64>::one_dim(vec![vec![1.0]]).is_err());
        assert!(matches!(
            MarketGrid::<f64>::with_limit(vec![vec![vec![1.0]], vec![vec![0.0, 1.0, 2.0]]], 2),
            Err(EmotError::TooLarge(_))
        ));
    }

    #[test]
    fn lexicographic_enumeration() {
        let g = MarketGrid::new(vec![
            vec![vec![1.0], vec![5.0]],
            vec![vec![0.0, 2.0], vec![4.0, 6.0, 8.0]],
        ])
        .unwrap();
        assert_eq!(g.path_count(), 6);
        assert_eq!(g.block_size(1), 6);
        let p = g.path(4);
        assert_eq!(p.node_indices, vec![vec![0, 0], vec![1, 1]]);
        assert_eq!(p.values[1], vec![2.0, 6.0]);
        assert_eq!(g.path_index(&p.node_indices).unwrap(), 4);
        for q in 0..g.path_count() {
            assert_eq!(g.path_index(&g.path(q).node_indices).unwrap(), q);
        }
    }

    #[test]
    fn prefixes_are_contiguous() {
        let g = MarketGrid::one_dim(vec![vec![2.0], vec![1.0, 3.0], vec![0.0, 2.0, 4.0]]).unwrap();
        assert_eq!(g.prefix_count(1), 2);
        assert_eq!(g.suffix_count(1), 3);
        let prefixes: Vec<usize> = (0..6).map(|p| g.prefix_of(p, 1)).collect();
        assert_eq!(prefixes, vec![0, 0, 0, 1, 1, 1]);
    }
}
