//! Layer-0 embedding table, K-layer propagation and layer combination.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::aggregation::AggregationOperator;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::scalar::Scalar;

pub const DEFAULT_DEPTH: usize = 3;
pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_INIT_STD: f64 = 0.1;

/// Learnable embeddings with a fixed propagation depth.
///
/// Rows `0..M` are users and rows `M..M+N` are items. The final
/// representation is `sum_k alpha_k A^k E` for the operator `A` passed to
/// [`EmbeddingModel::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel<T> {
    num_users: usize,
    num_items: usize,
    depth: usize,
    layer_coeffs: Vec<T>,
    embeddings: Matrix<T>,
}

/// Combined user and item representations after propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalEmbeddings<T> {
    num_users: usize,
    matrix: Matrix<T>,
}

impl<T: Scalar> EmbeddingModel<T> {
    /// Draws every entry i.i.d. from `N(0, 0.1^2)` with a seeded generator.
    pub fn init(num_users: usize, num_items: usize, dim: usize, seed: u64) -> Result<Self> {
        Self::init_with_std(num_users, num_items, dim, DEFAULT_INIT_STD, seed)
    }

    pub fn init_with_std(num_users: usize, num_items: usize, dim: usize, std: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("init std {std}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = num_users + num_items;
        let data = (0..rows * dim).map(|_| T::lit(normal.sample(&mut rng))).collect();
        Ok(Self {
            num_users,
            num_items,
            depth: DEFAULT_DEPTH,
            layer_coeffs: uniform_coeffs(DEFAULT_DEPTH),
            embeddings: Matrix::from_vec(rows, dim, data)?,
        })
    }

    /// Wraps an existing layer-0 table.
    pub fn from_embeddings(num_users: usize, num_items: usize, embeddings: Matrix<T>) -> Result<Self> {
        if embeddings.rows() != num_users + num_items {
            return Err(Error::DimensionMismatch {
                expected: num_users + num_items,
                actual: embeddings.rows(),
            });
        }
        if embeddings.cols() == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        Ok(Self {
            num_users,
            num_items,
            depth: DEFAULT_DEPTH,
            layer_coeffs: uniform_coeffs(DEFAULT_DEPTH),
            embeddings,
        })
    }

    /// Sets the depth with uniform coefficients `1 / (K + 1)`.
    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self.layer_coeffs = uniform_coeffs(depth);
        self
    }

    /// Sets explicit coefficients; the depth becomes `coeffs.len() - 1`.
    pub fn with_layer_coeffs(mut self, coeffs: Vec<T>) -> Result<Self> {
        validate_coeffs(&coeffs)?;
        self.depth = coeffs.len() - 1;
        self.layer_coeffs = coeffs;
        Ok(self)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn layer_coeffs(&self) -> &[T] {
        &self.layer_coeffs
    }

    pub fn embeddings(&self) -> &Matrix<T> {
        &self.embeddings
    }

    pub fn embeddings_mut(&mut self) -> &mut Matrix<T> {
        &mut self.embeddings
    }

    /// `sum_k alpha_k A^k E` with `E` the layer-0 table.
    pub fn forward(&self, op: &AggregationOperator<T>) -> Result<FinalEmbeddings<T>> {
        self.check_operator(op)?;
        let mut combined = self.embeddings.clone();
        combined.scale(self.layer_coeffs[0]);
        if self.depth > 0 {
            let mut current = self.embeddings.clone();
            let mut next = Matrix::zeros(current.rows(), current.cols());
            for &alpha in &self.layer_coeffs[1..] {
                op.propagate_into(&current, &mut next)?;
                combined.add_scaled(alpha, &next);
                std::mem::swap(&mut current, &mut next);
            }
        }
        Ok(FinalEmbeddings {
            num_users: self.num_users,
            matrix: combined,
        })
    }

    /// Re-aggregates the frozen layer-0 table under a different operator.
    ///
    /// No parameter changes; this is how a model trained under one
    /// aggregation strategy is evaluated under another.
    pub fn reaggregate(&self, op_eval: &AggregationOperator<T>) -> Result<FinalEmbeddings<T>> {
        self.forward(op_eval)
    }

    /// Pulls a gradient w.r.t. the final embeddings back to layer 0:
    /// `sum_k alpha_k (A^T)^k G`, evaluated by Horner's rule.
    pub fn backward(&self, op: &AggregationOperator<T>, grad_final: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_operator(op)?;
        if grad_final.rows() != self.embeddings.rows() || grad_final.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.embeddings.rows() * self.dim(),
                actual: grad_final.rows() * grad_final.cols(),
            });
        }
        let mut acc = grad_final.clone();
        acc.scale(self.layer_coeffs[self.depth]);
        let mut next = Matrix::zeros(acc.rows(), acc.cols());
        for k in (0..self.depth).rev() {
            op.propagate_transpose_into(&acc, &mut next)?;
            next.add_scaled(self.layer_coeffs[k], grad_final);
            std::mem::swap(&mut acc, &mut next);
        }
        Ok(acc)
    }

    fn check_operator(&self, op: &AggregationOperator<T>) -> Result<()> {
        if op.num_users() != self.num_users || op.num_items() != self.num_items {
            return Err(Error::DimensionMismatch {
                expected: self.num_users + self.num_items,
                actual: op.dim(),
            });
        }
        Ok(())
    }
}

impl<T: Scalar> FinalEmbeddings<T> {
    pub fn new(num_users: usize, matrix: Matrix<T>) -> Self {
        Self { num_users, matrix }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.matrix.rows() - self.num_users
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.matrix
    }

    #[inline]
    pub fn user(&self, u: usize) -> &[T] {
        self.matrix.row(u)
    }

    #[inline]
    pub fn item(&self, i: usize) -> &[T] {
        self.matrix.row(self.num_users + i)
    }

    /// Dot-product relevance of item `i` for user `u`.
    #[inline]
    pub fn score(&self, u: usize, i: usize) -> T {
        dot(self.user(u), self.item(i))
    }
}

pub(crate) fn uniform_coeffs<T: Scalar>(depth: usize) -> Vec<T> {
    let alpha = T::one() / T::from_count(depth + 1);
    vec![alpha; depth + 1]
}

pub(crate) fn validate_coeffs<T: Scalar>(coeffs: &[T]) -> Result<()> {
    if coeffs.is_empty() {
        return Err(Error::Config("at least one layer coefficient is required".into()));
    }
    if coeffs.iter().any(|&a| !a.is_finite() || a < T::zero()) {
        return Err(Error::Config("layer coefficients must be finite and nonnegative".into()));
    }
    let sum: T = coeffs.iter().copied().sum();
    let tol = (T::epsilon() * T::from_count(4 * coeffs.len())).max(T::lit(1e-12));
    if (sum - T::one()).abs() > tol {
        return Err(Error::Config(format!("layer coefficients sum to {sum}, expected 1")));
    }
    Ok(())
}
