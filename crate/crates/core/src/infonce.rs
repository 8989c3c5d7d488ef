//! Symmetric InfoNCE: batch and population forms.
//!
//! The batch loss on a `B x B` similarity matrix `S` is
//!
//! ```text
//! 1/2 [ -(1/B) sum_i ln(e^{S_ii} / sum_k e^{S_ki})
//!       -(1/B) sum_i ln(e^{S_ii} / sum_k e^{S_ik}) ]
//! ```
//!
//! The population form replaces the batch denominators with exact
//! marginal-weighted expectations, `E_{p(x')}[e^{g(x', y)}]` and
//! `E_{p(y')}[e^{g(x, y')}]`, and drops the `ln B` constant, so its value can
//! be negative. On a finite world both forms are finite sums; all exponential
//! sums here run through log-sum-exp because PMI tables carry
//! large-magnitude entries for small-mass cells.
//!
//! Two exact facts anchor the module and are verified by the test suites:
//! the population loss of the PMI table equals minus the mutual information,
//! and no table beats it. The batch loss, averaged over sampled batches and
//! corrected by its `ln B` constant, drifts toward the population value as
//! batches grow.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::world::{DiscreteWorld, SimilarityTable};

/// Similarity matrix of one sampled batch (square, finite).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSimilarity {
    values: Array2<f64>,
}

impl BatchSimilarity {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() || values.nrows() == 0 {
            return Err(Error::ShapeMismatch {
                expected: (values.nrows(), values.nrows().max(1)),
                got: values.dim(),
            });
        }
        for ((i, j), &v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry { row: i, col: j });
            }
        }
        Ok(BatchSimilarity { values })
    }

    /// Restriction of a similarity table to a sampled batch:
    /// `S_ab = g(x_a, y_b)`.
    pub fn from_pairs(g: &SimilarityTable, pairs: &[(usize, usize)]) -> Result<Self> {
        let values = Array2::from_shape_fn((pairs.len(), pairs.len()), |(a, b)| {
            g.values()[[pairs[a].0, pairs[b].1]]
        });
        Self::new(values)
    }

    pub fn batch_size(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Log-sum-exp of `values` with strictly positive total weight.
fn weighted_lse(values: ArrayView1<f64>, weights: ArrayView1<f64>) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for (&v, &w) in values.iter().zip(weights.iter()) {
        if w > 0.0 && v > m {
            m = v;
        }
    }
    let sum: f64 = values
        .iter()
        .zip(weights.iter())
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, &w)| w * (v - m).exp())
        .sum();
    m + sum.ln()
}

fn lse(values: ArrayView1<f64>) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|&v| (v - m).exp()).sum();
    m + sum.ln()
}

/// Batch symmetric InfoNCE loss.
pub fn empirical_loss(s: &BatchSimilarity) -> f64 {
    let b = s.batch_size();
    let values = s.values();
    let mut total = 0.0;
    for i in 0..b {
        // Column direction: denominators sum over the first index.
        total += lse(values.column(i)) - values[[i, i]];
        // Row direction.
        total += lse(values.row(i)) - values[[i, i]];
    }
    total / (2.0 * b as f64)
}

fn check_shape(g: &SimilarityTable, world: &DiscreteWorld) -> Result<()> {
    if g.nrows() != world.n_x() || g.ncols() != world.n_y() {
        return Err(Error::ShapeMismatch {
            expected: (world.n_x(), world.n_y()),
            got: (g.nrows(), g.ncols()),
        });
    }
    Ok(())
}

/// Population symmetric InfoNCE loss of a similarity table, constant term
/// omitted.
pub fn population_loss(g: &SimilarityTable, world: &DiscreteWorld) -> Result<f64> {
    check_shape(g, world)?;
    let p_x = world.p_x();
    let p_y = world.p_y();
    let values = g.values();

    // ln E_{p(x')} e^{g(x', y_j)} per column, ln E_{p(y')} e^{g(x_i, y')} per row.
    let col_lse: Vec<f64> = (0..world.n_y())
        .map(|j| weighted_lse(values.column(j), p_x.view()))
        .collect();
    let row_lse: Vec<f64> = (0..world.n_x())
        .map(|i| weighted_lse(values.row(i), p_y.view()))
        .collect();

    let mut total = 0.0;
    for ((i, j), &p) in world.joint().indexed_iter() {
        if p > 0.0 {
            total += 0.5 * p * (col_lse[j] - values[[i, j]] + row_lse[i] - values[[i, j]]);
        }
    }
    Ok(total)
}

/// Analytic gradient of [`population_loss`] with respect to every table
/// entry:
/// `1/2 [ p(y_j) softmax_j(i) - p_ij ] + 1/2 [ p(x_i) softmax_i(j) - p_ij ]`
/// where `softmax_j(i)` weights `e^{g_ij}` by `p(x_i)` within column `j` and
/// `softmax_i(j)` weights it by `p(y_j)` within row `i`.
pub fn population_grad(g: &SimilarityTable, world: &DiscreteWorld) -> Result<Array2<f64>> {
    check_shape(g, world)?;
    let p_x = world.p_x();
    let p_y = world.p_y();
    let values = g.values();
    let (n_x, n_y) = values.dim();

    let col_lse: Vec<f64> = (0..n_y)
        .map(|j| weighted_lse(values.column(j), p_x.view()))
        .collect();
    let row_lse: Vec<f64> = (0..n_x)
        .map(|i| weighted_lse(values.row(i), p_y.view()))
        .collect();

    let mut grad = Array2::zeros((n_x, n_y));
    for i in 0..n_x {
        for j in 0..n_y {
            let p = world.joint()[[i, j]];
            let col_weight = if p_x[i] > 0.0 {
                p_x[i] * (values[[i, j]] - col_lse[j]).exp()
            } else {
                0.0
            };
            let row_weight = if p_y[j] > 0.0 {
                p_y[j] * (values[[i, j]] - row_lse[i]).exp()
            } else {
                0.0
            };
            grad[[i, j]] = 0.5 * (p_y[j] * col_weight - p) + 0.5 * (p_x[i] * row_weight - p);
        }
    }
    Ok(grad)
}

/// Mean batch loss over `n_batches` i.i.d. batches of size `batch_size`
/// sampled from the world, with similarities read off a table. Used to study
/// the batch-to-population drift.
pub fn mean_sampled_loss<R: rand::Rng>(
    g: &SimilarityTable,
    world: &DiscreteWorld,
    batch_size: usize,
    n_batches: usize,
    rng: &mut R,
) -> Result<f64> {
    check_shape(g, world)?;
    if batch_size == 0 || n_batches == 0 {
        return Err(Error::InvalidParameter {
            name: "batch",
            reason: "batch_size and n_batches must be positive".to_string(),
        });
    }
    let mut total = 0.0;
    for _ in 0..n_batches {
        let pairs = world.sample_pairs(rng, batch_size);
        total += empirical_loss(&BatchSimilarity::from_pairs(g, &pairs)?);
    }
    Ok(total / n_batches as f64)
}
