//! Rank ceilings of bilinear similarities and the capacity sweep that shows
//! weighted point sets escaping them.
//!
//! Bilinear-plus-constant similarities over d-dimensional embeddings can
//! only produce tables of rank at most d + 1; `verify_rank_bound` checks
//! that ceiling directly on random instances and `bilinear_fit_floor` turns
//! it into a certified Frobenius error floor for approximating a given
//! table. `universality_sweep` then fits weighted point set models of
//! growing size M directly to a PMI table and reports how the error falls
//! as M grows, while a linear kernel stays pinned at the floor.
//!
//! All shift-handling is explicit: similarity classes carry a free additive
//! constant (the InfoNCE objective cannot distinguish shifted tables), so
//! both the floor and the sweep minimize over it, and sup errors are
//! reported at the optimal shift.
//!
//! Floors are Frobenius-norm statements (truncated-SVD optimality); the
//! sup-norm analogue is NP-hard in general and is reported empirically, not
//! asserted.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::trainer::{delta_gap, raw_similarities, weighted_sim_grads, ParamBlock, SimContext};
use crate::world::{pmi, DiscreteWorld, SimilarityTable};

/// Relative threshold under which a singular value counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-8;
/// Size of the grid over which the additive constant is searched.
pub const GAMMA_GRID_POINTS: usize = 201;

/// Singular-value summary of a (shifted) product matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    /// Singular values, nonincreasing.
    pub singular_values: Vec<f64>,
    /// Whether the matrix respects the rank ceiling d + 1.
    pub rank_bound_ok: bool,
    /// Frobenius mass beyond rank d + 1, `sqrt(sum_{k > d+1} sigma_k^2)`.
    pub frobenius_floor: f64,
}

/// Singular values of an arbitrary real matrix, sorted nonincreasing.
pub fn singular_values(values: ArrayView2<f64>) -> Vec<f64> {
    let (n, m) = values.dim();
    let mat = DMatrix::from_row_iterator(n, m, values.iter().copied());
    let mut svals: Vec<f64> = mat.singular_values().iter().copied().collect();
    svals.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));
    svals
}

/// Number of singular values above `rel_tol` times the largest one.
pub fn numerical_rank(values: ArrayView2<f64>, rel_tol: f64) -> usize {
    let svals = singular_values(values);
    let top = svals.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    svals.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Checks the rank ceiling for embeddings of dimension d: for any d x N
/// matrices A, B and constant c, the N x N matrix `A^T B - c J` (J all
/// ones) has rank at most d + 1, so its (d+2)-th singular value must vanish.
pub fn verify_rank_bound(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    c: f64,
) -> Result<RankReport> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (d, n) = a.dim();
    if n <= d + 1 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: format!("need more than d + 1 = {} columns, got {n}", d + 1),
        });
    }
    if !c.is_finite() || a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "rank_bound_input",
            reason: "entries must be finite".to_string(),
        });
    }
    let product = a.t().dot(&b) - c;
    let svals = singular_values(product.view());
    let top = svals[0];
    let rank_bound_ok = svals[d + 1] <= RANK_TOLERANCE * top;
    let frobenius_floor = svals[d + 1..].iter().map(|s| s * s).sum::<f64>().sqrt();
    Ok(RankReport {
        singular_values: svals,
        rank_bound_ok,
        frobenius_floor,
    })
}

/// Certified Frobenius floor for approximating `g` by any similarity of the
/// form `Z_x^T Z_y + Gamma J` with d-dimensional embeddings: the truncated
/// SVD gives the best rank-(d+1) approximation of the shifted table, so
/// `sqrt(sum_{k > d+1} sigma_k(g - Gamma J)^2)`, minimized over a
/// `GAMMA_GRID_POINTS`-point grid spanning the entry range of `g`, lower
/// bounds the error of every such fit at the grid's resolution.
pub fn bilinear_fit_floor(g: &SimilarityTable, d: usize) -> Result<f64> {
    let (n, m) = (g.nrows(), g.ncols());
    if d == 0 || d + 1 >= n.min(m) {
        return Err(Error::InvalidParameter {
            name: "d",
            reason: format!("need 0 < d + 1 < min(n_x, n_y) = {}, got d = {d}", n.min(m)),
        });
    }
    let lo = g.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = g.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut floor = f64::INFINITY;
    for k in 0..GAMMA_GRID_POINTS {
        let gamma = lo + (hi - lo) * k as f64 / (GAMMA_GRID_POINTS - 1) as f64;
        let shifted = g.values().to_owned() - gamma;
        let svals = singular_values(shifted.view());
        let tail = svals[d + 1..].iter().map(|s| s * s).sum::<f64>().sqrt();
        floor = floor.min(tail);
    }
    Ok(floor)
}

/// Hyperparameters for the Frobenius fits inside `universality_sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_sweep_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_sweep_steps")]
    pub steps: usize,
    #[serde(default = "default_sweep_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sweep_momentum")]
    pub momentum: f64,
}

fn default_sweep_lr() -> f64 {
    0.05
}

fn default_sweep_steps() -> usize {
    2000
}

fn default_sweep_restarts() -> usize {
    5
}

fn default_sweep_momentum() -> f64 {
    0.9
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            learning_rate: default_sweep_lr(),
            steps: default_sweep_steps(),
            restarts: default_sweep_restarts(),
            seed: 0,
            momentum: default_sweep_momentum(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.steps > 0
            && self.restarts > 0
            && (0.0..1.0).contains(&self.momentum);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "sweep_config",
                reason: "need positive learning_rate/steps/restarts and momentum in [0, 1)"
                    .to_string(),
            })
        }
    }
}

/// One restart of one sweep setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Points per instance.
    pub m: usize,
    /// Seed of this restart's initialization.
    pub restart_seed: u64,
    /// Shift-optimal Frobenius error of the best iterate.
    pub frobenius_error: f64,
    /// Shift-optimal sup error of the best iterate.
    pub sup_error: f64,
}

/// All restarts of all sweep settings, in run order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    /// Median sup error over the restarts recorded for `m`.
    pub fn median_sup_error(&self, m: usize) -> Option<f64> {
        let mut sups: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.m == m)
            .map(|p| p.sup_error)
            .collect();
        if sups.is_empty() {
            return None;
        }
        sups.sort_by(|a, b| a.partial_cmp(b).expect("sup errors are finite"));
        let mid = sups.len() / 2;
        Some(if sups.len() % 2 == 1 {
            sups[mid]
        } else {
            (sups[mid - 1] + sups[mid]) / 2.0
        })
    }

    /// Smallest Frobenius error over the restarts recorded for `m`.
    pub fn best_frobenius_error(&self, m: usize) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.m == m)
            .map(|p| p.frobenius_error)
            .min_by(|a, b| a.partial_cmp(b).expect("errors are finite"))
    }

    /// Smallest sup error over the restarts recorded for `m`.
    pub fn best_sup_error(&self, m: usize) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.m == m)
            .map(|p| p.sup_error)
            .min_by(|a, b| a.partial_cmp(b).expect("errors are finite"))
    }
}

/// Shift-optimal Frobenius error: residual norm after removing the mean
/// residual (the least-squares-optimal additive constant).
fn centered_frobenius(resid: &Array2<f64>) -> f64 {
    let mean = resid.sum() / resid.len() as f64;
    resid.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>().sqrt()
}

/// Fits weighted point set models of growing size directly to the PMI
/// table of `world` and reports, per size M and restart, the shift-optimal
/// Frobenius and sup errors of the best iterate found.
///
/// The objective is `min over Gamma of ||S(params) + Gamma J - pmi||_F^2`
/// (the constant is profiled out in closed form as the mean residual), so
/// results are directly comparable to `bilinear_fit_floor`, which minimizes
/// over the same free constant. Points and weights are unconstrained;
/// exact kernel evaluation is used throughout. A restart that diverges
/// contributes its best finite iterate.
pub fn universality_sweep(
    world: &DiscreteWorld,
    kernel: &KernelSpec,
    m_values: &[usize],
    d: usize,
    config: &SweepConfig,
) -> Result<SweepCurve> {
    kernel.validate()?;
    config.validate()?;
    if m_values.is_empty() || m_values.iter().any(|&m| m == 0) {
        return Err(Error::InvalidParameter {
            name: "m_values",
            reason: "need at least one positive point count".to_string(),
        });
    }
    if d == 0 {
        return Err(Error::InvalidParameter {
            name: "d",
            reason: "need a positive point dimension".to_string(),
        });
    }
    let g_star = pmi(world)?;
    let target = g_star.values();
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut points = Vec::with_capacity(m_values.len() * config.restarts);
    let ctx = SimContext::Exact;

    for &m in m_values {
        for _ in 0..config.restarts {
            let restart_seed = master.random::<u64>();
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed);
            let mut params =
                ParamBlock::init(&mut rng, world.n_x(), world.n_y(), m, m, d);
            params.tau = 1.0;
            let mut velocity = params.zeros_like();
            let mut best_fro = f64::INFINITY;
            let mut best_params = params.clone();

            for _ in 0..config.steps {
                let s = raw_similarities(&params, kernel, &ctx)?;
                let resid = &s - &target;
                let fro = centered_frobenius(&resid);
                if fro < best_fro {
                    best_fro = fro;
                    best_params = params.clone();
                }
                // Gradient of the mean-squared centered residual: scaling by
                // the cell count keeps step sizes meaningful across world
                // sizes (the reported error stays the plain Frobenius norm).
                let mean = resid.sum() / resid.len() as f64;
                let cells = resid.len() as f64;
                let c = resid.mapv(|r| 2.0 * (r - mean) / cells);
                let grads = weighted_sim_grads(&params, kernel, &ctx, &c)?;
                let lr = config.learning_rate;
                let mu = config.momentum;
                for (w, (vw, gw)) in params.xw.iter_mut().chain(params.yw.iter_mut()).zip(
                    velocity
                        .xw
                        .iter_mut()
                        .chain(velocity.yw.iter_mut())
                        .zip(grads.xw.iter().chain(grads.yw.iter())),
                ) {
                    vw.zip_mut_with(gw, |v, &g| *v = mu * *v - lr * g);
                    w.zip_mut_with(vw, |x, &v| *x += v);
                }
                for (pts, (vv, gv)) in params.xv.iter_mut().chain(params.yv.iter_mut()).zip(
                    velocity
                        .xv
                        .iter_mut()
                        .chain(velocity.yv.iter_mut())
                        .zip(grads.xv.iter().chain(grads.yv.iter())),
                ) {
                    vv.zip_mut_with(gv, |v, &g| *v = mu * *v - lr * g);
                    pts.zip_mut_with(vv, |x, &v| *x += v);
                }
            }

            // Score the state left behind by the last update as well.
            let s = raw_similarities(&params, kernel, &ctx)?;
            let fro = centered_frobenius(&(&s - &target));
            if fro < best_fro {
                best_fro = fro;
                best_params = params;
            }

            let s_best = raw_similarities(&best_params, kernel, &ctx)?;
            let sup_error = delta_gap(&SimilarityTable::new(s_best)?, &g_star)?;
            points.push(SweepPoint {
                m,
                restart_seed,
                frobenius_error: best_fro,
                sup_error,
            });
        }
    }
    Ok(SweepCurve { points })
}
