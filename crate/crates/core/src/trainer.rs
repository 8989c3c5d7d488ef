//! Free-parameter embedding training and the similarity gap.
//!
//! Instead of neural encoders, every instance owns a directly optimized
//! weighted point set; training minimizes the population symmetric InfoNCE
//! of the induced similarity table by projected gradient descent. This
//! isolates the capacity question (what tables can a similarity class
//! reach?) from encoder expressivity.
//!
//! The update loop follows the reference recipe: gradients flow through
//! weights, points, and the inverse temperature; after every step points are
//! reprojected to the unit sphere, weights are clipped to a box, and the
//! inverse temperature is clipped to `[1, 100]`. Clip hits are counted and
//! reported rather than hidden. In random-feature mode the feature draw is
//! resampled each step by default, making the gradient an unbiased
//! stochastic estimate of the exact-kernel gradient; final evaluation always
//! uses one fixed fresh draw so reported tables are deterministic.
//!
//! Loss traces are not required to be monotone (the objective is nonconvex);
//! what is verified instead is analytic-versus-finite-difference gradient
//! agreement (the `grad_check` field reports the measured relative error at
//! one seeded step of every run).

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classifier::{excess_risk, ExcessReport};
use crate::error::{Error, Result};
use crate::infonce::{population_grad, population_loss};
use crate::kernel::KernelSpec;
use crate::pointset::{embed, WeightedPointSet};
use crate::rff::{spectral_sample, RffParams, EVAL_FEATURES_PRESET};
use crate::world::{pmi, DiscreteWorld, SimilarityTable, SubsetPartition};

/// Default box half-width for weight clipping.
pub const DEFAULT_WEIGHT_CLIP: f64 = 100.0;
/// Inverse-temperature clip range.
pub const INV_TEMPERATURE_RANGE: (f64, f64) = (1.0, 100.0);
/// Inverse temperature at initialization (mid-range).
pub const INIT_INV_TEMPERATURE: f64 = 10.0;

/// Sup-norm gap between `g` and `g_star` minimized over an additive
/// constant: `max_ij |g_ij - g*_ij - shift|` at the optimal shift
/// `(max residual + min residual) / 2` (the Chebyshev center of the residual
/// range), so the reported gap is the tightest one consistent with shift
/// invariance.
pub fn delta_gap(g: &SimilarityTable, g_star: &SimilarityTable) -> Result<f64> {
    if g.nrows() != g_star.nrows() || g.ncols() != g_star.ncols() {
        return Err(Error::ShapeMismatch {
            expected: (g_star.nrows(), g_star.ncols()),
            got: (g.nrows(), g.ncols()),
        });
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&a, &b) in g.values().iter().zip(g_star.values().iter()) {
        let r = a - b;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((hi - lo) / 2.0)
}

/// How the model evaluates point-set similarities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SimilarityMode {
    /// Exact kernel double sums.
    Exact,
    /// Random-feature approximation of the shift-invariant kernel part.
    Rff {
        n_features: usize,
        #[serde(default = "default_resample")]
        resample_each_step: bool,
    },
}

fn default_resample() -> bool {
    true
}

/// A trained (or initializer-fresh) embedding model: one weighted point set
/// per instance on each side, an inverse temperature, and the similarity
/// recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub x_sets: Vec<WeightedPointSet>,
    pub y_sets: Vec<WeightedPointSet>,
    pub inv_temperature: f64,
    pub kernel: KernelSpec,
    pub mode: SimilarityMode,
}

impl EmbeddingModel {
    /// Point dimension shared by all sets.
    pub fn dim(&self) -> usize {
        self.x_sets.first().map_or(0, |s| s.dim())
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.x_sets.is_empty() || self.y_sets.is_empty() {
            return Err(Error::InvalidParameter {
                name: "model",
                reason: "both sides need at least one point set".to_string(),
            });
        }
        let d = self.dim();
        for set in self.x_sets.iter().chain(self.y_sets.iter()) {
            if set.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: set.dim(),
                });
            }
        }
        let (lo, hi) = INV_TEMPERATURE_RANGE;
        if !(self.inv_temperature >= lo && self.inv_temperature <= hi) {
            return Err(Error::InvalidParameter {
                name: "inv_temperature",
                reason: format!("must lie in [{lo}, {hi}], got {}", self.inv_temperature),
            });
        }
        if let SimilarityMode::Rff { n_features, .. } = self.mode {
            if n_features == 0 {
                return Err(Error::InvalidParameter {
                    name: "n_features",
                    reason: "must be positive".to_string(),
                });
            }
            if self.kernel.mixture_parts().2.is_none() {
                return Err(Error::NotShiftInvariant {
                    kind: self.kernel.kind_name(),
                });
            }
        }
        Ok(())
    }
}

/// Training hyperparameters. `weight_clip` defaults to 100 and
/// `eval_n_features` to the evaluation preset when deserialized from a
/// config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub m_x: usize,
    pub m_y: usize,
    pub d: usize,
    pub kernel: KernelSpec,
    pub mode: SimilarityMode,
    #[serde(default = "default_weight_clip")]
    pub weight_clip: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_eval_features")]
    pub eval_n_features: usize,
}

fn default_weight_clip() -> f64 {
    DEFAULT_WEIGHT_CLIP
}

fn default_eval_features() -> usize {
    EVAL_FEATURES_PRESET
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.steps > 0
            && self.m_x > 0
            && self.m_y > 0
            && self.d > 0
            && self.weight_clip > 0.0
            && self.weight_clip.is_finite()
            && (0.0..1.0).contains(&self.momentum);
        if !ok {
            return Err(Error::InvalidParameter {
                name: "train_config",
                reason: "need positive learning_rate/steps/m_x/m_y/d/weight_clip \
                         and momentum in [0, 1)"
                    .to_string(),
            });
        }
        if let SimilarityMode::Rff { n_features, .. } = self.mode {
            if n_features == 0 || self.eval_n_features == 0 {
                return Err(Error::InvalidParameter {
                    name: "n_features",
                    reason: "rff mode needs positive train and eval feature counts"
                        .to_string(),
                });
            }
            if self.kernel.mixture_parts().2.is_none() {
                return Err(Error::NotShiftInvariant {
                    kind: self.kernel.kind_name(),
                });
            }
        }
        Ok(())
    }
}

/// Everything measured about one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Population loss of the final evaluation table.
    pub final_loss: f64,
    /// Shift-adjusted sup-norm gap of the final table to PMI.
    pub delta: f64,
    /// Excess-risk chain of the final table.
    pub excess: ExcessReport,
    /// Per-step losses under the step's own feature draw (stochastic in
    /// resampling mode, hence not necessarily monotone).
    pub loss_trace: Vec<f64>,
    /// Worst relative error of the analytic gradient against central finite
    /// differences, measured at one seeded step with the feature draw held
    /// fixed.
    pub grad_check: f64,
    /// How many inverse-temperature updates were clipped back into range.
    pub temp_clip_hits: usize,
    /// How many weight coordinates were clipped over the whole run.
    pub weight_clip_hits: usize,
}

/// A finished fit: the model, its report, and the fixed evaluation feature
/// draw (present in random-feature mode) under which the report's table,
/// gap, and excess numbers were computed.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: EmbeddingModel,
    pub report: TrainReport,
    pub eval_rff: Option<RffParams>,
}

/// Similarity table induced by a model:
/// `g(x_i, y_j) = inv_temperature * similarity(x_sets[i], y_sets[j])`.
///
/// Exact mode evaluates kernel double sums; random-feature mode computes
/// inner products of embeddings under `rff`, which must then be supplied and
/// must have been sampled for the kernel's shift-invariant part.
pub fn induced_table(
    model: &EmbeddingModel,
    rff: Option<&RffParams>,
) -> Result<SimilarityTable> {
    model.validate()?;
    let n_x = model.x_sets.len();
    let n_y = model.y_sets.len();
    let mut values = Array2::zeros((n_x, n_y));
    match model.mode {
        SimilarityMode::Exact => {
            for (i, a) in model.x_sets.iter().enumerate() {
                for (j, b) in model.y_sets.iter().enumerate() {
                    values[[i, j]] = model.inv_temperature
                        * crate::pointset::exact_similarity(&model.kernel, a, b)?;
                }
            }
        }
        SimilarityMode::Rff { .. } => {
            let params = rff.ok_or(Error::MissingRffParams)?;
            let (alpha1, alpha2, nonlinear) = model.kernel.mixture_parts();
            if alpha2 > 0.0 {
                let expected = nonlinear.expect("validated: rff mode has a nonlinear part");
                if params.kernel() != expected {
                    return Err(Error::InvalidParameter {
                        name: "rff_params",
                        reason: format!(
                            "feature draw was sampled for {:?}, model needs {:?}",
                            params.kernel(),
                            expected
                        ),
                    });
                }
            }
            let ex: Vec<_> = model
                .x_sets
                .iter()
                .map(|s| embed(s, params, alpha1, alpha2))
                .collect::<Result<_>>()?;
            let ey: Vec<_> = model
                .y_sets
                .iter()
                .map(|s| embed(s, params, alpha1, alpha2))
                .collect::<Result<_>>()?;
            for (i, a) in ex.iter().enumerate() {
                for (j, b) in ey.iter().enumerate() {
                    values[[i, j]] =
                        model.inv_temperature * crate::pointset::approx_similarity(a, b)?;
                }
            }
        }
    }
    SimilarityTable::new(values)
}

/// Feature matrices `(F_x, F_y)` whose product `F_x F_y^T` reproduces the
/// model's induced table, for probing over explicit embeddings. Requires an
/// inner-product-form model: random-feature mode with a draw, or a kernel
/// with no shift-invariant part (`alpha2 = 0`).
pub fn feature_stacks(
    model: &EmbeddingModel,
    rff: Option<&RffParams>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    model.validate()?;
    let (alpha1, alpha2, _) = model.kernel.mixture_parts();
    let root_tau = model.inv_temperature.sqrt();
    let stack = |sets: &[WeightedPointSet]| -> Result<Array2<f64>> {
        let rows: Vec<Array1<f64>> = match (alpha2 > 0.0, rff) {
            (true, None) => return Err(Error::MissingRffParams),
            (true, Some(params)) => sets
                .iter()
                .map(|s| Ok(embed(s, params, alpha1, alpha2)?.to_feature_vector() * root_tau))
                .collect::<Result<_>>()?,
            (false, _) => sets
                .iter()
                .map(|s| Ok(s.weighted_mean() * (alpha1.sqrt() * root_tau)))
                .collect::<Result<_>>()?,
        };
        let m = rows.first().map_or(0, |r| r.len());
        let mut out = Array2::zeros((rows.len(), m));
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).assign(r);
        }
        Ok(out)
    };
    Ok((stack(&model.x_sets)?, stack(&model.y_sets)?))
}

// ---------------------------------------------------------------------------
// Training internals
// ---------------------------------------------------------------------------

/// Raw parameter block: weights and points per instance, plus the inverse
/// temperature. Gradients reuse the same layout. Shared with the analysis
/// module, whose Frobenius sweep optimizes the same parameterization under a
/// different objective.
#[derive(Debug, Clone)]
pub(crate) struct ParamBlock {
    pub(crate) xw: Vec<Array1<f64>>,
    pub(crate) xv: Vec<Array2<f64>>,
    pub(crate) yw: Vec<Array1<f64>>,
    pub(crate) yv: Vec<Array2<f64>>,
    pub(crate) tau: f64,
}

impl ParamBlock {
    pub(crate) fn init<R: Rng>(
        rng: &mut R,
        n_x: usize,
        n_y: usize,
        m_x: usize,
        m_y: usize,
        d: usize,
    ) -> Self {
        let mut sphere = |m: usize| -> Array2<f64> {
            let normal = Normal::new(0.0, 1.0).unwrap();
            let mut pts: Array2<f64> = Array2::from_shape_fn((m, d), |_| normal.sample(rng));
            for mut row in pts.rows_mut() {
                let norm = row.dot(&row).sqrt();
                if norm > 0.0 {
                    row.mapv_inplace(|v| v / norm);
                }
            }
            pts
        };
        let xv: Vec<_> = (0..n_x).map(|_| sphere(m_x)).collect();
        let yv: Vec<_> = (0..n_y).map(|_| sphere(m_y)).collect();
        let mut weights = |m: usize| -> Array1<f64> {
            let normal = Normal::new(0.0, 1.0 / (m as f64).sqrt()).unwrap();
            Array1::from_shape_fn(m, |_| normal.sample(rng))
        };
        let xw: Vec<_> = (0..n_x).map(|_| weights(m_x)).collect();
        let yw: Vec<_> = (0..n_y).map(|_| weights(m_y)).collect();
        ParamBlock {
            xw,
            xv,
            yw,
            yv,
            tau: INIT_INV_TEMPERATURE,
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        ParamBlock {
            xw: self.xw.iter().map(|a| Array1::zeros(a.len())).collect(),
            xv: self.xv.iter().map(|a| Array2::zeros(a.dim())).collect(),
            yw: self.yw.iter().map(|a| Array1::zeros(a.len())).collect(),
            yv: self.yv.iter().map(|a| Array2::zeros(a.dim())).collect(),
            tau: 0.0,
        }
    }

    fn to_model(&self, kernel: KernelSpec, mode: SimilarityMode) -> Result<EmbeddingModel> {
        let build = |ws: &[Array1<f64>], vs: &[Array2<f64>]| -> Result<Vec<WeightedPointSet>> {
            ws.iter()
                .zip(vs.iter())
                .map(|(w, v)| WeightedPointSet::new(w.clone(), v.clone()))
                .collect()
        };
        Ok(EmbeddingModel {
            x_sets: build(&self.xw, &self.xv)?,
            y_sets: build(&self.yw, &self.yv)?,
            inv_temperature: self.tau,
            kernel,
            mode,
        })
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for a in &self.xw {
            out.extend(a.iter());
        }
        for a in &self.xv {
            out.extend(a.iter());
        }
        for a in &self.yw {
            out.extend(a.iter());
        }
        for a in &self.yv {
            out.extend(a.iter());
        }
        out.push(self.tau);
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for a in &mut self.xw {
            for v in a.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        for a in &mut self.xv {
            for v in a.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        for a in &mut self.yw {
            for v in a.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        for a in &mut self.yv {
            for v in a.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        self.tau = *it.next().unwrap();
        assert!(it.next().is_none(), "flat parameter length mismatch");
    }
}

/// Per-kernel-evaluation context for one loss/gradient pass.
pub(crate) enum SimContext<'a> {
    Exact,
    Rff(&'a RffParams),
}

/// Raw (un-tempered) similarity matrix of the parameter block.
pub(crate) fn raw_similarities(
    params: &ParamBlock,
    kernel: &KernelSpec,
    ctx: &SimContext,
) -> Result<Array2<f64>> {
    let n_x = params.xw.len();
    let n_y = params.yw.len();
    let mut s = Array2::zeros((n_x, n_y));
    match ctx {
        SimContext::Exact => {
            for i in 0..n_x {
                for j in 0..n_y {
                    let gram = kernel.gram(params.xv[i].view(), params.yv[j].view())?;
                    s[[i, j]] = params.xw[i].dot(&gram.dot(&params.yw[j]));
                }
            }
        }
        SimContext::Rff(rp) => {
            let (alpha1, alpha2, _) = kernel.mixture_parts();
            let lin_x: Vec<Array1<f64>> = (0..n_x)
                .map(|i| params.xv[i].t().dot(&params.xw[i]))
                .collect();
            let lin_y: Vec<Array1<f64>> = (0..n_y)
                .map(|j| params.yv[j].t().dot(&params.yw[j]))
                .collect();
            let zbar = |v: &Array2<f64>, w: &Array1<f64>| -> Result<Array1<f64>> {
                let mut acc = Array1::zeros(rp.n_features());
                for (a, row) in v.rows().into_iter().enumerate() {
                    acc = acc + rp.featurize(row)? * w[a];
                }
                Ok(acc)
            };
            let zbar_x: Vec<Array1<f64>> = (0..n_x)
                .map(|i| zbar(&params.xv[i], &params.xw[i]))
                .collect::<Result<_>>()?;
            let zbar_y: Vec<Array1<f64>> = (0..n_y)
                .map(|j| zbar(&params.yv[j], &params.yw[j]))
                .collect::<Result<_>>()?;
            for i in 0..n_x {
                for j in 0..n_y {
                    s[[i, j]] = alpha1 * lin_x[i].dot(&lin_y[j])
                        + alpha2 * zbar_x[i].dot(&zbar_y[j]);
                }
            }
        }
    }
    Ok(s)
}

fn loss_of(
    params: &ParamBlock,
    world: &DiscreteWorld,
    kernel: &KernelSpec,
    ctx: &SimContext,
) -> Result<f64> {
    let s = raw_similarities(params, kernel, ctx)?;
    let g = SimilarityTable::new(s * params.tau)?;
    population_loss(&g, world)
}

/// Loss plus analytic gradients with respect to every parameter.
fn loss_and_grads(
    params: &ParamBlock,
    world: &DiscreteWorld,
    kernel: &KernelSpec,
    ctx: &SimContext,
) -> Result<(f64, ParamBlock)> {
    let s = raw_similarities(params, kernel, ctx)?;
    let g = SimilarityTable::new(&s * params.tau)?;
    let loss = population_loss(&g, world)?;
    let table_grad = population_grad(&g, world)?;
    // Upstream factor per cell for the raw similarities.
    let c = &table_grad * params.tau;
    let mut grads = weighted_sim_grads(params, kernel, ctx, &c)?;
    grads.tau = (&table_grad * &s).sum();
    Ok((loss, grads))
}

/// Gradients of `sum_ij c_ij * S_ij` over weights and points, where `S` is
/// the raw similarity matrix of the block. The caller supplies the upstream
/// factors `c`; the inverse-temperature slot of the result is left at zero.
pub(crate) fn weighted_sim_grads(
    params: &ParamBlock,
    kernel: &KernelSpec,
    ctx: &SimContext,
    c: &Array2<f64>,
) -> Result<ParamBlock> {
    let n_x = params.xw.len();
    let n_y = params.yw.len();
    let mut grads = params.zeros_like();
    match ctx {
        SimContext::Exact => {
            for i in 0..n_x {
                for j in 0..n_y {
                    let cij = c[[i, j]];
                    if cij == 0.0 {
                        continue;
                    }
                    for a in 0..params.xw[i].len() {
                        let u = params.xv[i].row(a);
                        let mut k_sum = 0.0;
                        let mut gu_sum: Array1<f64> = Array1::zeros(u.len());
                        for b in 0..params.yw[j].len() {
                            let v = params.yv[j].row(b);
                            let (k, gu) = kernel.eval_with_grad(u, v)?;
                            let wb = params.yw[j][b];
                            k_sum += wb * k;
                            gu_sum = gu_sum + gu * wb;
                            // Gradient with respect to the y-side point uses
                            // kernel symmetry: grad_v k(u, v) = grad_u k(v, u).
                            let (_, gv) = kernel.eval_with_grad(v, u)?;
                            grads.yw[j][b] += cij * params.xw[i][a] * k;
                            let scale = cij * params.xw[i][a] * wb;
                            grads.yv[j]
                                .row_mut(b)
                                .zip_mut_with(&gv, |acc, &gvi| *acc += scale * gvi);
                        }
                        grads.xw[i][a] += cij * k_sum;
                        let scale = cij * params.xw[i][a];
                        grads.xv[i]
                            .row_mut(a)
                            .zip_mut_with(&gu_sum, |acc, &gui| *acc += scale * gui);
                    }
                }
            }
        }
        SimContext::Rff(rp) => {
            let (alpha1, alpha2, _) = kernel.mixture_parts();
            let lin_x: Vec<Array1<f64>> = (0..n_x)
                .map(|i| params.xv[i].t().dot(&params.xw[i]))
                .collect();
            let lin_y: Vec<Array1<f64>> = (0..n_y)
                .map(|j| params.yv[j].t().dot(&params.yw[j]))
                .collect();
            let feats = |v: &Array2<f64>| -> Result<Array2<f64>> {
                let mut z = Array2::zeros((v.nrows(), rp.n_features()));
                for (a, row) in v.rows().into_iter().enumerate() {
                    z.row_mut(a).assign(&rp.featurize(row)?);
                }
                Ok(z)
            };
            let zx: Vec<Array2<f64>> = params.xv.iter().map(|v| feats(v)).collect::<Result<_>>()?;
            let zy: Vec<Array2<f64>> = params.yv.iter().map(|v| feats(v)).collect::<Result<_>>()?;
            let zbar_x: Vec<Array1<f64>> =
                (0..n_x).map(|i| zx[i].t().dot(&params.xw[i])).collect();
            let zbar_y: Vec<Array1<f64>> =
                (0..n_y).map(|j| zy[j].t().dot(&params.yw[j])).collect();

            let d = params.xv.first().map_or(0, |v| v.ncols());
            let nf = rp.n_features();
            for i in 0..n_x {
                // Downstream sums over the other side.
                let mut lin_down = Array1::zeros(d);
                let mut z_down = Array1::zeros(nf);
                for j in 0..n_y {
                    let cij = c[[i, j]];
                    lin_down = lin_down + &lin_y[j] * cij;
                    z_down = z_down + &zbar_y[j] * cij;
                }
                for a in 0..params.xw[i].len() {
                    grads.xw[i][a] += alpha1 * params.xv[i].row(a).dot(&lin_down)
                        + alpha2 * zx[i].row(a).dot(&z_down);
                    let jac = rp.jacobian(params.xv[i].row(a))?;
                    let pull = jac.t().dot(&z_down);
                    let w = params.xw[i][a];
                    grads.xv[i].row_mut(a).zip_mut_with(
                        &(&lin_down * alpha1 + &pull * alpha2),
                        |acc, &v| *acc += w * v,
                    );
                }
            }
            for j in 0..n_y {
                let mut lin_down = Array1::zeros(d);
                let mut z_down = Array1::zeros(nf);
                for i in 0..n_x {
                    let cij = c[[i, j]];
                    lin_down = lin_down + &lin_x[i] * cij;
                    z_down = z_down + &zbar_x[i] * cij;
                }
                for b in 0..params.yw[j].len() {
                    grads.yw[j][b] += alpha1 * params.yv[j].row(b).dot(&lin_down)
                        + alpha2 * zy[j].row(b).dot(&z_down);
                    let jac = rp.jacobian(params.yv[j].row(b))?;
                    let pull = jac.t().dot(&z_down);
                    let w = params.yw[j][b];
                    grads.yv[j].row_mut(b).zip_mut_with(
                        &(&lin_down * alpha1 + &pull * alpha2),
                        |acc, &v| *acc += w * v,
                    );
                }
            }
        }
    }
    Ok(grads)
}

/// Worst per-coordinate relative error of the analytic gradient against
/// central finite differences, with the feature draw held fixed.
///
/// The denominator is floored at 1e-3: for coordinates below that scale the
/// comparison degrades to an absolute check, because central differences
/// carry irreducible noise of roughly `eps * |loss| / h` and cannot certify
/// relative error on near-zero entries (as at a late training step close to
/// stationarity). A genuinely wrong gradient term still trips the floored
/// ratio by orders of magnitude.
fn finite_difference_check(
    params: &ParamBlock,
    world: &DiscreteWorld,
    kernel: &KernelSpec,
    ctx: &SimContext,
    analytic: &ParamBlock,
) -> Result<f64> {
    let flat = params.flatten();
    let grad_flat = analytic.flatten();
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for idx in 0..flat.len() {
        let h = 1e-6 * flat[idx].abs().max(1.0);
        let mut bumped = flat.clone();
        bumped[idx] = flat[idx] + h;
        probe.assign_flat(&bumped);
        let f_plus = loss_of(&probe, world, kernel, ctx)?;
        bumped[idx] = flat[idx] - h;
        probe.assign_flat(&bumped);
        let f_minus = loss_of(&probe, world, kernel, ctx)?;
        let fd = (f_plus - f_minus) / (2.0 * h);
        let denom = fd.abs().max(grad_flat[idx].abs()).max(1e-3);
        worst = worst.max((fd - grad_flat[idx]).abs() / denom);
    }
    Ok(worst)
}

fn check_partition_compat(world: &DiscreteWorld, partition: &SubsetPartition) -> Result<()> {
    if partition.n_y() != world.n_y() || partition.n_classes() != world.n_classes() {
        return Err(Error::InvalidPartition(format!(
            "partition ({} captions, {} classes) does not match world ({}, {})",
            partition.n_y(),
            partition.n_classes(),
            world.n_y(),
            world.n_classes()
        )));
    }
    partition.require_nonempty()
}

/// Fits an embedding model to a world by projected gradient descent on the
/// population symmetric InfoNCE of the induced table, then evaluates the
/// final table's gap to PMI and its excess-risk chain on `partition`.
pub fn fit(
    world: &DiscreteWorld,
    partition: &SubsetPartition,
    config: &TrainConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    check_partition_compat(world, partition)?;
    let pmi_table = pmi(world)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamBlock::init(
        &mut rng,
        world.n_x(),
        world.n_y(),
        config.m_x,
        config.m_y,
        config.d,
    );
    let mut velocity = params.zeros_like();

    let nonlinear = config.kernel.mixture_parts().2.cloned();
    let (rff_n, resample) = match config.mode {
        SimilarityMode::Exact => (0, false),
        SimilarityMode::Rff {
            n_features,
            resample_each_step,
        } => (n_features, resample_each_step),
    };
    let mut step_draw: Option<RffParams> = None;
    let grad_check_step = rng.random_range(0..config.steps);

    let mut loss_trace = Vec::with_capacity(config.steps);
    let mut grad_check = f64::NAN;
    let mut temp_clip_hits = 0usize;
    let mut weight_clip_hits = 0usize;

    for step in 0..config.steps {
        if rff_n > 0 && (resample || step_draw.is_none()) {
            let draw_seed = rng.random::<u64>();
            step_draw = Some(spectral_sample(
                nonlinear.as_ref().expect("validated: rff mode has a nonlinear part"),
                config.d,
                rff_n,
                draw_seed,
            )?);
        }
        let ctx = match &step_draw {
            Some(rp) => SimContext::Rff(rp),
            None => SimContext::Exact,
        };
        let (loss, grads) = loss_and_grads(&params, world, &config.kernel, &ctx)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        loss_trace.push(loss);
        if step == grad_check_step {
            grad_check =
                finite_difference_check(&params, world, &config.kernel, &ctx, &grads)?;
        }

        // Momentum update on every block, then the constraint pass.
        let lr = config.learning_rate;
        let mu = config.momentum;
        let clip = config.weight_clip;
        for (w, (vw, gw)) in params
            .xw
            .iter_mut()
            .chain(params.yw.iter_mut())
            .zip(velocity.xw.iter_mut().chain(velocity.yw.iter_mut()).zip(
                grads.xw.iter().chain(grads.yw.iter()),
            ))
        {
            vw.zip_mut_with(gw, |v, &g| *v = mu * *v - lr * g);
            w.zip_mut_with(vw, |x, &v| *x += v);
            for x in w.iter_mut() {
                if x.abs() > clip {
                    *x = x.clamp(-clip, clip);
                    weight_clip_hits += 1;
                }
            }
        }
        for (pts, (vv, gv)) in params
            .xv
            .iter_mut()
            .chain(params.yv.iter_mut())
            .zip(velocity.xv.iter_mut().chain(velocity.yv.iter_mut()).zip(
                grads.xv.iter().chain(grads.yv.iter()),
            ))
        {
            vv.zip_mut_with(gv, |v, &g| *v = mu * *v - lr * g);
            pts.zip_mut_with(vv, |x, &v| *x += v);
            for mut row in pts.rows_mut() {
                let norm = row.dot(&row).sqrt();
                if norm > 0.0 {
                    row.mapv_inplace(|v| v / norm);
                }
            }
        }
        velocity.tau = mu * velocity.tau - lr * grads.tau;
        params.tau += velocity.tau;
        let (lo, hi) = INV_TEMPERATURE_RANGE;
        if params.tau < lo || params.tau > hi {
            params.tau = params.tau.clamp(lo, hi);
            temp_clip_hits += 1;
        }
    }

    let model = params.to_model(config.kernel.clone(), config.mode)?;
    let eval_rff = if rff_n > 0 {
        let eval_seed = rng.random::<u64>();
        Some(spectral_sample(
            nonlinear.as_ref().expect("validated: rff mode has a nonlinear part"),
            config.d,
            config.eval_n_features,
            eval_seed,
        )?)
    } else {
        None
    };
    let table = induced_table(&model, eval_rff.as_ref())?;
    let final_loss = population_loss(&table, world)?;
    let delta = delta_gap(&table, &pmi_table)?;
    let excess = excess_risk(&table, world, partition)?;
    Ok(FitOutcome {
        model,
        report: TrainReport {
            final_loss,
            delta,
            excess,
            loss_trace,
            grad_check,
            temp_clip_hits,
            weight_clip_hits,
        },
        eval_rff,
    })
}
