//! Weighted point sets and their similarities.
//!
//! An instance is represented by `M` weighted points `{(w_i, v_i)}` in R^d.
//! The similarity of two instances under a kernel `k` is the double sum
//! `sum_{i,j} w_i^A w_j^B k(v_i^A, v_j^B)`, evaluated either exactly or
//! through the concatenated embedding
//! `[sqrt(alpha1) vbar, sqrt(alpha2) zbar]` with `vbar = sum_i w_i v_i` and
//! `zbar = sum_i w_i z(v_i)`, whose inner product is an unbiased estimate of
//! the combination-kernel similarity. Weights may be negative; that freedom
//! is what lets a point set place mass and anti-mass.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::rff::RffParams;

/// Tolerance for the unit-norm check when the `normalized` flag is set.
const NORM_TOL: f64 = 1e-9;

/// A set of weighted points, the laboratory's instance representation.
///
/// Serializes to `{"weights": [...], "points": [[...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PointSetData", into = "PointSetData")]
pub struct WeightedPointSet {
    weights: Array1<f64>,
    points: Array2<f64>,
    normalized: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointSetData {
    weights: Vec<f64>,
    points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    normalized: bool,
}

impl TryFrom<PointSetData> for WeightedPointSet {
    type Error = Error;

    fn try_from(data: PointSetData) -> Result<Self> {
        let m = data.points.len();
        if m == 0 {
            return Err(Error::InvalidParameter {
                name: "points",
                reason: "a point set needs at least one point".to_string(),
            });
        }
        let d = data.points[0].len();
        let mut flat = Vec::with_capacity(m * d);
        for row in &data.points {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        let points = Array2::from_shape_vec((m, d), flat).expect("shape checked above");
        let set = WeightedPointSet::with_flag(
            Array1::from_vec(data.weights),
            points,
            data.normalized,
        )?;
        Ok(set)
    }
}

impl From<WeightedPointSet> for PointSetData {
    fn from(set: WeightedPointSet) -> Self {
        PointSetData {
            weights: set.weights.to_vec(),
            points: set.points.outer_iter().map(|r| r.to_vec()).collect(),
            normalized: set.normalized,
        }
    }
}

impl WeightedPointSet {
    /// Builds a set from a weight vector and row-stacked points.
    pub fn new(weights: Array1<f64>, points: Array2<f64>) -> Result<Self> {
        Self::with_flag(weights, points, false)
    }

    /// Builds a set whose points are required to lie on the unit sphere.
    pub fn new_normalized(weights: Array1<f64>, points: Array2<f64>) -> Result<Self> {
        Self::with_flag(weights, points, true)
    }

    fn with_flag(weights: Array1<f64>, points: Array2<f64>, normalized: bool) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidParameter {
                name: "points",
                reason: "a point set needs at least one point of positive dimension".to_string(),
            });
        }
        if weights.len() != points.nrows() {
            return Err(Error::DimensionMismatch {
                expected: points.nrows(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "points",
                reason: "weights and points must be finite".to_string(),
            });
        }
        if normalized {
            for (i, row) in points.outer_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if (norm - 1.0).abs() > NORM_TOL {
                    return Err(Error::InvalidParameter {
                        name: "points",
                        reason: format!("point {i} has norm {norm}, expected 1 within {NORM_TOL}"),
                    });
                }
            }
        }
        Ok(WeightedPointSet {
            weights,
            points,
            normalized,
        })
    }

    /// Number of points `M`.
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // M >= 1 by construction
    }

    /// Point dimension `d`.
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    /// Weighted sum of the points, `vbar = sum_i w_i v_i`.
    pub fn weighted_mean(&self) -> Array1<f64> {
        self.points.t().dot(&self.weights)
    }

    /// Weighted sum of featurized points, `zbar = sum_i w_i z(v_i)`.
    pub fn weighted_feature_mean(&self, params: &RffParams) -> Result<Array1<f64>> {
        if params.input_dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: params.input_dim(),
            });
        }
        let mut acc = Array1::zeros(params.n_features());
        for (w, v) in self.weights.iter().zip(self.points.outer_iter()) {
            acc += &(params.featurize(v)? * *w);
        }
        Ok(acc)
    }
}

/// The concatenated embedding of a weighted point set.
///
/// `linear_part` is `sqrt(alpha1) * vbar` (dimension d); `rff_part` is
/// `sqrt(alpha2) * zbar` (dimension D). The inner product of two embeddings
/// equals `alpha1 vbar . vbar' + alpha2 zbar . zbar'` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSetEmbedding {
    pub linear_part: Array1<f64>,
    pub rff_part: Array1<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl PointSetEmbedding {
    /// Concatenates both parts into a single feature vector of length d + D.
    pub fn to_feature_vector(&self) -> Array1<f64> {
        let mut out = Array1::zeros(self.linear_part.len() + self.rff_part.len());
        for (i, x) in self.linear_part.iter().enumerate() {
            out[i] = *x;
        }
        for (i, x) in self.rff_part.iter().enumerate() {
            out[self.linear_part.len() + i] = *x;
        }
        out
    }
}

/// Exact double-sum similarity `sum_{i,j} w_i^A w_j^B k(v_i^A, v_j^B)`.
pub fn exact_similarity(
    kernel: &KernelSpec,
    a: &WeightedPointSet,
    b: &WeightedPointSet,
) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let gram = kernel.gram(a.points.view(), b.points.view())?;
    Ok(a.weights.dot(&gram.dot(&b.weights)))
}

/// Embeds a point set as `[sqrt(alpha1) vbar, sqrt(alpha2) zbar]`.
///
/// With `alpha2 = 0` the RFF part is the zero vector (nothing is featurized).
pub fn embed(
    set: &WeightedPointSet,
    params: &RffParams,
    alpha1: f64,
    alpha2: f64,
) -> Result<PointSetEmbedding> {
    if !(alpha1.is_finite() && alpha2.is_finite() && alpha1 >= 0.0 && alpha2 >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("alpha1, alpha2 must be finite and nonnegative, got ({alpha1}, {alpha2})"),
        });
    }
    let linear_part = set.weighted_mean() * alpha1.sqrt();
    let rff_part = if alpha2 > 0.0 {
        set.weighted_feature_mean(params)? * alpha2.sqrt()
    } else {
        if params.input_dim() != set.dim() {
            return Err(Error::DimensionMismatch {
                expected: set.dim(),
                got: params.input_dim(),
            });
        }
        Array1::zeros(params.n_features())
    };
    Ok(PointSetEmbedding {
        linear_part,
        rff_part,
        alpha1,
        alpha2,
    })
}

/// Inner product of two concatenated embeddings.
pub fn approx_similarity(ea: &PointSetEmbedding, eb: &PointSetEmbedding) -> Result<f64> {
    if ea.alpha1 != eb.alpha1 || ea.alpha2 != eb.alpha2 {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!(
                "embeddings mix different kernels: ({}, {}) vs ({}, {})",
                ea.alpha1, ea.alpha2, eb.alpha1, eb.alpha2
            ),
        });
    }
    if ea.linear_part.len() != eb.linear_part.len() {
        return Err(Error::DimensionMismatch {
            expected: ea.linear_part.len(),
            got: eb.linear_part.len(),
        });
    }
    if ea.rff_part.len() != eb.rff_part.len() {
        return Err(Error::DimensionMismatch {
            expected: ea.rff_part.len(),
            got: eb.rff_part.len(),
        });
    }
    Ok(ea.linear_part.dot(&eb.linear_part) + ea.rff_part.dot(&eb.rff_part))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rff::spectral_sample;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn singleton(w: f64, v: &[f64]) -> WeightedPointSet {
        let points = Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap();
        WeightedPointSet::new(arr1(&[w]), points).unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng, m: usize, d: usize) -> WeightedPointSet {
        let weights = Array1::from_shape_fn(m, |_| rng.random_range(-1.5..1.5));
        let points = Array2::from_shape_fn((m, d), |_| rng.random_range(-1.0..1.0));
        WeightedPointSet::new(weights, points).unwrap()
    }

    #[test]
    fn singleton_pair_reduces_to_kernel_eval() {
        let kernel = KernelSpec::Gaussian { sigma: 0.75 };
        let a = singleton(1.0, &[0.4, -0.3]);
        let b = singleton(1.0, &[-0.8, 0.2]);
        let direct = kernel
            .eval(a.points().row(0), b.points().row(0))
            .unwrap();
        assert_abs_diff_eq!(
            exact_similarity(&kernel, &a, &b).unwrap(),
            direct,
            epsilon = 1e-15
        );
        // Bilinearity in the weights.
        let a2 = singleton(2.0, &[0.4, -0.3]);
        let b2 = singleton(0.5, &[-0.8, 0.2]);
        assert_abs_diff_eq!(
            exact_similarity(&kernel, &a2, &b2).unwrap(),
            direct,
            epsilon = 1e-15
        );
    }

    #[test]
    fn opposite_weights_on_identical_points_cancel() {
        let kernel = KernelSpec::Imq { c: 1.0 };
        let a = WeightedPointSet::new(
            arr1(&[1.0, -1.0]),
            arr2(&[[0.3, 0.9], [0.3, 0.9]]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_set(&mut rng, 4, 2);
        assert_abs_diff_eq!(exact_similarity(&kernel, &a, &b).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn unit_singletons_with_linear_kernel_reproduce_bilinear_similarity() {
        let a = singleton(1.0, &[0.1, 0.7, -0.4]);
        let b = singleton(1.0, &[0.9, -0.2, 0.5]);
        let expected = a.points().row(0).dot(&b.points().row(0));
        assert_abs_diff_eq!(
            exact_similarity(&KernelSpec::Linear, &a, &b).unwrap(),
            expected,
            epsilon = 1e-15
        );
    }

    #[test]
    fn embedding_of_singleton_is_scaled_point_and_features() {
        let params = spectral_sample(&KernelSpec::Gaussian { sigma: 1.0 }, 2, 16, 4).unwrap();
        let v = arr1(&[0.3, -0.5]);
        let set = singleton(1.0, &[0.3, -0.5]);
        let e = embed(&set, &params, 0.4, 0.6).unwrap();
        let z = params.featurize(v.view()).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(e.linear_part[i], 0.4f64.sqrt() * v[i], epsilon = 1e-15);
        }
        for t in 0..16 {
            assert_abs_diff_eq!(e.rff_part[t], 0.6f64.sqrt() * z[t], epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_weights_give_zero_embedding() {
        let params = spectral_sample(&KernelSpec::Gaussian { sigma: 1.0 }, 2, 8, 4).unwrap();
        let set = WeightedPointSet::new(arr1(&[0.0, 0.0]), arr2(&[[1.0, 0.0], [0.0, 1.0]]))
            .unwrap();
        let e = embed(&set, &params, 0.5, 0.5).unwrap();
        assert!(e.linear_part.iter().all(|x| *x == 0.0));
        assert!(e.rff_part.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn alpha2_zero_leaves_rff_part_zero() {
        let params = spectral_sample(&KernelSpec::Gaussian { sigma: 1.0 }, 2, 8, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set = random_set(&mut rng, 3, 2);
        let e = embed(&set, &params, 1.0, 0.0).unwrap();
        assert_eq!(e.rff_part.len(), 8);
        assert!(e.rff_part.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn alpha2_zero_approx_equals_scaled_linear_exact() {
        let params = spectral_sample(&KernelSpec::Gaussian { sigma: 1.0 }, 3, 8, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let a = random_set(&mut rng, 3, 3);
            let b = random_set(&mut rng, 2, 3);
            let ea = embed(&a, &params, 0.7, 0.0).unwrap();
            let eb = embed(&b, &params, 0.7, 0.0).unwrap();
            let approx = approx_similarity(&ea, &eb).unwrap();
            let exact = 0.7 * exact_similarity(&KernelSpec::Linear, &a, &b).unwrap();
            assert_abs_diff_eq!(approx, exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn self_similarity_of_unit_weight_point_is_bounded() {
        let params = spectral_sample(&KernelSpec::Gaussian { sigma: 1.0 }, 2, 32, 7).unwrap();
        let set = singleton(1.0, &[0.6, -0.1]);
        let e = embed(&set, &params, 0.0, 1.0).unwrap();
        let s = approx_similarity(&e, &e).unwrap();
        assert!((0.0..=2.0).contains(&s), "||z(v)||^2 = {s} outside [0, 2]");
    }

    #[test]
    fn approx_similarity_is_unbiased_for_combination_kernel() {
        // Monte Carlo oracle: average over 200 seeds at D = 2048 within 0.02.
        let nonlinear = KernelSpec::Gaussian { sigma: 1.0 };
        let kernel = KernelSpec::Combination {
            alpha1: 0.5,
            alpha2: 0.5,
            nonlinear: Box::new(nonlinear.clone()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_set(&mut rng, 3, 2);
        let b = random_set(&mut rng, 3, 2);
        let exact = exact_similarity(&kernel, &a, &b).unwrap();
        let mean = (0..200)
            .map(|s| {
                let params = spectral_sample(&nonlinear, 2, 2048, 100 + s).unwrap();
                let ea = embed(&a, &params, 0.5, 0.5).unwrap();
                let eb = embed(&b, &params, 0.5, 0.5).unwrap();
                approx_similarity(&ea, &eb).unwrap()
            })
            .sum::<f64>()
            / 200.0;
        assert_abs_diff_eq!(mean, exact, epsilon = 0.02);
    }

    #[test]
    fn mismatches_are_rejected() {
        let kernel = KernelSpec::Linear;
        let a = singleton(1.0, &[1.0, 0.0]);
        let b = singleton(1.0, &[1.0, 0.0, 0.0]);
        assert!(exact_similarity(&kernel, &a, &b).is_err());

        let params = spectral_sample(&KernelSpec::Gaussian { sigma: 1.0 }, 2, 8, 1).unwrap();
        let ea = embed(&a, &params, 0.5, 0.5).unwrap();
        let eb = embed(&a, &params, 0.4, 0.6).unwrap();
        assert!(approx_similarity(&ea, &eb).is_err());

        assert!(WeightedPointSet::new(arr1(&[1.0, 2.0]), arr2(&[[1.0, 0.0]])).is_err());
        assert!(
            WeightedPointSet::new_normalized(arr1(&[1.0]), arr2(&[[0.7, 0.0]])).is_err(),
            "non-unit point must be rejected when the normalized flag is set"
        );
    }

    #[test]
    fn json_round_trip() {
        let set = WeightedPointSet::new(
            arr1(&[1.0, -0.5]),
            arr2(&[[0.1, 0.2], [0.3, 0.4]]),
        )
        .unwrap();
        let text = serde_json::to_string(&set).unwrap();
        assert!(text.contains("\"weights\":[1.0,-0.5]"));
        let back: WeightedPointSet = serde_json::from_str(&text).unwrap();
        assert_eq!(set, back);
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // exact_similarity is symmetric and scales linearly in either
            // weight vector.
            #[test]
            fn symmetry_and_weight_scaling(seed in 0u64..200, s in -2.0f64..2.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_set(&mut rng, 3, 2);
                let b = random_set(&mut rng, 2, 2);
                let kernel = KernelSpec::Combination {
                    alpha1: 0.5,
                    alpha2: 0.5,
                    nonlinear: Box::new(KernelSpec::Imq { c: 1.0 }),
                };
                let ab = exact_similarity(&kernel, &a, &b).unwrap();
                let ba = exact_similarity(&kernel, &b, &a).unwrap();
                prop_assert!((ab - ba).abs() <= 1e-12);

                let scaled = WeightedPointSet::new(a.weights() * s, a.points().clone()).unwrap();
                let sab = exact_similarity(&kernel, &scaled, &b).unwrap();
                prop_assert!((sab - s * ab).abs() <= 1e-10);
            }
        }
    }
}
