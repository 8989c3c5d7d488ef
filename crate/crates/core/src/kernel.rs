//! Kernel similarity functions on R^d.
//!
//! Three base kernels cover the laboratory's needs:
//!
//! - `Linear`: the plain inner product `u . v`, the similarity used by
//!   plain bilinear embedding pairs;
//! - `Gaussian`: `exp(-||u - v||^2 / (2 sigma^2))`, bounded, characteristic,
//!   and shift invariant;
//! - `Imq`: the inverse multiquadric `c / sqrt(c^2 + ||u - v||^2)`, also
//!   bounded and shift invariant, normalized so that `k(v, v) = 1`.
//!
//! A `Combination` mixes the linear kernel with one bounded nonlinear kernel,
//! `alpha1 * (u . v) + alpha2 * k~(u, v)`; the mixture is what weighted point
//! set similarities are built on, with the linear part carrying mean geometry
//! and the nonlinear part carrying distributional shape.
//!
//! All kernels here are symmetric and positive semidefinite, and the two
//! shift-invariant kinds admit spectral (random Fourier) approximations; see
//! the `rff` module.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid of bandwidths (`sigma` for Gaussian, `c` for IMQ) used by experiment
/// presets.
pub const BANDWIDTH_PRESETS: [f64; 3] = [0.5, 0.75, 1.0];

/// Grid of `(alpha1, alpha2)` mixture weights used by experiment presets.
pub const ALPHA_PRESETS: [(f64, f64); 5] = [
    (0.667, 0.333),
    (0.6, 0.4),
    (0.5, 0.5),
    (0.4, 0.6),
    (0.333, 0.667),
];

/// A validated kernel description.
///
/// Serialized form tags the variant with a `kind` field:
/// `{"kind": "gaussian", "sigma": 1.0}`,
/// `{"kind": "combination", "alpha1": 0.5, "alpha2": 0.5,
///   "nonlinear": {"kind": "imq", "c": 1.0}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    /// `k(u, v) = u . v`.
    Linear,
    /// `k(u, v) = exp(-||u - v||^2 / (2 sigma^2))`, `sigma > 0`.
    Gaussian { sigma: f64 },
    /// `k(u, v) = c / sqrt(c^2 + ||u - v||^2)`, `c > 0`.
    Imq { c: f64 },
    /// `k(u, v) = alpha1 * (u . v) + alpha2 * k~(u, v)` with `k~` Gaussian or
    /// IMQ, `alpha1, alpha2 >= 0`, `alpha1 + alpha2 > 0`.
    Combination {
        alpha1: f64,
        alpha2: f64,
        nonlinear: Box<KernelSpec>,
    },
}

impl KernelSpec {
    /// Checks the variant's parameter invariants.
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Gaussian { sigma } => {
                if sigma.is_finite() && *sigma > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter {
                        name: "sigma",
                        reason: format!("must be finite and positive, got {sigma}"),
                    })
                }
            }
            KernelSpec::Imq { c } => {
                if c.is_finite() && *c > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter {
                        name: "c",
                        reason: format!("must be finite and positive, got {c}"),
                    })
                }
            }
            KernelSpec::Combination {
                alpha1,
                alpha2,
                nonlinear,
            } => {
                if !(alpha1.is_finite() && alpha2.is_finite() && *alpha1 >= 0.0 && *alpha2 >= 0.0)
                {
                    return Err(Error::InvalidParameter {
                        name: "alpha",
                        reason: format!(
                            "alpha1, alpha2 must be finite and nonnegative, got ({alpha1}, {alpha2})"
                        ),
                    });
                }
                if *alpha1 + *alpha2 <= 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "alpha",
                        reason: "alpha1 + alpha2 must be positive".to_string(),
                    });
                }
                match nonlinear.as_ref() {
                    KernelSpec::Gaussian { .. } | KernelSpec::Imq { .. } => nonlinear.validate(),
                    other => Err(Error::InvalidParameter {
                        name: "nonlinear",
                        reason: format!(
                            "combination's nonlinear part must be gaussian or imq, got {other:?}"
                        ),
                    }),
                }
            }
        }
    }

    /// Short lowercase name of the variant, matching the serialized tag.
    pub fn kind_name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Imq { .. } => "imq",
            KernelSpec::Combination { .. } => "combination",
        }
    }

    /// Splits the kernel into `(alpha1, alpha2, nonlinear part)` so that every
    /// kind reads as a mixture `alpha1 * linear + alpha2 * nonlinear`.
    pub fn mixture_parts(&self) -> (f64, f64, Option<&KernelSpec>) {
        match self {
            KernelSpec::Linear => (1.0, 0.0, None),
            KernelSpec::Gaussian { .. } | KernelSpec::Imq { .. } => (0.0, 1.0, Some(self)),
            KernelSpec::Combination {
                alpha1,
                alpha2,
                nonlinear,
            } => (*alpha1, *alpha2, Some(nonlinear.as_ref())),
        }
    }

    /// Evaluates `k(u, v)`.
    pub fn eval(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
        if u.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: u.len(),
                got: v.len(),
            });
        }
        self.validate()?;
        Ok(self.eval_unchecked(u, v))
    }

    /// Evaluation without re-validating; callers guarantee matching dims and a
    /// validated spec. Hot paths (Gram matrices, training loops) use this.
    pub(crate) fn eval_unchecked(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
        match self {
            KernelSpec::Linear => u.dot(&v),
            KernelSpec::Gaussian { sigma } => {
                let d2 = sq_dist(u, v);
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
            KernelSpec::Imq { c } => {
                let d2 = sq_dist(u, v);
                c / (c * c + d2).sqrt()
            }
            KernelSpec::Combination {
                alpha1,
                alpha2,
                nonlinear,
            } => alpha1 * u.dot(&v) + alpha2 * nonlinear.eval_unchecked(u, v),
        }
    }

    /// Evaluates the kernel and its gradient with respect to the first
    /// argument. All variants are symmetric, so the gradient in the second
    /// argument is `grad_first` with the arguments swapped.
    pub fn eval_with_grad(
        &self,
        u: ArrayView1<f64>,
        v: ArrayView1<f64>,
    ) -> Result<(f64, Array1<f64>)> {
        if u.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: u.len(),
                got: v.len(),
            });
        }
        self.validate()?;
        Ok(self.eval_with_grad_unchecked(u, v))
    }

    pub(crate) fn eval_with_grad_unchecked(
        &self,
        u: ArrayView1<f64>,
        v: ArrayView1<f64>,
    ) -> (f64, Array1<f64>) {
        match self {
            KernelSpec::Linear => (u.dot(&v), v.to_owned()),
            KernelSpec::Gaussian { sigma } => {
                let k = self.eval_unchecked(u, v);
                // d/du exp(-||u-v||^2 / (2 s^2)) = -(u - v)/s^2 * k
                let scale = -k / (sigma * sigma);
                let grad = (&u - &v) * scale;
                (k, grad)
            }
            KernelSpec::Imq { c } => {
                let k = self.eval_unchecked(u, v);
                // d/du c (c^2 + r^2)^{-1/2} = -(u - v) k^3 / c^2
                let scale = -k * k * k / (c * c);
                let grad = (&u - &v) * scale;
                (k, grad)
            }
            KernelSpec::Combination {
                alpha1,
                alpha2,
                nonlinear,
            } => {
                let (kn, gn) = nonlinear.eval_with_grad_unchecked(u, v);
                let value = alpha1 * u.dot(&v) + alpha2 * kn;
                let grad = &v * *alpha1 + gn * *alpha2;
                (value, grad)
            }
        }
    }

    /// Gram matrix `K[i][j] = k(U_i, V_j)` for row-stacked point collections.
    pub fn gram(&self, us: ArrayView2<f64>, vs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if us.ncols() != vs.ncols() {
            return Err(Error::DimensionMismatch {
                expected: us.ncols(),
                got: vs.ncols(),
            });
        }
        self.validate()?;
        let mut out = Array2::zeros((us.nrows(), vs.nrows()));
        for (i, u) in us.outer_iter().enumerate() {
            for (j, v) in vs.outer_iter().enumerate() {
                out[[i, j]] = self.eval_unchecked(u, v);
            }
        }
        Ok(out)
    }
}

fn sq_dist(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    u.iter()
        .zip(v.iter())
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr1;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(sigma: f64) -> KernelSpec {
        KernelSpec::Gaussian { sigma }
    }

    fn imq(c: f64) -> KernelSpec {
        KernelSpec::Imq { c }
    }

    #[test]
    fn gaussian_identical_points_give_one() {
        let k = gaussian(0.75);
        let v = arr1(&[0.3, -1.2, 0.5]);
        assert_abs_diff_eq!(k.eval(v.view(), v.view()).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn imq_identical_points_give_one() {
        for c in BANDWIDTH_PRESETS {
            let k = imq(c);
            let v = arr1(&[1.0, 2.0]);
            assert_abs_diff_eq!(k.eval(v.view(), v.view()).unwrap(), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn gaussian_unit_sigma_at_distance_one() {
        // Distance 1 at sigma = 1 must give exp(-1/2).
        let k = gaussian(1.0);
        let u = arr1(&[0.0, 0.0]);
        let v = arr1(&[1.0, 0.0]);
        let expected = (-0.5f64).exp();
        assert_abs_diff_eq!(expected, 0.606531, epsilon = 1e-6);
        assert_abs_diff_eq!(
            k.eval(u.view(), v.view()).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn gaussian_matches_closed_form_at_sq_distance_two() {
        // ||u - v||^2 = 2 at sigma = 1 gives exp(-1) = 0.367879...
        let k = gaussian(1.0);
        let u = arr1(&[1.0, 0.0]);
        let v = arr1(&[0.0, 1.0]);
        assert_abs_diff_eq!(
            k.eval(u.view(), v.view()).unwrap(),
            0.367879,
            epsilon = 1e-6
        );
    }

    #[test]
    fn imq_closed_form() {
        let k = imq(1.0);
        let u = arr1(&[0.0, 0.0]);
        let v = arr1(&[2.0, 0.0]);
        // 1 / sqrt(1 + 4)
        assert_abs_diff_eq!(
            k.eval(u.view(), v.view()).unwrap(),
            1.0 / 5.0f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn combination_interpolates_parts() {
        let u = arr1(&[0.6, -0.8]);
        let v = arr1(&[0.1, 0.7]);
        for (a1, a2) in ALPHA_PRESETS {
            let k = KernelSpec::Combination {
                alpha1: a1,
                alpha2: a2,
                nonlinear: Box::new(gaussian(0.75)),
            };
            let expected =
                a1 * u.dot(&v) + a2 * gaussian(0.75).eval(u.view(), v.view()).unwrap();
            assert_abs_diff_eq!(
                k.eval(u.view(), v.view()).unwrap(),
                expected,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn combination_with_unit_linear_weight_is_linear() {
        let k = KernelSpec::Combination {
            alpha1: 1.0,
            alpha2: 0.0,
            nonlinear: Box::new(imq(1.0)),
        };
        let u = arr1(&[0.3, 0.4, -0.2]);
        let v = arr1(&[-1.0, 0.5, 2.0]);
        assert_abs_diff_eq!(
            k.eval(u.view(), v.view()).unwrap(),
            u.dot(&v),
            epsilon = 1e-15
        );
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(gaussian(0.0).validate().is_err());
        assert!(gaussian(-1.0).validate().is_err());
        assert!(gaussian(f64::NAN).validate().is_err());
        assert!(imq(0.0).validate().is_err());
        let bad_mix = KernelSpec::Combination {
            alpha1: 0.0,
            alpha2: 0.0,
            nonlinear: Box::new(gaussian(1.0)),
        };
        assert!(bad_mix.validate().is_err());
        let negative_alpha = KernelSpec::Combination {
            alpha1: -0.1,
            alpha2: 1.0,
            nonlinear: Box::new(gaussian(1.0)),
        };
        assert!(negative_alpha.validate().is_err());
        let nested = KernelSpec::Combination {
            alpha1: 0.5,
            alpha2: 0.5,
            nonlinear: Box::new(KernelSpec::Linear),
        };
        assert!(nested.validate().is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let k = gaussian(1.0);
        let u = arr1(&[0.0, 0.0]);
        let v = arr1(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            k.eval(u.view(), v.view()),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0))
    }

    /// Gram matrices of PSD kernels must be symmetric PSD on identical point
    /// collections. Oracle: symmetric eigendecomposition.
    #[test]
    fn gram_matrices_are_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = random_points(&mut rng, 12, 3);
        let kernels = vec![
            KernelSpec::Linear,
            gaussian(0.5),
            gaussian(1.0),
            imq(0.75),
            KernelSpec::Combination {
                alpha1: 0.4,
                alpha2: 0.6,
                nonlinear: Box::new(imq(1.0)),
            },
        ];
        for k in kernels {
            let g = k.gram(pts.view(), pts.view()).unwrap();
            for i in 0..12 {
                for j in 0..12 {
                    assert_abs_diff_eq!(g[[i, j]], g[[j, i]], epsilon = 1e-12);
                }
            }
            let m = nalgebra::DMatrix::from_fn(12, 12, |i, j| g[[i, j]]);
            let eig = nalgebra::SymmetricEigen::new(m);
            let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                min_eig > -1e-10,
                "{} gram matrix not PSD: min eigenvalue {min_eig}",
                k.kind_name()
            );
        }
    }

    /// Both shift-invariant kernels are bounded by their value at zero
    /// distance and decrease as points move apart along a ray.
    #[test]
    fn shift_invariant_kernels_decay_monotonically() {
        let u = arr1(&[0.0, 0.0, 0.0]);
        for k in [gaussian(0.75), imq(0.5)] {
            let mut prev = k.eval(u.view(), u.view()).unwrap();
            assert_abs_diff_eq!(prev, 1.0, epsilon = 1e-15);
            for step in 1..20 {
                let v = arr1(&[0.25 * step as f64, 0.0, 0.0]);
                let cur = k.eval(u.view(), v.view()).unwrap();
                assert!(cur < prev, "{} failed to decay at step {step}", k.kind_name());
                assert!(cur > 0.0);
                prev = cur;
            }
        }
    }

    #[test]
    fn analytic_kernel_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kernels = vec![
            KernelSpec::Linear,
            gaussian(0.6),
            imq(0.9),
            KernelSpec::Combination {
                alpha1: 0.5,
                alpha2: 0.5,
                nonlinear: Box::new(gaussian(1.0)),
            },
        ];
        let h = 1e-6;
        for k in kernels {
            for _ in 0..10 {
                let u = arr1(&[
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]);
                let v = arr1(&[
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]);
                let (_, grad) = k.eval_with_grad(u.view(), v.view()).unwrap();
                for i in 0..3 {
                    let mut up = u.clone();
                    let mut um = u.clone();
                    up[i] += h;
                    um[i] -= h;
                    let fd = (k.eval(up.view(), v.view()).unwrap()
                        - k.eval(um.view(), v.view()).unwrap())
                        / (2.0 * h);
                    assert_abs_diff_eq!(grad[i], fd, epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn json_round_trip_preserves_spec() {
        let k = KernelSpec::Combination {
            alpha1: 0.5,
            alpha2: 0.5,
            nonlinear: Box::new(imq(1.0)),
        };
        let text = serde_json::to_string(&k).unwrap();
        assert!(text.contains("\"kind\":\"combination\""));
        assert!(text.contains("\"kind\":\"imq\""));
        let back: KernelSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(k, back);

        let parsed: KernelSpec =
            serde_json::from_str(r#"{"kind": "gaussian", "sigma": 1.0}"#).unwrap();
        assert_eq!(parsed, gaussian(1.0));
        assert!(serde_json::from_str::<KernelSpec>(r#"{"kind": "gaussian", "sig": 1}"#).is_err());
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        fn vec3() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-3.0f64..3.0, 3)
        }

        proptest! {
            #[test]
            fn kernels_are_symmetric(a in vec3(), b in vec3(), sigma in 0.3f64..2.0, c in 0.3f64..2.0) {
                let u = arr1(&a);
                let v = arr1(&b);
                for k in [KernelSpec::Linear, KernelSpec::Gaussian { sigma }, KernelSpec::Imq { c }] {
                    let kuv = k.eval(u.view(), v.view()).unwrap();
                    let kvu = k.eval(v.view(), u.view()).unwrap();
                    prop_assert!((kuv - kvu).abs() <= 1e-12);
                }
            }

            #[test]
            fn bounded_kernels_stay_in_unit_interval(a in vec3(), b in vec3(), sigma in 0.3f64..2.0) {
                let u = arr1(&a);
                let v = arr1(&b);
                for k in [KernelSpec::Gaussian { sigma }, KernelSpec::Imq { c: sigma }] {
                    let val = k.eval(u.view(), v.view()).unwrap();
                    prop_assert!(val > 0.0 && val <= 1.0 + 1e-15);
                }
            }
        }
    }
}
