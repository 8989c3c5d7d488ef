//! Downstream classification built from similarity tables.
//!
//! The mean classifier turns any similarity table into class logits by
//! averaging similarities over each label subset and adding the log subset
//! prior. Its supervised softmax cross-entropy exceeds the optimal loss by
//! at most the two KL terms of the world/partition pair, plus `2 * delta`
//! when the table is `delta` away from PMI in the shift-adjusted sup norm.
//! [`excess_risk`] reports both sides of that chain; [`fit_linear_probe`]
//! fits the best linear classifier over explicit features so the chain can
//! be extended to probes over learned embeddings.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::delta_gap;
use crate::world::{
    kl_terms, pmi, sup_loss_optimal, DiscreteWorld, SimilarityTable, SubsetPartition,
};

/// Stand-in for `ln 0` in classifier tables. Large enough in magnitude that
/// the corresponding class never wins a softmax, small enough to stay finite
/// (the entries invariant) and exponentiate to exactly zero.
pub const NEG_SENTINEL: f64 = -1e100;

/// A classifier given extensionally: one row of class logits per x.
#[derive(Debug, Clone, PartialEq)]
pub struct TableClassifier {
    logits: Array2<f64>,
}

impl TableClassifier {
    pub fn new(logits: Array2<f64>) -> Result<Self> {
        for ((i, j), &v) in logits.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry { row: i, col: j });
            }
        }
        Ok(TableClassifier { logits })
    }

    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.logits.view()
    }

    pub fn n_inputs(&self) -> usize {
        self.logits.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.logits.ncols()
    }

    /// Predicted class per row (ties resolved to the lowest index).
    pub fn row_argmax(&self) -> Vec<usize> {
        self.logits
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0usize, f64::NEG_INFINITY), |best, (c, &v)| {
                        if v > best.1 {
                            (c, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }
}

fn check_partition(world: &DiscreteWorld, partition: &SubsetPartition) -> Result<()> {
    if partition.n_y() != world.n_y() {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} captions, world has {}",
            partition.n_y(),
            world.n_y()
        )));
    }
    if partition.n_classes() != world.n_classes() {
        return Err(Error::InvalidPartition(format!(
            "partition has {} classes, world has {}",
            partition.n_classes(),
            world.n_classes()
        )));
    }
    partition.require_nonempty()
}

/// Subset masses `P(Y_c)` under the caption marginal; positive for every
/// class or the class index is reported.
fn subset_masses(p_y: &Array1<f64>, partition: &SubsetPartition) -> Result<Vec<f64>> {
    (0..partition.n_classes())
        .map(|c| {
            let mass: f64 = partition.members(c).iter().map(|&y| p_y[y]).sum();
            if mass > 0.0 {
                Ok(mass)
            } else {
                Err(Error::EmptySubset { class: c })
            }
        })
        .collect()
}

/// Mean classifier of a similarity table:
/// `logits(x)_c = sum_{y in Y_c} p(y|Y_c) g(x, y) + ln P(Y_c)`.
pub fn mean_classifier(
    g: &SimilarityTable,
    world: &DiscreteWorld,
    partition: &SubsetPartition,
) -> Result<TableClassifier> {
    if g.nrows() != world.n_x() || g.ncols() != world.n_y() {
        return Err(Error::ShapeMismatch {
            expected: (world.n_x(), world.n_y()),
            got: (g.nrows(), g.ncols()),
        });
    }
    check_partition(world, partition)?;
    let p_y = world.p_y();
    let masses = subset_masses(&p_y, partition)?;

    let values = g.values();
    let mut logits = Array2::zeros((world.n_x(), partition.n_classes()));
    for (c, &mass) in masses.iter().enumerate() {
        let log_prior = mass.ln();
        for x in 0..world.n_x() {
            let mean: f64 = partition
                .members(c)
                .iter()
                .map(|&y| p_y[y] / mass * values[[x, y]])
                .sum();
            logits[[x, c]] = mean + log_prior;
        }
    }
    TableClassifier::new(logits)
}

/// The pointwise-optimal classifier `h*(x)_c = ln P(c|x)`, with zero
/// posterior cells held at [`NEG_SENTINEL`]. Those cells carry no supervised
/// loss because the matching `p(x, c)` is zero.
pub fn optimal_classifier(world: &DiscreteWorld) -> TableClassifier {
    let logits = world.label_cond().mapv(|p| {
        if p > 0.0 {
            p.ln()
        } else {
            NEG_SENTINEL
        }
    });
    TableClassifier::new(logits).expect("log posteriors are finite by construction")
}

fn lse(values: ArrayView1<f64>) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|&v| (v - m).exp()).sum();
    m + sum.ln()
}

/// Population softmax cross-entropy of a classifier under `p(x, c)`.
pub fn sup_loss(h: &TableClassifier, world: &DiscreteWorld) -> Result<f64> {
    if h.n_inputs() != world.n_x() || h.n_classes() != world.n_classes() {
        return Err(Error::ShapeMismatch {
            expected: (world.n_x(), world.n_classes()),
            got: (h.n_inputs(), h.n_classes()),
        });
    }
    let p_x = world.p_x();
    let label_cond = world.label_cond();
    let mut total = 0.0;
    for x in 0..world.n_x() {
        let row = h.logits().row(x).into_owned();
        let row_lse = lse(row.view());
        for c in 0..world.n_classes() {
            let w = p_x[x] * label_cond[[x, c]];
            if w > 0.0 {
                total += w * (row_lse - row[c]);
            }
        }
    }
    Ok(total)
}

/// One linear-probe fit: the classifier plus the weights that produced it
/// and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    pub classifier: TableClassifier,
    /// `m x K` weight matrix.
    pub weights: Array2<f64>,
    /// Length-`K` bias.
    pub bias: Array1<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub iters: usize,
}

/// Best linear classifier `features * W + b` under the exact population
/// softmax cross-entropy, from a zero start.
pub fn fit_linear_probe(
    features: ArrayView2<f64>,
    world: &DiscreteWorld,
    tol: f64,
    max_iters: usize,
) -> Result<ProbeFit> {
    let w0 = Array2::zeros((features.ncols(), world.n_classes()));
    let b0 = Array1::zeros(world.n_classes());
    fit_linear_probe_from(features, world, w0.view(), b0.view(), tol, max_iters)
}

/// [`fit_linear_probe`] warm-started at `(w0, b0)`. The solver is monotone
/// in the objective, so the returned loss never exceeds the loss of the
/// starting point; starting at the mean classifier's weights makes the probe
/// provably at least as good.
pub fn fit_linear_probe_from(
    features: ArrayView2<f64>,
    world: &DiscreteWorld,
    w0: ArrayView2<f64>,
    b0: ArrayView1<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<ProbeFit> {
    let n_x = world.n_x();
    let k = world.n_classes();
    let m = features.ncols();
    if features.nrows() != n_x || m == 0 {
        return Err(Error::ShapeMismatch {
            expected: (n_x, m.max(1)),
            got: features.dim(),
        });
    }
    if w0.dim() != (m, k) || b0.len() != k {
        return Err(Error::ShapeMismatch {
            expected: (m, k),
            got: w0.dim(),
        });
    }
    for ((i, j), &v) in features.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteEntry { row: i, col: j });
        }
    }
    if !(tol > 0.0) || max_iters == 0 {
        return Err(Error::InvalidParameter {
            name: "probe",
            reason: "tol must be positive and max_iters nonzero".to_string(),
        });
    }

    // Homogeneous coordinates: fold the bias into one trailing all-ones
    // feature column, so the parameter is a single (m+1) x K matrix.
    let mut aug = Array2::ones((n_x, m + 1));
    aug.slice_mut(ndarray::s![.., ..m]).assign(&features);
    let p_x = world.p_x();
    let pxc = {
        let mut w = world.label_cond().into_owned();
        for (mut row, &p) in w.rows_mut().into_iter().zip(p_x.iter()) {
            row.mapv_inplace(|v| v * p);
        }
        w
    };

    let eval_loss = |theta: &Array2<f64>| -> f64 {
        let logits = aug.dot(theta);
        let mut loss = 0.0;
        for x in 0..n_x {
            let row = logits.row(x);
            loss += p_x[x] * lse(row);
            for c in 0..k {
                loss -= pxc[[x, c]] * row[c];
            }
        }
        loss
    };
    let eval_loss_grad = |theta: &Array2<f64>| -> (f64, Array2<f64>) {
        let logits = aug.dot(theta);
        let mut loss = 0.0;
        let mut dlogits = Array2::zeros((n_x, k));
        for x in 0..n_x {
            let row = logits.row(x);
            let row_lse = lse(row);
            loss += p_x[x] * row_lse;
            for c in 0..k {
                loss -= pxc[[x, c]] * row[c];
                dlogits[[x, c]] = p_x[x] * (row[c] - row_lse).exp() - pxc[[x, c]];
            }
        }
        (loss, aug.t().dot(&dlogits))
    };
    let frob = |g: &Array2<f64>| g.iter().map(|v| v * v).sum::<f64>().sqrt();

    let finish = |theta: Array2<f64>, loss: f64, grad_norm: f64, iters: usize| -> Result<ProbeFit> {
        let classifier = TableClassifier::new(aug.dot(&theta))?;
        let weights = theta.slice(ndarray::s![..m, ..]).to_owned();
        let bias = theta.row(m).to_owned();
        Ok(ProbeFit {
            classifier,
            weights,
            bias,
            loss,
            grad_norm,
            iters,
        })
    };

    let mut theta = ndarray::concatenate(
        Axis(0),
        &[w0.view(), b0.view().insert_axis(Axis(0))],
    )
    .expect("checked shapes");
    let (mut f_cur, g_cur) = eval_loss_grad(&theta);
    let mut grad_norm = frob(&g_cur);
    if grad_norm < tol {
        return finish(theta, f_cur, grad_norm, 0);
    }

    // Monotone accelerated descent with backtracking. The curvature of the
    // objective in the logits is at most 1/2 per unit of p(x), so the
    // initial smoothness guess is half the largest squared feature row.
    // Decrease tests carry a noise allowance: near the optimum the true
    // decrease per step drops below the rounding error of the objective, and
    // a strict Armijo test would freeze the step size while the gradient is
    // still above tolerance.
    let noise = |f: f64| 1e-14 * (1.0 + f.abs());
    let l0 = 0.5
        * aug
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0f64, f64::max);
    let mut l = l0.max(1e-8);
    let l_cap = l * 1e16;
    let mut y = theta.clone();
    let mut t = 1.0f64;

    for iter in 1..=max_iters {
        let (f_y, g_y) = eval_loss_grad(&y);
        let g_y_sq = g_y.iter().map(|v| v * v).sum::<f64>();
        let mut z;
        loop {
            z = &y - &(&g_y / l);
            let f_z = eval_loss(&z);
            if f_z <= f_y - 0.5 * g_y_sq / l + noise(f_y) || l >= l_cap {
                break;
            }
            l *= 2.0;
        }
        let (f_z, g_z) = eval_loss_grad(&z);
        grad_norm = frob(&g_z);
        if grad_norm < tol {
            return finish(z, f_z, grad_norm, iter);
        }

        // Keep the better of the accelerated point and the incumbent.
        let advance = f_z <= f_cur + noise(f_cur);
        let theta_next = if advance { z.clone() } else { theta.clone() };
        if advance {
            f_cur = f_z;
        }

        if f_z > f_y {
            // Acceleration overshot: restart momentum from the incumbent.
            t = 1.0;
            y = theta_next.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &theta_next
                + &((&z - &theta_next) * (t / t_next)
                    + (&theta_next - &theta) * ((t - 1.0) / t_next));
            t = t_next;
        }

        theta = theta_next;
        l = (l * 0.9).max(1e-12);
    }

    Err(Error::NonConvergence {
        iters: max_iters,
        grad_norm,
    })
}

/// Weights and bias that make a linear probe start exactly at the mean
/// classifier of the inner-product table `x_features . y_features^T`:
/// `W[:, c] = sum_{y in Y_c} p(y|Y_c) y_features[y]`, `b_c = ln P(Y_c)`.
pub fn mean_probe_init(
    y_features: ArrayView2<f64>,
    world: &DiscreteWorld,
    partition: &SubsetPartition,
) -> Result<(Array2<f64>, Array1<f64>)> {
    if y_features.nrows() != world.n_y() {
        return Err(Error::ShapeMismatch {
            expected: (world.n_y(), y_features.ncols()),
            got: y_features.dim(),
        });
    }
    check_partition(world, partition)?;
    let p_y = world.p_y();
    let masses = subset_masses(&p_y, partition)?;
    let m = y_features.ncols();
    let k = partition.n_classes();
    let mut weights = Array2::zeros((m, k));
    let mut bias = Array1::zeros(k);
    for (c, &mass) in masses.iter().enumerate() {
        bias[c] = mass.ln();
        for &y in partition.members(c) {
            let scale = p_y[y] / mass;
            for j in 0..m {
                weights[[j, c]] += scale * y_features[[y, j]];
            }
        }
    }
    Ok((weights, bias))
}

/// Both sides of the excess-risk chain for one similarity table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessReport {
    /// `sup_loss(mean_classifier(g)) - sup_loss_optimal`.
    pub lhs: f64,
    /// Expected-KL bound: `eps1_expected + eps2_expected`.
    pub rhs_expected: f64,
    /// Sup-form bound including the PMI gap: `eps1_sup + eps2_sup + 2 delta`.
    pub rhs_sup: f64,
    /// Shift-adjusted sup-norm gap between `g` and the PMI table.
    pub delta: f64,
}

/// Evaluates the excess-risk chain of `g` on a world/partition pair.
pub fn excess_risk(
    g: &SimilarityTable,
    world: &DiscreteWorld,
    partition: &SubsetPartition,
) -> Result<ExcessReport> {
    let h_mean = mean_classifier(g, world, partition)?;
    let lhs = sup_loss(&h_mean, world)? - sup_loss_optimal(world);
    let kl = kl_terms(world, partition)?;
    let delta = delta_gap(g, &pmi(world)?)?;
    Ok(ExcessReport {
        lhs,
        rhs_expected: kl.eps1_expected + kl.eps2_expected,
        rhs_sup: kl.eps1_sup + kl.eps2_sup + 2.0 * delta,
        delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{random_dense_world, random_world, structured_world};
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn table(values: Array2<f64>) -> SimilarityTable {
        SimilarityTable::new(values).unwrap()
    }

    fn random_simplex<R: Rng>(n: usize, rng: &mut R) -> Array1<f64> {
        let mut v = Array1::from_shape_fn(n, |_| rng.random_range(0.05..1.0));
        let total = v.sum();
        v.mapv_inplace(|x| x / total);
        v
    }

    /// Structured world with zero floor: both KL terms vanish exactly for
    /// the generating partition, and the joint stays dense because the label
    /// posterior rows are dense.
    fn eps_zero_world(
        n_x: usize,
        n_y: usize,
        k: usize,
        seed: u64,
    ) -> (DiscreteWorld, SubsetPartition) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut assignment: Vec<usize> = (0..n_y).map(|y| (y % k) + 1).collect();
        assignment.shuffle(&mut rng);
        let partition = SubsetPartition::new(assignment, k).unwrap();

        let p_x = random_simplex(n_x, &mut rng);
        let mut label_cond = Array2::zeros((n_x, k));
        for mut row in label_cond.rows_mut() {
            row.assign(&random_simplex(k, &mut rng));
        }
        let mut caption_cond = Array2::zeros((k, n_y));
        for c in 0..k {
            let members = partition.members(c).to_vec();
            let dist = random_simplex(members.len(), &mut rng);
            for (slot, &y) in members.iter().enumerate() {
                caption_cond[[c, y]] = dist[slot];
            }
        }
        let world = structured_world(
            p_x.view(),
            label_cond.view(),
            caption_cond.view(),
            &partition,
            0.0,
        )
        .unwrap();
        (world, partition)
    }

    #[test]
    fn rejects_non_finite_logits() {
        let mut logits = Array2::zeros((2, 2));
        logits[[0, 1]] = f64::INFINITY;
        assert!(TableClassifier::new(logits).is_err());
    }

    #[test]
    fn zero_table_yields_log_priors() {
        let (world, _) = random_world(5, 8, 3, 2, 1.0).unwrap();
        // Partition with an unassigned caption: priors need not sum to 1.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let partition = SubsetPartition::random(8, 3, 0.2, &mut rng).unwrap();
        let g = table(Array2::zeros((5, 8)));
        let h = mean_classifier(&g, &world, &partition).unwrap();
        let p_y = world.p_y();
        for c in 0..3 {
            let mass: f64 = partition.members(c).iter().map(|&y| p_y[y]).sum();
            for x in 0..5 {
                assert_abs_diff_eq!(h.logits()[[x, c]], mass.ln(), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn pmi_logits_match_posterior_on_eps_zero_world() {
        // With both KL terms exactly zero the mean classifier of PMI must
        // reproduce the label posterior row by row.
        for seed in 0..5 {
            let (world, partition) = eps_zero_world(6, 10, 3, seed);
            let g = pmi(&world).unwrap();
            let h = mean_classifier(&g, &world, &partition).unwrap();
            for x in 0..world.n_x() {
                let row = h.logits().row(x).into_owned();
                let row_lse = lse(row.view());
                for c in 0..world.n_classes() {
                    assert_abs_diff_eq!(
                        row[c],
                        world.label_cond()[[x, c]].ln(),
                        epsilon = 1e-10
                    );
                    assert_abs_diff_eq!(
                        (row[c] - row_lse).exp(),
                        world.label_cond()[[x, c]],
                        epsilon = 1e-10
                    );
                }
            }
        }
    }

    #[test]
    fn singleton_subsets_recover_log_conditionals() {
        let world = random_dense_world(4, 3, 3, 12, 1.0).unwrap();
        let partition = SubsetPartition::new(vec![1, 2, 3], 3).unwrap();
        let g = pmi(&world).unwrap();
        let h = mean_classifier(&g, &world, &partition).unwrap();
        let p_x = world.p_x();
        for x in 0..4 {
            for c in 0..3 {
                let cond = world.joint()[[x, c]] / p_x[x];
                assert_abs_diff_eq!(h.logits()[[x, c]], cond.ln(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn optimal_classifier_matches_closed_form_loss() {
        for seed in 0..5 {
            let world = random_dense_world(6, 7, 3, 100 + seed, 1.0).unwrap();
            let h = optimal_classifier(&world);
            assert_abs_diff_eq!(
                sup_loss(&h, &world).unwrap(),
                sup_loss_optimal(&world),
                epsilon = 1e-12
            );
        }
        // A zero posterior cell exercises the sentinel path: its class can
        // never win and never contributes loss.
        let joint = arr2(&[[0.3, 0.2], [0.1, 0.4]]);
        let label_cond = arr2(&[[1.0, 0.0], [0.3, 0.7]]);
        let world = DiscreteWorld::new(joint, label_cond).unwrap();
        let h = optimal_classifier(&world);
        assert_eq!(h.logits()[[0, 1]], NEG_SENTINEL);
        assert_abs_diff_eq!(
            sup_loss(&h, &world).unwrap(),
            sup_loss_optimal(&world),
            epsilon = 1e-12
        );
    }

    #[test]
    fn marginal_log_prior_rows_give_label_entropy() {
        let world = random_dense_world(5, 6, 4, 42, 1.0).unwrap();
        let p_x = world.p_x();
        let marginal: Array1<f64> = (0..4)
            .map(|c| {
                (0..5)
                    .map(|x| p_x[x] * world.label_cond()[[x, c]])
                    .sum::<f64>()
            })
            .collect();
        let entropy: f64 = -marginal.iter().map(|&p| p * p.ln()).sum::<f64>();
        let row = marginal.mapv(f64::ln);
        let logits = Array2::from_shape_fn((5, 4), |(_, c)| row[c]);
        let h = TableClassifier::new(logits).unwrap();
        assert_abs_diff_eq!(sup_loss(&h, &world).unwrap(), entropy, epsilon = 1e-12);
    }

    #[test]
    fn sup_loss_matches_naive_oracle() {
        // Unstabilized direct formula as the oracle.
        let world = random_dense_world(4, 5, 3, 7, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits = Array2::from_shape_fn((4, 3), |_| rng.random_range(-2.0..2.0));
        let h = TableClassifier::new(logits.clone()).unwrap();
        let p_x = world.p_x();
        let mut naive = 0.0;
        for x in 0..4 {
            let denom: f64 = (0..3).map(|c| logits[[x, c]].exp()).sum();
            for c in 0..3 {
                naive -= p_x[x]
                    * world.label_cond()[[x, c]]
                    * (logits[[x, c]].exp() / denom).ln();
            }
        }
        assert_abs_diff_eq!(sup_loss(&h, &world).unwrap(), naive, epsilon = 1e-12);
    }

    #[test]
    fn row_shifts_preserve_loss_and_argmax() {
        let world = random_dense_world(5, 4, 3, 3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = Array2::from_shape_fn((5, 3), |_| rng.random_range(-3.0..3.0));
        let h = TableClassifier::new(logits.clone()).unwrap();
        let base = sup_loss(&h, &world).unwrap();
        let mut shifted = logits;
        for mut row in shifted.rows_mut() {
            let gamma = rng.random_range(-5.0..5.0);
            row.mapv_inplace(|v| v + gamma);
        }
        let h_shifted = TableClassifier::new(shifted).unwrap();
        assert_abs_diff_eq!(sup_loss(&h_shifted, &world).unwrap(), base, epsilon = 1e-12);
        assert_eq!(h.row_argmax(), h_shifted.row_argmax());
    }

    #[test]
    fn probe_with_identity_features_attains_optimal_loss() {
        let world = random_dense_world(6, 5, 3, 21, 1.0).unwrap();
        let features = Array2::eye(6);
        let fit = fit_linear_probe(features.view(), &world, 1e-9, 100_000).unwrap();
        assert!(
            (fit.loss - sup_loss_optimal(&world)).abs() < 1e-6,
            "probe loss {} vs optimal {}",
            fit.loss,
            sup_loss_optimal(&world)
        );
        assert_abs_diff_eq!(
            sup_loss(&fit.classifier, &world).unwrap(),
            fit.loss,
            epsilon = 1e-12
        );
    }

    #[test]
    fn probe_with_zero_features_learns_label_marginal() {
        let world = random_dense_world(5, 6, 4, 33, 1.0).unwrap();
        let p_x = world.p_x();
        let entropy: f64 = -(0..4)
            .map(|c| {
                let p: f64 = (0..5)
                    .map(|x| p_x[x] * world.label_cond()[[x, c]])
                    .sum();
                p * p.ln()
            })
            .sum::<f64>();
        let features = Array2::zeros((5, 3));
        let fit = fit_linear_probe(features.view(), &world, 1e-9, 100_000).unwrap();
        assert!(
            (fit.loss - entropy).abs() < 1e-6,
            "probe loss {} vs label entropy {}",
            fit.loss,
            entropy
        );
    }

    #[test]
    fn probe_at_least_matches_mean_classifier_on_inner_product_table() {
        let (world, partition) = random_world(7, 9, 3, 55, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let m = 4;
        let x_feats = Array2::from_shape_fn((7, m), |_| rng.random_range(-1.0..1.0));
        let y_feats = Array2::from_shape_fn((9, m), |_| rng.random_range(-1.0..1.0));
        let g = table(x_feats.dot(&y_feats.t()));
        let h_mean = mean_classifier(&g, &world, &partition).unwrap();
        let mean_loss = sup_loss(&h_mean, &world).unwrap();

        let cold = fit_linear_probe(x_feats.view(), &world, 1e-8, 200_000).unwrap();
        assert!(
            cold.loss <= mean_loss + 1e-6,
            "cold probe {} vs mean classifier {}",
            cold.loss,
            mean_loss
        );

        let (w0, b0) = mean_probe_init(y_feats.view(), &world, &partition).unwrap();
        let warm = fit_linear_probe_from(
            x_feats.view(),
            &world,
            w0.view(),
            b0.view(),
            1e-8,
            200_000,
        )
        .unwrap();
        assert!(
            warm.loss <= mean_loss + 1e-12,
            "warm probe {} must not exceed its start {}",
            warm.loss,
            mean_loss
        );
    }

    #[test]
    fn mean_probe_init_reproduces_mean_classifier() {
        let (world, partition) = random_world(5, 7, 3, 77, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let m = 3;
        let x_feats = Array2::from_shape_fn((5, m), |_| rng.random_range(-1.0..1.0));
        let y_feats = Array2::from_shape_fn((7, m), |_| rng.random_range(-1.0..1.0));
        let g = table(x_feats.dot(&y_feats.t()));
        let h_mean = mean_classifier(&g, &world, &partition).unwrap();
        let (w0, b0) = mean_probe_init(y_feats.view(), &world, &partition).unwrap();
        let direct = x_feats.dot(&w0) + &b0;
        for (a, b) in direct.iter().zip(h_mean.logits().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn warm_start_at_optimum_returns_immediately() {
        let world = random_dense_world(4, 5, 3, 60, 1.0).unwrap();
        let features = Array2::eye(4);
        let fit = fit_linear_probe(features.view(), &world, 1e-9, 100_000).unwrap();
        let again = fit_linear_probe_from(
            features.view(),
            &world,
            fit.weights.view(),
            fit.bias.view(),
            1e-8,
            100,
        )
        .unwrap();
        assert_eq!(again.iters, 0);
        assert!(again.loss <= fit.loss + 1e-14);
    }

    #[test]
    fn probe_is_deterministic() {
        let world = random_dense_world(5, 5, 3, 61, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let features = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let a = fit_linear_probe(features.view(), &world, 1e-8, 50_000).unwrap();
        let b = fit_linear_probe(features.view(), &world, 1e-8, 50_000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probe_reports_non_convergence() {
        let world = random_dense_world(6, 5, 3, 63, 1.0).unwrap();
        let features = Array2::eye(6);
        match fit_linear_probe(features.view(), &world, 1e-15, 2) {
            Err(Error::NonConvergence { iters, grad_norm }) => {
                assert_eq!(iters, 2);
                assert!(grad_norm > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn excess_report_is_tight_on_eps_zero_world() {
        for seed in 0..5 {
            let (world, partition) = eps_zero_world(5, 9, 3, 200 + seed);
            let g = pmi(&world).unwrap();
            let report = excess_risk(&g, &world, &partition).unwrap();
            assert!(report.lhs >= -1e-12, "seed {seed}: lhs {}", report.lhs);
            assert!(report.lhs < 1e-10, "seed {seed}: lhs {}", report.lhs);
            assert!(report.rhs_expected < 1e-12);
            assert_eq!(report.delta, 0.0);
        }
    }

    #[test]
    fn excess_report_bounds_hold_on_random_worlds() {
        for seed in 0..20 {
            let (world, partition) = random_world(6, 8, 3, 300 + seed, 1.0).unwrap();
            let g = pmi(&world).unwrap();
            let report = excess_risk(&g, &world, &partition).unwrap();
            assert!(report.lhs >= -1e-12, "seed {seed}: lhs {}", report.lhs);
            assert!(
                report.lhs <= report.rhs_expected + 1e-10,
                "seed {seed}: lhs {} rhs {}",
                report.lhs,
                report.rhs_expected
            );
            assert!(report.rhs_sup >= report.rhs_expected - 1e-12);
        }
    }

    #[test]
    fn shifted_pmi_reports_identical_excess() {
        let (world, partition) = random_world(5, 7, 3, 400, 1.0).unwrap();
        let g = pmi(&world).unwrap();
        let base = excess_risk(&g, &world, &partition).unwrap();
        let shifted = table(g.values().to_owned() + 3.25);
        let report = excess_risk(&shifted, &world, &partition).unwrap();
        assert_abs_diff_eq!(report.lhs, base.lhs, epsilon = 1e-9);
        assert_abs_diff_eq!(report.delta, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.rhs_sup, base.rhs_sup, epsilon = 1e-9);
    }

    #[test]
    fn perturbed_tables_respect_two_delta() {
        // Mean-classifier losses move by at most twice the shift-adjusted
        // sup-norm gap.
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        for &delta in &[0.1, 0.5, 2.0] {
            for trial in 0..20 {
                let (world, partition) =
                    random_world(5, 8, 3, 500 + trial, 1.0).unwrap();
                let g_star = pmi(&world).unwrap();
                let mut noise: Array2<f64> =
                    Array2::from_shape_fn((5, 8), |_| rng.random_range(-1.0..1.0));
                let peak = noise.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                noise.mapv_inplace(|v| v * delta / peak);
                let g = table(g_star.values().to_owned() + &noise);
                let measured = delta_gap(&g, &g_star).unwrap();
                assert!(measured <= delta + 1e-12);
                let h_star = mean_classifier(&g_star, &world, &partition).unwrap();
                let h = mean_classifier(&g, &world, &partition).unwrap();
                let diff = (sup_loss(&h, &world).unwrap()
                    - sup_loss(&h_star, &world).unwrap())
                .abs();
                assert!(
                    diff <= 2.0 * measured + 1e-10,
                    "delta {delta} trial {trial}: diff {diff} vs 2*{measured}"
                );
            }
        }
    }

    #[test]
    fn empty_subsets_are_rejected() {
        let world = random_dense_world(4, 6, 3, 600, 1.0).unwrap();
        // Class 3 (index 2) gets no captions.
        let partition = SubsetPartition::new(vec![1, 1, 2, 2, 1, 2], 3).unwrap();
        let g = table(Array2::zeros((4, 6)));
        match mean_classifier(&g, &world, &partition) {
            Err(Error::EmptySubset { class }) => assert_eq!(class, 2),
            other => panic!("expected empty-subset error, got {other:?}"),
        }
    }

    #[test]
    fn probe_input_validation() {
        let world = random_dense_world(4, 5, 2, 700, 1.0).unwrap();
        let bad_rows = Array2::<f64>::zeros((3, 2));
        assert!(fit_linear_probe(bad_rows.view(), &world, 1e-8, 10).is_err());
        let mut nan = Array2::<f64>::zeros((4, 2));
        nan[[1, 1]] = f64::NAN;
        assert!(fit_linear_probe(nan.view(), &world, 1e-8, 10).is_err());
        let ok = Array2::<f64>::zeros((4, 2));
        assert!(fit_linear_probe(ok.view(), &world, -1.0, 10).is_err());
        let w0 = Array2::<f64>::zeros((3, 2));
        let b0 = arr1(&[0.0, 0.0]);
        assert!(
            fit_linear_probe_from(ok.view(), &world, w0.view(), b0.view(), 1e-8, 10).is_err()
        );
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            // The excess-risk bound holds for random worlds and partitions,
            // including partitions that leave captions unassigned.
            #[test]
            fn excess_bound_holds(seed in 0u64..1000, frac in 0.0f64..0.3) {
                let world = random_dense_world(5, 8, 3, seed, 1.0).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
                let partition = SubsetPartition::random(8, 3, frac, &mut rng).unwrap();
                let g = pmi(&world).unwrap();
                if let Ok(report) = excess_risk(&g, &world, &partition) {
                    prop_assert!(report.lhs >= -1e-12);
                    prop_assert!(report.lhs <= report.rhs_expected + 1e-10);
                }
            }
        }
    }
}
