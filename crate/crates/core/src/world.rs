//! Synthetic finite multimodal worlds.
//!
//! A world is a joint distribution `p(x, y)` over `n_x` instances and `n_y`
//! captions together with a label model `P(c|x)` over `K` classes. Because
//! everything is a finite table, every population quantity the laboratory
//! cares about is computable exactly: marginals, conditionals, the PMI table
//! `G_ij = ln(p_ij / (p_i p_j))`, the mutual information, the softmax
//! classification loss of the optimal classifier, and the two KL divergences
//! that bound downstream excess risk:
//!
//! - `eps1`, the divergence between the true class posterior `P(c|x)` and the
//!   posterior induced by caption subsets, `P(Y_c|x) / P(Y~|x)`;
//! - `eps2`, the divergence between the class-conditional caption
//!   distribution `p(y)/P(Y_c)` and its x-conditional counterpart
//!   `p(y|x)/P(Y_c|x)`.
//!
//! The structured generator builds worlds as
//! `p(x, y) = p(x) * sum_c P(c|x) q(y|c)` with each `q(.|c)` supported on its
//! own caption group. With no floor this construction makes both KL terms
//! vanish identically; a positive floor `eta` (renormalized) guarantees full
//! support and perturbs the terms away from zero, and large floors or
//! mismatched partitions produce adversarial worlds. `0 * ln 0 := 0`
//! throughout.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default full-support floor `eta` used by the generator.
pub const DEFAULT_FLOOR: f64 = 1e-4;

/// Mass-conservation tolerance for world invariants.
const MASS_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// A finite joint distribution with label structure.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteWorld {
    joint: Array2<f64>,
    label_cond: Array2<f64>,
}

impl DiscreteWorld {
    /// Validates and wraps a joint table and a label-conditional table.
    pub fn new(joint: Array2<f64>, label_cond: Array2<f64>) -> Result<Self> {
        let (n_x, n_y) = joint.dim();
        if n_x == 0 || n_y == 0 {
            return Err(Error::InvalidWorld("joint table must be nonempty".to_string()));
        }
        if label_cond.nrows() != n_x || label_cond.ncols() == 0 {
            return Err(Error::InvalidWorld(format!(
                "label_cond must have {n_x} rows and at least one class, got {:?}",
                label_cond.dim()
            )));
        }
        for ((i, j), &p) in joint.indexed_iter() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidWorld(format!(
                    "joint[{i}][{j}] = {p} is not a probability"
                )));
            }
        }
        let total: f64 = joint.sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidWorld(format!(
                "joint sums to {total}, expected 1 within {MASS_TOL}"
            )));
        }
        for (i, row) in label_cond.outer_iter().enumerate() {
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::InvalidWorld(format!(
                    "label_cond row {i} has a negative or non-finite entry"
                )));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > MASS_TOL {
                return Err(Error::InvalidWorld(format!(
                    "label_cond row {i} sums to {s}, expected 1 within {MASS_TOL}"
                )));
            }
        }
        for (i, row) in joint.outer_iter().enumerate() {
            if row.sum() <= 0.0 {
                return Err(Error::InvalidWorld(format!("marginal p(x_{i}) is zero")));
            }
        }
        for j in 0..n_y {
            if joint.column(j).sum() <= 0.0 {
                return Err(Error::InvalidWorld(format!("marginal p(y_{j}) is zero")));
            }
        }
        Ok(DiscreteWorld { joint, label_cond })
    }

    pub fn n_x(&self) -> usize {
        self.joint.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.joint.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.label_cond.ncols()
    }

    pub fn joint(&self) -> ArrayView2<'_, f64> {
        self.joint.view()
    }

    pub fn label_cond(&self) -> ArrayView2<'_, f64> {
        self.label_cond.view()
    }

    /// Marginal `p(x)` (row sums).
    pub fn p_x(&self) -> Array1<f64> {
        self.joint.sum_axis(ndarray::Axis(1))
    }

    /// Marginal `p(y)` (column sums).
    pub fn p_y(&self) -> Array1<f64> {
        self.joint.sum_axis(ndarray::Axis(0))
    }

    /// Conditional table `p(y|x)` (rows normalized).
    pub fn cond_y_given_x(&self) -> Array2<f64> {
        let mut out = self.joint.clone();
        for mut row in out.outer_iter_mut() {
            let s = row.sum();
            row.mapv_inplace(|p| p / s);
        }
        out
    }

    /// True if every joint cell is strictly positive.
    pub fn full_support(&self) -> bool {
        self.joint.iter().all(|&p| p > 0.0)
    }

    /// Draws `count` i.i.d. pairs from the joint distribution.
    pub fn sample_pairs<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<(usize, usize)> {
        let n_y = self.n_y();
        let flat: Vec<f64> = self.joint.iter().cloned().collect();
        let mut cdf = Vec::with_capacity(flat.len());
        let mut acc = 0.0;
        for p in &flat {
            acc += p;
            cdf.push(acc);
        }
        (0..count)
            .map(|_| {
                let u: f64 = rng.random_range(0.0..1.0);
                let idx = cdf.partition_point(|&c| c < u).min(flat.len() - 1);
                (idx / n_y, idx % n_y)
            })
            .collect()
    }
}

/// Assignment of captions to `K` disjoint subsets.
///
/// `assignment[y] = 0` means caption `y` belongs to no subset; value `c + 1`
/// means it belongs to class `c` (0-based everywhere else in the API).
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetPartition {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl SubsetPartition {
    pub fn new(assignment: Vec<usize>, n_classes: usize) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::InvalidPartition("need at least one class".to_string()));
        }
        let mut members = vec![Vec::new(); n_classes];
        for (y, &a) in assignment.iter().enumerate() {
            if a > n_classes {
                return Err(Error::InvalidPartition(format!(
                    "assignment[{y}] = {a} exceeds the class count {n_classes}"
                )));
            }
            if a > 0 {
                members[a - 1].push(y);
            }
        }
        Ok(SubsetPartition {
            assignment,
            members,
        })
    }

    /// Uniformly random partition covering all classes; a
    /// `unassigned_fraction` of captions (never the first `n_classes` after
    /// shuffling, which seed the classes) is left out of every subset.
    pub fn random<R: Rng>(
        n_y: usize,
        n_classes: usize,
        unassigned_fraction: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n_y < n_classes {
            return Err(Error::InvalidPartition(format!(
                "cannot cover {n_classes} classes with {n_y} captions"
            )));
        }
        let mut order: Vec<usize> = (0..n_y).collect();
        order.shuffle(rng);
        let mut assignment = vec![0usize; n_y];
        for (c, &y) in order.iter().take(n_classes).enumerate() {
            assignment[y] = c + 1;
        }
        for &y in order.iter().skip(n_classes) {
            if rng.random_range(0.0..1.0) < unassigned_fraction {
                assignment[y] = 0;
            } else {
                assignment[y] = rng.random_range(0..n_classes) + 1;
            }
        }
        Self::new(assignment, n_classes)
    }

    pub fn n_classes(&self) -> usize {
        self.members.len()
    }

    pub fn n_y(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// 0-based class of caption `y`, or `None` if unassigned.
    pub fn class_of(&self, y: usize) -> Option<usize> {
        match self.assignment[y] {
            0 => None,
            c => Some(c - 1),
        }
    }

    /// Captions belonging to 0-based class `c`.
    pub fn members(&self, c: usize) -> &[usize] {
        &self.members[c]
    }

    /// Errors unless every class has at least one caption.
    pub fn require_nonempty(&self) -> Result<()> {
        for (c, m) in self.members.iter().enumerate() {
            if m.is_empty() {
                return Err(Error::EmptySubset { class: c });
            }
        }
        Ok(())
    }
}

/// A similarity table `g(x, y)` over a world's instance/caption grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTable {
    values: Array2<f64>,
}

impl SimilarityTable {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for ((i, j), &v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry { row: i, col: j });
            }
        }
        Ok(SimilarityTable { values })
    }

    /// Table with entries uniform in `[-scale, scale]`; deterministic in the
    /// seed.
    pub fn random(n_x: usize, n_y: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array2::from_shape_fn((n_x, n_y), |_| rng.random_range(-scale..=scale));
        SimilarityTable { values }
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// A copy with independent uniform noise whose sup norm is exactly
    /// `delta`: the largest-magnitude draw is rescaled to sit on the bound.
    pub fn perturbed(&self, delta: f64, seed: u64) -> Result<SimilarityTable> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "delta",
                reason: format!("must be a nonnegative real, got {delta}"),
            });
        }
        if delta == 0.0 {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise: Array2<f64> =
            Array2::from_shape_fn(self.values.dim(), |_| rng.random_range(-1.0..=1.0));
        let peak = noise.iter().fold(0.0f64, |acc, e| acc.max(e.abs()));
        if peak == 0.0 {
            noise.fill(1.0);
        } else {
            noise.mapv_inplace(|e| e / peak);
        }
        SimilarityTable::new(&self.values + &(noise * delta))
    }
}

/// The two KL divergences bounding downstream excess risk, in expected and
/// supremum form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlTerms {
    pub eps1_expected: f64,
    pub eps2_expected: f64,
    pub eps1_sup: f64,
    pub eps2_sup: f64,
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

/// PMI table `G_ij = ln(p_ij / (p_i p_j))`. Requires full support.
pub fn pmi(world: &DiscreteWorld) -> Result<SimilarityTable> {
    let p_x = world.p_x();
    let p_y = world.p_y();
    let joint = world.joint();
    let mut values = Array2::zeros(joint.dim());
    for ((i, j), &p) in joint.indexed_iter() {
        if p <= 0.0 {
            return Err(Error::ZeroJointEntry { x: i, y: j });
        }
        values[[i, j]] = p.ln() - p_x[i].ln() - p_y[j].ln();
    }
    SimilarityTable::new(values)
}

/// Mutual information `I(X, Y) = sum_ij p_ij ln(p_ij / (p_i p_j))`.
pub fn mutual_information(world: &DiscreteWorld) -> Result<f64> {
    let p_x = world.p_x();
    let p_y = world.p_y();
    let mut total = 0.0;
    for ((i, j), &p) in world.joint().indexed_iter() {
        if p <= 0.0 {
            return Err(Error::ZeroJointEntry { x: i, y: j });
        }
        total += p * (p.ln() - p_x[i].ln() - p_y[j].ln());
    }
    Ok(total)
}

/// Exact expected and supremum KL terms for a world and caption partition.
pub fn kl_terms(world: &DiscreteWorld, partition: &SubsetPartition) -> Result<KlTerms> {
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
    partition.require_nonempty()?;

    let n_x = world.n_x();
    let k = world.n_classes();
    let p_x = world.p_x();
    let p_y = world.p_y();
    let cond = world.cond_y_given_x();
    let label_cond = world.label_cond();

    // Subset masses P(Y_c) under the caption marginal.
    let subset_mass: Vec<f64> = (0..k)
        .map(|c| partition.members(c).iter().map(|&y| p_y[y]).sum())
        .collect();
    for (c, &mass) in subset_mass.iter().enumerate() {
        if mass <= 0.0 {
            return Err(Error::EmptySubset { class: c });
        }
    }

    let mut eps1_expected = 0.0;
    let mut eps1_sup = f64::NEG_INFINITY;
    let mut eps2_expected = 0.0;
    let mut eps2_sup = f64::NEG_INFINITY;

    for x in 0..n_x {
        // P(Y_c | x) and P(Y~ | x).
        let subset_cond: Vec<f64> = (0..k)
            .map(|c| partition.members(c).iter().map(|&y| cond[[x, y]]).sum())
            .collect();
        let union_cond: f64 = subset_cond.iter().sum();
        if union_cond <= 0.0 {
            return Err(Error::InvalidPartition(format!(
                "P(caption union | x={x}) is zero"
            )));
        }

        // eps1 at x: KL(P(C|x) || P(Y_C|x) / P(Y~|x)).
        let mut kl1 = 0.0;
        for c in 0..k {
            let p = label_cond[[x, c]];
            if p > 0.0 {
                if subset_cond[c] <= 0.0 {
                    return Err(Error::ZeroConditionalMass { x, class: c });
                }
                kl1 += p * (p.ln() - (subset_cond[c] / union_cond).ln());
            }
        }
        eps1_expected += p_x[x] * kl1;
        eps1_sup = eps1_sup.max(kl1);

        // eps2 at (x, c): KL(p(y)/P(Y_c) || p(y|x)/P(Y_c|x)) over Y_c.
        for c in 0..k {
            if subset_cond[c] <= 0.0 {
                return Err(Error::ZeroConditionalMass { x, class: c });
            }
            let mut kl2 = 0.0;
            for &y in partition.members(c) {
                let a = p_y[y] / subset_mass[c];
                if a > 0.0 {
                    let b = cond[[x, y]] / subset_cond[c];
                    if b <= 0.0 {
                        return Err(Error::ZeroConditionalMass { x, class: c });
                    }
                    kl2 += a * (a.ln() - b.ln());
                }
            }
            eps2_expected += p_x[x] * label_cond[[x, c]] * kl2;
            eps2_sup = eps2_sup.max(kl2);
        }
    }

    Ok(KlTerms {
        eps1_expected,
        eps2_expected,
        eps1_sup,
        eps2_sup,
    })
}

/// Classification loss of the optimal classifier,
/// `L(h*) = E_{p(x,c)}[-ln P(c|x)]` (the conditional entropy of C given X).
pub fn sup_loss_optimal(world: &DiscreteWorld) -> f64 {
    let p_x = world.p_x();
    let mut total = 0.0;
    for (x, row) in world.label_cond().outer_iter().enumerate() {
        for &p in row.iter() {
            if p > 0.0 {
                total -= p_x[x] * p * p.ln();
            }
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Knobs of the structured world generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub n_classes: usize,
    pub seed: u64,
    /// Dirichlet concentration of every sampled distribution; small values
    /// yield peaked (near-deterministic) structure.
    pub concentration: f64,
    /// Full-support floor `eta`; 0 keeps the pure construction (and its
    /// exactly vanishing KL terms), larger values blur class structure.
    pub floor: f64,
    /// Build `p(x, y) = p(x) p(y)` instead (PMI identically zero).
    pub independent: bool,
}

impl GeneratorConfig {
    pub fn new(n_x: usize, n_y: usize, n_classes: usize, seed: u64) -> Self {
        GeneratorConfig {
            n_x,
            n_y,
            n_classes,
            seed,
            concentration: 1.0,
            floor: DEFAULT_FLOOR,
            independent: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.n_y < self.n_classes || self.n_x == 0 {
            return Err(Error::InvalidParameter {
                name: "generator",
                reason: format!(
                    "need n_x >= 1 and n_y >= n_classes >= 2, got n_x={}, n_y={}, K={}",
                    self.n_x, self.n_y, self.n_classes
                ),
            });
        }
        if !(self.concentration.is_finite() && self.concentration > 0.0) {
            return Err(Error::InvalidParameter {
                name: "concentration",
                reason: format!("must be positive, got {}", self.concentration),
            });
        }
        if !(self.floor.is_finite() && self.floor >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "floor",
                reason: format!("must be nonnegative, got {}", self.floor),
            });
        }
        Ok(())
    }
}

/// Unstructured random world: a Dirichlet draw over all joint cells and
/// Dirichlet label rows. Full support almost surely, no class structure;
/// the adversarial end of the generator family.
pub fn random_dense_world(
    n_x: usize,
    n_y: usize,
    n_classes: usize,
    seed: u64,
    concentration: f64,
) -> Result<DiscreteWorld> {
    if n_x == 0 || n_y == 0 || n_classes == 0 {
        return Err(Error::InvalidParameter {
            name: "generator",
            reason: "sizes must be positive".to_string(),
        });
    }
    if !(concentration.is_finite() && concentration > 0.0) {
        return Err(Error::InvalidParameter {
            name: "concentration",
            reason: format!("must be positive, got {concentration}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = dirichlet(&mut rng, concentration, n_x * n_y);
    let joint = Array2::from_shape_vec((n_x, n_y), flat.to_vec()).expect("sized above");
    let mut label_cond = Array2::zeros((n_x, n_classes));
    for mut row in label_cond.outer_iter_mut() {
        row.assign(&dirichlet(&mut rng, concentration, n_classes));
    }
    DiscreteWorld::new(joint, label_cond)
}

/// Dirichlet draw by Gamma normalization. Draws are floored at a denormal
/// guard so a pathological underflow cannot zero out a marginal.
fn dirichlet<R: Rng>(rng: &mut R, concentration: f64, n: usize) -> Array1<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("validated concentration");
    let mut draws = Array1::from_shape_fn(n, |_| f64::max(gamma.sample(rng), 1e-12));
    let total = draws.sum();
    draws.mapv_inplace(|g| g / total);
    draws
}

/// Class-structured random world with the generating partition.
///
/// Draw order is fixed (partition, `p(x)`, label rows, per-class caption
/// distributions, then the independent-mode caption marginal if requested),
/// so a seed pins the world bit-for-bit.
pub fn random_world_with(cfg: &GeneratorConfig) -> Result<(DiscreteWorld, SubsetPartition)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n_x, n_y, k) = (cfg.n_x, cfg.n_y, cfg.n_classes);

    // Caption groups: one guaranteed member per class, rest uniform.
    let mut order: Vec<usize> = (0..n_y).collect();
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; n_y];
    for (c, &y) in order.iter().take(k).enumerate() {
        assignment[y] = c + 1;
    }
    for &y in order.iter().skip(k) {
        assignment[y] = rng.random_range(0..k) + 1;
    }
    let partition = SubsetPartition::new(assignment, k)?;

    let p_x = dirichlet(&mut rng, cfg.concentration, n_x);
    let mut label_cond = Array2::zeros((n_x, k));
    for mut row in label_cond.outer_iter_mut() {
        row.assign(&dirichlet(&mut rng, cfg.concentration, k));
    }
    let mut caption_cond = Array2::zeros((k, n_y));
    for c in 0..k {
        let members = partition.members(c);
        let q = dirichlet(&mut rng, cfg.concentration, members.len());
        for (slot, &y) in members.iter().enumerate() {
            caption_cond[[c, y]] = q[slot];
        }
    }

    let world = if cfg.independent {
        let p_y = dirichlet(&mut rng, cfg.concentration, n_y);
        let mut joint = Array2::zeros((n_x, n_y));
        for i in 0..n_x {
            for j in 0..n_y {
                joint[[i, j]] = p_x[i] * p_y[j];
            }
        }
        DiscreteWorld::new(joint, label_cond)?
    } else {
        structured_world(
            p_x.view(),
            label_cond.view(),
            caption_cond.view(),
            &partition,
            cfg.floor,
        )?
    };
    Ok((world, partition))
}

/// Class-structured random world with default floor and the generating
/// partition.
pub fn random_world(
    n_x: usize,
    n_y: usize,
    n_classes: usize,
    seed: u64,
    concentration: f64,
) -> Result<(DiscreteWorld, SubsetPartition)> {
    let mut cfg = GeneratorConfig::new(n_x, n_y, n_classes, seed);
    cfg.concentration = concentration;
    random_world_with(&cfg)
}

/// Deterministic structured construction
/// `p(x, y) = (p(x) sum_c P(c|x) q(y|c) + eta) / (1 + eta n_x n_y)`.
///
/// `caption_cond` is `K x n_y`; row `c` must be a distribution supported on
/// the partition's class-`c` members. With `floor = 0` the construction
/// leaves both KL terms of [`kl_terms`] exactly zero for the generating
/// partition.
pub fn structured_world(
    p_x: ArrayView1<f64>,
    label_cond: ArrayView2<f64>,
    caption_cond: ArrayView2<f64>,
    partition: &SubsetPartition,
    floor: f64,
) -> Result<DiscreteWorld> {
    let n_x = p_x.len();
    let k = label_cond.ncols();
    let n_y = caption_cond.ncols();
    if label_cond.nrows() != n_x {
        return Err(Error::ShapeMismatch {
            expected: (n_x, k),
            got: label_cond.dim(),
        });
    }
    if caption_cond.nrows() != k || partition.n_classes() != k || partition.n_y() != n_y {
        return Err(Error::InvalidPartition(
            "caption_cond, label_cond, and partition disagree on shapes".to_string(),
        ));
    }
    for (c, row) in caption_cond.outer_iter().enumerate() {
        let s: f64 = row.sum();
        if (s - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidWorld(format!(
                "caption_cond row {c} sums to {s}, expected 1"
            )));
        }
        for (y, &q) in row.iter().enumerate() {
            if q < 0.0 || (q > 0.0 && partition.class_of(y) != Some(c)) {
                return Err(Error::InvalidWorld(format!(
                    "caption_cond[{c}][{y}] = {q} puts mass outside the class-{c} subset"
                )));
            }
        }
    }
    let norm = 1.0 + floor * (n_x * n_y) as f64;
    let mut joint = Array2::zeros((n_x, n_y));
    for i in 0..n_x {
        for j in 0..n_y {
            let mut mass = 0.0;
            for c in 0..k {
                mass += label_cond[[i, c]] * caption_cond[[c, j]];
            }
            joint[[i, j]] = (p_x[i] * mass + floor) / norm;
        }
    }
    DiscreteWorld::new(joint, label_cond.to_owned())
}

// ---------------------------------------------------------------------------
// World files
// ---------------------------------------------------------------------------

/// On-disk form of a world:
/// `{"joint": [[...]], "label_cond": [[...]], "partition": [...],
///   "seed": ..., "generator_config": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldFile {
    pub joint: Vec<Vec<f64>>,
    pub label_cond: Vec<Vec<f64>>,
    pub partition: Vec<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub generator_config: Option<GeneratorConfig>,
}

impl WorldFile {
    pub fn from_parts(
        world: &DiscreteWorld,
        partition: &SubsetPartition,
        generator_config: Option<GeneratorConfig>,
    ) -> Self {
        WorldFile {
            joint: world.joint().outer_iter().map(|r| r.to_vec()).collect(),
            label_cond: world
                .label_cond()
                .outer_iter()
                .map(|r| r.to_vec())
                .collect(),
            partition: partition.assignment().to_vec(),
            seed: generator_config.as_ref().map(|c| c.seed),
            generator_config,
        }
    }

    /// Validates the tables and rebuilds the typed pair.
    pub fn into_parts(self) -> Result<(DiscreteWorld, SubsetPartition)> {
        let joint = rows_to_array(&self.joint, "joint")?;
        let label_cond = rows_to_array(&self.label_cond, "label_cond")?;
        let k = label_cond.ncols();
        let world = DiscreteWorld::new(joint, label_cond)?;
        if self.partition.len() != world.n_y() {
            return Err(Error::InvalidPartition(format!(
                "partition covers {} captions, world has {}",
                self.partition.len(),
                world.n_y()
            )));
        }
        let partition = SubsetPartition::new(self.partition, k)?;
        Ok((world, partition))
    }
}

fn rows_to_array(rows: &[Vec<f64>], name: &str) -> Result<Array2<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::InvalidWorld(format!("{name} table must be nonempty")));
    }
    let cols = rows[0].len();
    let mut flat = Vec::with_capacity(rows.len() * cols);
    for row in rows {
        if row.len() != cols {
            return Err(Error::InvalidWorld(format!(
                "{name} rows have inconsistent lengths"
            )));
        }
        flat.extend_from_slice(row);
    }
    Ok(Array2::from_shape_vec((rows.len(), cols), flat).expect("shape checked"))
}
