//! Tree prior, conjugate Gaussian leaf model and population impurity.
//!
//! Leaf values have prior `N(mu_bar, sigma2)` and observations in a leaf are
//! `N(theta, a * sigma2)`. With the leaf values integrated out, a leaf holding
//! `n` responses with centered sum `Z` and centered sum of squares `S`
//! contributes
//!
//! ```text
//! -(n/2) log(2 pi a sigma2) - (1/2) log((n + a)/a) - (S - Z^2/(n + a)) / (2 a sigma2)
//! ```
//!
//! to the log marginal likelihood; empty leaves contribute zero.

use std::ops::Deref;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tree::{FeatureDomain, MoveKind, TreeStructure};

/// Proposal probabilities for (Grow, Prune, Change, Swap).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveProbs<F> {
    pub grow: F,
    pub prune: F,
    pub change: F,
    pub swap: F,
}

impl<F: Real> MoveProbs<F> {
    pub fn new(grow: F, prune: F, change: F, swap: F) -> Self {
        Self {
            grow,
            prune,
            change,
            swap,
        }
    }

    /// Four-move mix used by BART and Bayesian CART.
    pub fn bart() -> Self {
        Self::new(F::lit(0.25), F::lit(0.25), F::lit(0.4), F::lit(0.1))
    }

    /// Grow and Prune only, each with probability 1/2.
    pub fn simplified() -> Self {
        Self::new(F::lit(0.5), F::lit(0.5), F::zero(), F::zero())
    }

    pub fn get(&self, kind: MoveKind) -> F {
        match kind {
            MoveKind::Grow => self.grow,
            MoveKind::Prune => self.prune,
            MoveKind::Change => self.change,
            MoveKind::Swap => self.swap,
            MoveKind::SelfLoop => F::zero(),
        }
    }

    pub fn as_array(&self) -> [F; 4] {
        [self.grow, self.prune, self.change, self.swap]
    }

    pub fn validate(&self) -> Result<()> {
        let arr = self.as_array();
        if arr.iter().any(|p| !(*p >= F::zero()) || !p.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "move probabilities must be nonnegative, got {arr:?}"
            )));
        }
        let total: F = arr.iter().copied().sum();
        if (total - F::one()).abs() > F::lit(1e-12).max(F::epsilon() * F::lit(4.0)) {
            return Err(Error::InvalidConfig(format!(
                "move probabilities sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Fixed hyperparameters of the tree model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig<F> {
    /// Base split probability, in (0, 1).
    pub alpha: F,
    /// Depth penalty, `>= 0`.
    pub beta: F,
    /// Leaf prior variance.
    pub sigma2: F,
    /// Noise variance is `a * sigma2`.
    pub a: F,
    /// Leaf prior mean.
    pub mu_bar: F,
    pub move_probs: MoveProbs<F>,
    /// Trees in the sum.
    pub num_trees: usize,
}

impl<F: Real> Default for ModelConfig<F> {
    fn default() -> Self {
        Self {
            alpha: F::lit(0.95),
            beta: F::lit(2.0),
            sigma2: F::one(),
            a: F::one(),
            mu_bar: F::zero(),
            move_probs: MoveProbs::bart(),
            num_trees: 1,
        }
    }
}

impl<F: Real> ModelConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > F::zero() && self.alpha < F::one()) {
            return Err(Error::InvalidConfig(format!(
                "alpha = {} not in (0, 1)",
                self.alpha
            )));
        }
        if !(self.beta >= F::zero()) || !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "beta = {} must be >= 0",
                self.beta
            )));
        }
        if !(self.sigma2 > F::zero()) || !self.sigma2.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "sigma2 = {} must be > 0",
                self.sigma2
            )));
        }
        if !(self.a > F::zero()) || !self.a.is_finite() {
            return Err(Error::InvalidConfig(format!("a = {} must be > 0", self.a)));
        }
        if !self.mu_bar.is_finite() {
            return Err(Error::InvalidConfig("mu_bar must be finite".into()));
        }
        if self.num_trees == 0 {
            return Err(Error::InvalidConfig("at least one tree is required".into()));
        }
        self.move_probs.validate()
    }

    pub fn with_move_probs(mut self, probs: MoveProbs<F>) -> Self {
        self.move_probs = probs;
        self
    }

    /// Probability that a node at `depth` splits, `alpha (1 + depth)^-beta`.
    pub fn split_probability(&self, depth: usize) -> F {
        self.alpha * (F::one() + F::of_usize(depth)).powf(-self.beta)
    }

    pub fn noise_variance(&self) -> F {
        self.a * self.sigma2
    }
}

/// Log prior mass of a tree structure.
///
/// Each internal node contributes `log(p_split(depth)) - log(#valid splits)`;
/// each leaf that could split contributes `log(1 - p_split(depth))`. A leaf
/// whose cell admits no split is forced and contributes nothing. A tree with
/// an internal node whose cell admits no split has prior mass zero (`-inf`).
pub fn log_prior<F: Real>(
    tree: &TreeStructure,
    config: &ModelConfig<F>,
    domain: &FeatureDomain,
) -> F {
    let cells = tree.cells(domain);
    let depths = tree.depths();
    let mut total = F::zero();
    for (id, cell) in cells.iter().enumerate() {
        let n_splits = cell.num_valid_splits();
        let p = config.split_probability(depths[id]);
        if tree.is_leaf(id) {
            if n_splits > 0 {
                total = total + (F::one() - p).ln();
            }
        } else {
            let split = tree.split_at(id).expect("internal node");
            if n_splits == 0 || !cell.admits(split) {
                return F::neg_infinity();
            }
            total = total + p.ln() - F::of_usize(n_splits).ln();
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafStat<F> {
    pub n: usize,
    /// `sum (y - mu_bar)`
    pub z: F,
    /// `sum (y - mu_bar)^2`
    pub s: F,
}

/// Per-leaf counts and centered sums, in canonical leaf order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafSuffStats<F> {
    pub leaves: Vec<LeafStat<F>>,
}

impl<F: Real> LeafSuffStats<F> {
    /// Accumulates responses given each row's leaf ordinal.
    pub fn from_assignment(assign: &[usize], y: &[F], num_leaves: usize, mu_bar: F) -> Self {
        let mut leaves = vec![
            LeafStat {
                n: 0,
                z: F::zero(),
                s: F::zero()
            };
            num_leaves
        ];
        for (&leaf, &yi) in assign.iter().zip(y) {
            let c = yi - mu_bar;
            let st = &mut leaves[leaf];
            st.n += 1;
            st.z = st.z + c;
            st.s = st.s + c * c;
        }
        Self { leaves }
    }

    pub fn total_count(&self) -> usize {
        self.leaves.iter().map(|l| l.n).sum()
    }

    /// Log marginal likelihood with leaf values integrated out.
    pub fn log_marginal(&self, config: &ModelConfig<F>) -> F {
        let noise = config.noise_variance();
        let log_2pi_noise = (F::TAU() * noise).ln();
        let half = F::lit(0.5);
        self.leaves
            .iter()
            .filter(|l| l.n > 0)
            .map(|l| {
                let n = F::of_usize(l.n);
                let quad = l.s - l.z * l.z / (n + config.a);
                -half * n * log_2pi_noise
                    - half * ((n + config.a) / config.a).ln()
                    - quad / (F::lit(2.0) * noise)
            })
            .sum()
    }
}

pub fn suff_stats<F: Real>(tree: &TreeStructure, data: &Dataset<F>, mu_bar: F) -> LeafSuffStats<F> {
    let assign = tree.assign_rows(data.x(), data.num_features());
    LeafSuffStats::from_assignment(&assign, data.y(), tree.num_leaves(), mu_bar)
}

/// `log p(y | tree, X)` with leaf values integrated out.
pub fn integrated_log_likelihood<F: Real>(
    tree: &TreeStructure,
    data: &Dataset<F>,
    config: &ModelConfig<F>,
) -> F {
    suff_stats(tree, data, config.mu_bar).log_marginal(config)
}

/// Conditional posterior `(mean, variance)` of one leaf value given the
/// leaf's count and centered sum.
pub fn leaf_posterior_params<F: Real>(n: usize, z: F, config: &ModelConfig<F>) -> (F, F) {
    let denom = F::of_usize(n) + config.a;
    (config.mu_bar + z / denom, config.sigma2 * config.a / denom)
}

/// Leaf values in canonical leaf order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafValues<F>(pub Vec<F>);

impl<F> Deref for LeafValues<F> {
    type Target = [F];

    fn deref(&self) -> &[F] {
        &self.0
    }
}

impl<F: Real> LeafValues<F> {
    /// One independent posterior draw per leaf.
    pub fn draw<R: Rng + ?Sized>(
        stats: &LeafSuffStats<F>,
        config: &ModelConfig<F>,
        rng: &mut R,
    ) -> Self
    where
        StandardNormal: Distribution<F>,
    {
        LeafValues(
            stats
                .leaves
                .iter()
                .map(|l| {
                    let (mean, var) = leaf_posterior_params(l.n, l.z, config);
                    let z: F = StandardNormal.sample(rng);
                    mean + var.sqrt() * z
                })
                .collect(),
        )
    }
}

/// Draws leaf values from their conditional posterior given the tree.
pub fn draw_leaf_values<F: Real, R: Rng + ?Sized>(
    tree: &TreeStructure,
    data: &Dataset<F>,
    config: &ModelConfig<F>,
    rng: &mut R,
) -> LeafValues<F>
where
    StandardNormal: Distribution<F>,
{
    LeafValues::draw(&suff_stats(tree, data, config.mu_bar), config, rng)
}

/// Both sides of the law of total variance for `f0` given a tree's partition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImpurityDecomposition<F> {
    /// `Var{f0(x)}`
    pub total: F,
    /// `E{Var{f0(x) | T(x)}}`
    pub within: F,
    /// `Var{E{f0(x) | T(x)}}`
    pub between: F,
}

impl<F: Real> ImpurityDecomposition<F> {
    /// Impurity decrease `total - within`.
    pub fn decrease(&self) -> F {
        self.total - self.within
    }
}

/// Exact variance decomposition of `f0` over the grid under `px`.
pub fn impurity_decomposition<F: Real>(
    f0: &[F],
    tree: &TreeStructure,
    px: &[F],
    domain: &FeatureDomain,
) -> Result<ImpurityDecomposition<F>> {
    let size = domain
        .grid_size()
        .ok_or_else(|| Error::InvalidInput("grid too large".into()))?;
    if f0.len() != size || px.len() != size {
        return Err(Error::InvalidInput(format!(
            "grid has {size} points, got {} f0 values and {} probabilities",
            f0.len(),
            px.len()
        )));
    }
    let mass: F = px.iter().copied().sum();
    if px.iter().any(|p| *p < F::zero())
        || (mass - F::one()).abs() > F::lit(1e-9).max(F::epsilon() * F::of_usize(size))
    {
        return Err(Error::NotNormalized(mass.to_f64_lossy()));
    }

    let b = tree.num_leaves();
    let ord = tree.leaf_ordinals();
    let leaf: Vec<usize> = domain
        .grid_points()
        .map(|x| ord[tree.leaf_node_of(&x)])
        .collect();
    let mut w = vec![F::zero(); b];
    let mut sum = vec![F::zero(); b];
    for ((&l, &p), &f) in leaf.iter().zip(px).zip(f0) {
        w[l] = w[l] + p;
        sum[l] = sum[l] + p * f;
    }
    let mean: F = px.iter().zip(f0).map(|(&p, &f)| p * f).sum();
    let leaf_mean: Vec<F> = w
        .iter()
        .zip(&sum)
        .map(|(&wi, &si)| if wi > F::zero() { si / wi } else { F::zero() })
        .collect();
    let total: F = px
        .iter()
        .zip(f0)
        .map(|(&p, &f)| p * (f - mean) * (f - mean))
        .sum();
    let within: F = leaf
        .iter()
        .zip(px)
        .zip(f0)
        .map(|((&l, &p), &f)| p * (f - leaf_mean[l]) * (f - leaf_mean[l]))
        .sum();
    let between: F = w
        .iter()
        .zip(&leaf_mean)
        .map(|(&wi, &mi)| wi * (mi - mean) * (mi - mean))
        .sum();
    Ok(ImpurityDecomposition {
        total,
        within,
        between,
    })
}

/// Population impurity decrease `Var{f0} - E{Var{f0 | T}}`.
pub fn impurity_decrease<F: Real>(
    f0: &[F],
    tree: &TreeStructure,
    px: &[F],
    domain: &FeatureDomain,
) -> Result<F> {
    impurity_decomposition(f0, tree, px, domain).map(|d| d.decrease())
}
