//! Exact analysis of the single-tree chain on small grids.
//!
//! Everything that can underflow (posterior masses, transition entries,
//! probability flows) is carried as a logarithm; linear values are derived.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{synth_generate, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::mcmc::{acceptance_probability, Kernel};
use crate::model::{impurity_decrease, integrated_log_likelihood, log_prior, ModelConfig};
use crate::scalar::log_sum_exp;
use crate::tree::{Cell, FeatureDomain, MoveKind, Split, TreeStructure};

/// Default cap on the number of enumerated trees.
pub const DEFAULT_STATE_LIMIT: usize = 100_000;
/// Largest state space for which every subset is scanned.
pub const EXHAUSTIVE_LIMIT: usize = 20;

fn count_trees(cell: &Cell, cap: usize, memo: &mut HashMap<Cell, Vec<f64>>) -> Vec<f64> {
    // counts[k] = number of trees over `cell` with k + 1 leaves, k < cap
    if let Some(c) = memo.get(cell) {
        return c.clone();
    }
    let mut counts = vec![0.0; cap];
    counts[0] = 1.0;
    for split in cell.valid_splits() {
        let (l, r) = cell.children(split);
        let cl = count_trees(&l, cap, memo);
        let cr = count_trees(&r, cap, memo);
        for (i, a) in cl.iter().enumerate().filter(|(_, a)| **a > 0.0) {
            for (j, b) in cr.iter().enumerate() {
                if i + j + 1 < cap {
                    counts[i + j + 1] += a * b;
                }
            }
        }
    }
    memo.insert(cell.clone(), counts.clone());
    counts
}

fn count_all(cell: &Cell, memo: &mut HashMap<Cell, f64>) -> f64 {
    if let Some(&c) = memo.get(cell) {
        return c;
    }
    let mut total = 1.0;
    for split in cell.valid_splits() {
        let (l, r) = cell.children(split);
        total += count_all(&l, memo) * count_all(&r, memo);
    }
    memo.insert(cell.clone(), total);
    total
}

/// Number of trees over `domain`, optionally restricted to at most
/// `max_leaves` leaves. May be `inf` for large grids.
pub fn count_states(domain: &FeatureDomain, max_leaves: Option<usize>) -> f64 {
    let root = domain.root_cell();
    match max_leaves {
        None => count_all(&root, &mut HashMap::new()),
        Some(0) => 0.0,
        Some(cap) => count_trees(&root, cap, &mut HashMap::new()).iter().sum(),
    }
}

fn expand(
    cell: &Cell,
    cap: usize,
    memo: &mut HashMap<(Cell, usize), Vec<TreeStructure>>,
) -> Vec<TreeStructure> {
    let key = (cell.clone(), cap);
    if let Some(t) = memo.get(&key) {
        return t.clone();
    }
    let mut out = vec![TreeStructure::leaf()];
    if cap >= 2 {
        for split in cell.valid_splits() {
            let (l, r) = cell.children(split);
            for left in expand(&l, cap - 1, memo) {
                let room = cap - left.num_leaves();
                for right in expand(&r, room, memo) {
                    out.push(TreeStructure::join(split, left.clone(), right));
                }
            }
        }
    }
    memo.insert(key, out.clone());
    out
}

/// Every tree over `domain` exactly once: the single leaf first, then by
/// root split, left subtree in the outer loop.
pub fn enumerate_states(
    domain: &FeatureDomain,
    max_leaves: Option<usize>,
    limit: usize,
) -> Result<Vec<TreeStructure>> {
    let projected = count_states(domain, max_leaves);
    if !(projected <= limit as f64) {
        return Err(Error::StateSpaceTooLarge { projected, limit });
    }
    let cap = max_leaves.unwrap_or(projected as usize + 1);
    if cap == 0 {
        return Ok(Vec::new());
    }
    Ok(expand(&domain.root_cell(), cap, &mut HashMap::new()))
}

/// Unnormalized log posterior of each state.
pub fn log_posterior_weights(
    states: &[TreeStructure],
    data: &Dataset<f64>,
    config: &ModelConfig<f64>,
) -> Vec<f64> {
    states
        .iter()
        .map(|t| log_prior(t, config, data.domain()) + integrated_log_likelihood(t, data, config))
        .collect()
}

fn normalize_log(log_w: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(log_w.iter().copied());
    log_w.iter().map(|w| w - z).collect()
}

/// Exact posterior over `states`.
pub fn exact_posterior(
    states: &[TreeStructure],
    data: &Dataset<f64>,
    config: &ModelConfig<f64>,
) -> Vec<f64> {
    normalize_log(&log_posterior_weights(states, data, config))
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Exact transition structure of one Metropolis-Hastings step.
#[derive(Clone, Debug)]
pub struct MarkovSpec {
    /// Empty for chains built directly from a matrix.
    pub states: Vec<TreeStructure>,
    pub keys: Vec<String>,
    pub log_pi: Vec<f64>,
    pub pi: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    /// `ln q`, `-inf` for zero entries.
    pub log_q: Vec<Vec<f64>>,
}

const ROW_TOL: f64 = 1e-9;
const STATIONARY_TOL: f64 = 1e-9;
const BALANCE_TOL: f64 = 1e-10;
const LOG_BALANCE_TOL: f64 = 1e-8;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl MarkovSpec {
    /// Wraps an explicit chain, checking the same invariants as
    /// [`transition_matrix`].
    pub fn from_matrix(q: Vec<Vec<f64>>, pi: Vec<f64>) -> Result<Self> {
        let n = pi.len();
        if q.len() != n || q.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput(
                "transition matrix shape does not match pi".into(),
            ));
        }
        let log_q = q
            .iter()
            .map(|r| r.iter().map(|v| v.ln()).collect())
            .collect();
        let spec = Self {
            states: Vec::new(),
            keys: (0..n).map(|i| format!("s{i}")).collect(),
            log_pi: pi.iter().map(|p| p.ln()).collect(),
            pi,
            q,
            log_q,
        };
        let mass: f64 = spec.pi.iter().sum();
        if (mass - 1.0).abs() > ROW_TOL {
            return Err(Error::NotNormalized(mass));
        }
        spec.check()?;
        Ok(spec)
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.keys.iter().position(|k| k == key)
    }

    /// Stochastic rows, stationarity and detailed balance.
    pub fn check(&self) -> Result<()> {
        let n = self.len();
        for (i, row) in self.q.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL || row.iter().any(|v| *v < 0.0) {
                return Err(Error::MarkovInvariant(format!(
                    "row {} sums to {s}",
                    self.keys[i]
                )));
            }
        }
        for j in 0..n {
            let flow: f64 = (0..n).map(|i| self.pi[i] * self.q[i][j]).sum();
            if (flow - self.pi[j]).abs() > STATIONARY_TOL {
                return Err(Error::MarkovInvariant(format!(
                    "pi is not stationary at {}: (pi Q) = {flow}, pi = {}",
                    self.keys[j], self.pi[j]
                )));
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let fwd = self.pi[i] * self.q[i][j];
                let rev = self.pi[j] * self.q[j][i];
                let lf = self.log_pi[i] + self.log_q[i][j];
                let lr = self.log_pi[j] + self.log_q[j][i];
                let log_ok = (lf == f64::NEG_INFINITY && lr == f64::NEG_INFINITY)
                    || (lf - lr).abs() <= LOG_BALANCE_TOL * lf.abs().max(1.0);
                if (fwd - rev).abs() > BALANCE_TOL || !log_ok {
                    return Err(Error::MarkovInvariant(format!(
                        "detailed balance fails between {} and {}: {fwd} vs {rev} (log {lf} vs {lr})",
                        self.keys[i], self.keys[j]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest entrywise detailed-balance gap `|pi_i Q_ij - pi_j Q_ji|`.
    pub fn max_balance_gap(&self) -> f64 {
        let n = self.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.pi[i] * self.q[i][j] - self.pi[j] * self.q[j][i]).abs());
            }
        }
        worst
    }

    /// States reachable from `start` through positive off-diagonal entries
    /// without entering any state in `avoid`.
    pub fn reachable_avoiding(&self, start: usize, avoid: &[usize]) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for (j, &p) in self.q[i].iter().enumerate() {
                if !seen[j] && j != i && p > 0.0 && !avoid.contains(&j) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    }
}

/// Builds the exact kernel of the Metropolis-Hastings chain on `states`.
///
/// Every proposal reachable from a state must land in `states`.
pub fn transition_matrix(
    states: &[TreeStructure],
    data: &Dataset<f64>,
    config: &ModelConfig<f64>,
    domain: &FeatureDomain,
) -> Result<MarkovSpec> {
    config.validate()?;
    let kernel = Kernel::new(config, domain);
    let keys: Vec<String> = states.iter().map(TreeStructure::canonical_key).collect();
    let index: HashMap<&str, usize> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();
    if index.len() != keys.len() {
        return Err(Error::InvalidInput("duplicate states".into()));
    }
    let log_target: Vec<f64> = states
        .iter()
        .map(|t| kernel.log_target(t, data.x(), data.y()))
        .collect();
    let n = states.len();
    let mut log_q = vec![vec![f64::NEG_INFINITY; n]; n];
    let mut q = vec![vec![0.0; n]; n];
    for (i, tree) in states.iter().enumerate() {
        let mut stay = 0.0;
        for (p, prop) in kernel.proposal_distribution(tree) {
            if prop.is_self_loop() || prop.tree == *tree {
                stay += p;
                continue;
            }
            let key = prop.tree.canonical_key();
            let j = *index.get(key.as_str()).ok_or_else(|| {
                Error::MarkovInvariant(format!(
                    "proposal from {} leaves the state space: {key}",
                    keys[i]
                ))
            })?;
            let log_ratio = log_target[j] + prop.log_reverse - log_target[i] - prop.log_forward;
            let log_acc = log_ratio.min(0.0);
            log_q[i][j] = log_add(log_q[i][j], p.ln() + log_acc);
            stay += p * (1.0 - acceptance_probability(log_ratio));
        }
        for j in 0..n {
            if j != i {
                q[i][j] = log_q[i][j].exp();
            }
        }
        q[i][i] = stay;
        log_q[i][i] = stay.ln();
    }
    let log_pi = normalize_log(&log_target);
    let pi = log_pi.iter().map(|v| v.exp()).collect();
    let spec = MarkovSpec {
        states: states.to_vec(),
        keys,
        log_pi,
        pi,
        q,
        log_q,
    };
    spec.check()?;
    Ok(spec)
}

fn membership(n: usize, subset: &[usize]) -> Result<Vec<bool>> {
    let mut inside = vec![false; n];
    for &s in subset {
        if s >= n {
            return Err(Error::InvalidInput(format!("state {s} out of range")));
        }
        inside[s] = true;
    }
    let k = inside.iter().filter(|b| **b).count();
    if k == 0 || k == n {
        return Err(Error::InvalidInput(
            "conductance needs a proper nonempty subset".into(),
        ));
    }
    Ok(inside)
}

fn log_conductance_mask(spec: &MarkovSpec, inside: &[bool]) -> f64 {
    let n = spec.len();
    let mut flows = Vec::new();
    for i in (0..n).filter(|&i| inside[i]) {
        for j in (0..n).filter(|&j| !inside[j]) {
            flows.push(spec.log_pi[i] + spec.log_q[i][j]);
        }
    }
    let flow = log_sum_exp(flows.iter().copied());
    let mass_in = log_sum_exp((0..n).filter(|&i| inside[i]).map(|i| spec.log_pi[i]));
    let mass_out = log_sum_exp((0..n).filter(|&i| !inside[i]).map(|i| spec.log_pi[i]));
    flow - mass_in.min(mass_out)
}

/// `ln Phi(S)`.
pub fn log_conductance(spec: &MarkovSpec, subset: &[usize]) -> Result<f64> {
    Ok(log_conductance_mask(spec, &membership(spec.len(), subset)?))
}

/// `Phi(S) = Q(S, S^c) / min(pi(S), pi(S^c))`.
pub fn conductance(spec: &MarkovSpec, subset: &[usize]) -> Result<f64> {
    log_conductance(spec, subset).map(f64::exp)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMode {
    /// Every proper subset; refused above [`EXHAUSTIVE_LIMIT`] states.
    Exhaustive,
    /// Root-split sets only; an upper bound on the true minimum.
    Bottleneck,
    /// Exhaustive when allowed, bottleneck otherwise.
    #[default]
    Auto,
}

impl std::str::FromStr for PhiMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(PhiMode::Exhaustive),
            "bottleneck" => Ok(PhiMode::Bottleneck),
            "auto" => Ok(PhiMode::Auto),
            _ => Err(Error::InvalidInput(format!("unknown phi mode {s:?}"))),
        }
    }
}

/// `ln Phi*` over every proper subset.
pub fn log_phi_star_exhaustive(spec: &MarkovSpec) -> Result<f64> {
    let n = spec.len();
    if n > EXHAUSTIVE_LIMIT {
        return Err(Error::StateSpaceTooLarge {
            projected: n as f64,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    if n < 2 {
        return Err(Error::InvalidInput(
            "conductance needs at least two states".into(),
        ));
    }
    // Phi(S) = Phi(S^c), so subsets without the last state suffice.
    let mut best = f64::INFINITY;
    let mut inside = vec![false; n];
    for mask in 1u32..(1u32 << (n - 1)) {
        for (i, b) in inside.iter_mut().enumerate().take(n - 1) {
            *b = mask >> i & 1 == 1;
        }
        best = best.min(log_conductance_mask(spec, &inside));
    }
    Ok(best)
}

/// States grouped by root split, in order of first appearance.
pub fn root_split_sets(spec: &MarkovSpec) -> Vec<(Split, Vec<usize>)> {
    let mut out: Vec<(Split, Vec<usize>)> = Vec::new();
    for (i, t) in spec.states.iter().enumerate() {
        if let Some(s) = t.root_split() {
            match out.iter_mut().find(|(r, _)| *r == s) {
                Some((_, v)) => v.push(i),
                None => out.push((s, vec![i])),
            }
        }
    }
    out
}

/// `ln Phi(S)` for every root-split set.
pub fn bottleneck_log_conductances(spec: &MarkovSpec) -> Result<Vec<(Split, f64)>> {
    if spec.states.is_empty() {
        return Err(Error::InvalidInput(
            "bottleneck sets need tree states".into(),
        ));
    }
    root_split_sets(spec)
        .into_iter()
        .map(|(s, set)| log_conductance(spec, &set).map(|v| (s, v)))
        .collect()
}

/// `ln Phi*` in the requested mode.
pub fn log_phi_star(spec: &MarkovSpec, mode: PhiMode) -> Result<f64> {
    let bottleneck = || {
        bottleneck_log_conductances(spec)
            .map(|v| v.iter().map(|p| p.1).fold(f64::INFINITY, f64::min))
    };
    match mode {
        PhiMode::Exhaustive => log_phi_star_exhaustive(spec),
        PhiMode::Bottleneck => bottleneck(),
        PhiMode::Auto if spec.len() <= EXHAUSTIVE_LIMIT => log_phi_star_exhaustive(spec),
        PhiMode::Auto => bottleneck(),
    }
}

pub fn phi_star(spec: &MarkovSpec, mode: PhiMode) -> Result<f64> {
    log_phi_star(spec, mode).map(f64::exp)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingTime {
    Mixed {
        t: u64,
    },
    /// Worst-start distance still above `eps` at the cap.
    Exceeded {
        tv: f64,
    },
}

impl MixingTime {
    pub fn steps(&self) -> Option<u64> {
        match self {
            MixingTime::Mixed { t } => Some(*t),
            MixingTime::Exceeded { .. } => None,
        }
    }
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

fn row_tvs(p: &[Vec<f64>], pi: &[f64]) -> Vec<f64> {
    p.iter()
        .map(|row| 0.5 * row.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .collect()
}

fn worst(tvs: &[f64]) -> f64 {
    tvs.iter().copied().fold(0.0, f64::max)
}

/// First `t` with `max_s TV(Q^t(s, .), pi) <= eps`.
///
/// Per-start distances are audited to be nonincreasing in `t`.
pub fn exact_mixing_time(spec: &MarkovSpec, eps: f64, t_cap: u64) -> Result<MixingTime> {
    let n = spec.len();
    let identity: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut prev = row_tvs(&identity, &spec.pi);
    if worst(&prev) <= eps {
        return Ok(MixingTime::Mixed { t: 0 });
    }
    // Q^t_cap by squaring settles the exceeded case cheaply.
    let mut power = identity.clone();
    let mut base = spec.q.clone();
    let mut e = t_cap;
    while e > 0 {
        if e & 1 == 1 {
            power = matmul(&power, &base);
        }
        e >>= 1;
        if e > 0 {
            base = matmul(&base, &base);
        }
    }
    let at_cap = worst(&row_tvs(&power, &spec.pi));
    if at_cap > eps {
        return Ok(MixingTime::Exceeded { tv: at_cap });
    }
    let mut p = identity;
    for t in 1..=t_cap {
        p = matmul(&p, &spec.q);
        let tvs = row_tvs(&p, &spec.pi);
        for (s, (now, before)) in tvs.iter().zip(&prev).enumerate() {
            if *now > before + 1e-12 {
                return Err(Error::MarkovInvariant(format!(
                    "distance to stationarity from {} rose from {before} to {now} at t = {t}",
                    spec.keys[s]
                )));
            }
        }
        if worst(&tvs) <= eps {
            return Ok(MixingTime::Mixed { t });
        }
        prev = tvs;
    }
    Ok(MixingTime::Exceeded { tv: worst(&prev) })
}

/// Tree fitting `f0` exactly from a fixed root split: each child splits
/// greedily (largest within-cell impurity decrease, uniform weights, first
/// split on ties) until `f0` is constant on the cell.
pub fn exact_tree(f0: &[f64], domain: &FeatureDomain, root: Split) -> Result<TreeStructure> {
    let cell = domain.root_cell();
    if !cell.admits(root) {
        return Err(Error::InvalidInput(format!(
            "root split {root} is not valid"
        )));
    }
    if domain.grid_size() != Some(f0.len()) {
        return Err(Error::InvalidInput("f0 does not cover the grid".into()));
    }
    let (l, r) = cell.children(root);
    Ok(TreeStructure::join(
        root,
        refine(f0, domain, &l),
        refine(f0, domain, &r),
    ))
}

fn cell_values(f0: &[f64], domain: &FeatureDomain, cell: &Cell) -> Vec<(Vec<u32>, f64)> {
    domain
        .grid_points()
        .filter(|x| cell.contains(x))
        .map(|x| {
            let v = f0[domain.grid_index(&x)];
            (x, v)
        })
        .collect()
}

fn sse(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, s) = vals.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return 0.0;
    }
    let m = s / n as f64;
    vals.map(|v| (v - m) * (v - m)).sum()
}

fn refine(f0: &[f64], domain: &FeatureDomain, cell: &Cell) -> TreeStructure {
    let pts = cell_values(f0, domain, cell);
    let first = pts[0].1;
    if pts.iter().all(|(_, v)| *v == first) {
        return TreeStructure::leaf();
    }
    let mut best: Option<(f64, Split)> = None;
    for split in cell.valid_splits() {
        let left = pts.iter().filter(|(x, _)| split.goes_left(x)).map(|p| p.1);
        let right = pts.iter().filter(|(x, _)| !split.goes_left(x)).map(|p| p.1);
        let within = sse(left) + sse(right);
        if best.is_none_or(|(b, _)| within < b) {
            best = Some((within, split));
        }
    }
    let split = best.expect("nonconstant cell has a split").1;
    let (l, r) = cell.children(split);
    TreeStructure::join(split, refine(f0, domain, &l), refine(f0, domain, &r))
}

/// One exact tree per valid root split.
pub fn exact_trees(f0: &[f64], domain: &FeatureDomain) -> Result<Vec<TreeStructure>> {
    domain
        .root_cell()
        .valid_splits()
        .into_iter()
        .map(|s| exact_tree(f0, domain, s))
        .collect()
}

/// `(log p(y|T0) - log p(y|T) + n Delta(T) / (2 a sigma^2)) / sqrt(n log n)` for each tree.
pub fn lemma4_residuals(
    data: &Dataset<f64>,
    trees: &[TreeStructure],
    f0: &[f64],
    px: &[f64],
    config: &ModelConfig<f64>,
) -> Result<Vec<f64>> {
    let n = data.len() as f64;
    let scale = (n * n.ln()).sqrt();
    let base = integrated_log_likelihood(&TreeStructure::leaf(), data, config);
    trees
        .iter()
        .map(|t| {
            let delta = impurity_decrease(f0, t, px, data.domain())?;
            let log_lr = base - integrated_log_likelihood(t, data, config);
            Ok((log_lr + n * delta / (2.0 * config.noise_variance())) / scale)
        })
        .collect()
}

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub phi_mode: PhiMode,
    pub eps: f64,
    pub t_cap: u64,
    pub state_limit: usize,
    /// Accepted slope ratio band `[1/f, f]` against the predicted slope.
    pub slope_factor: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            phi_mode: PhiMode::Auto,
            eps: 0.25,
            t_cap: 1_000_000,
            state_limit: DEFAULT_STATE_LIMIT,
            slope_factor: 2.0,
        }
    }
}

/// Bottleneck check for one root-split set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Check {
    /// Root split, features one-based.
    pub split: String,
    pub phi: f64,
    pub pi_set: f64,
    /// Exact tree whose mass bounds `min(pi(S), pi(S^c))` from below.
    pub witness: String,
    /// `pi(T0) psi(stump | T0) / pi(witness)`.
    pub bound: f64,
    /// Same with `psi` replaced by `1 / (2 m d)`, `m` the largest arity.
    pub bound_grid_constant: f64,
    pub ok: bool,
}

/// One synthetic data set at one `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub n: usize,
    pub seed: u64,
    pub phi_star: f64,
    pub log_inv_phi: f64,
    pub phi_bottleneck: f64,
    pub t_mix: MixingTime,
    /// `1 / (4 phi_star)`
    pub lemma2_lower: f64,
    /// False only when an exact `t_mix` is below `1 / (4 phi_star)`.
    pub lemma2_ok: bool,
    /// Whether `t_mix` was exact, so the check was decisive.
    pub lemma2_exact: bool,
    pub lemma3: Vec<Lemma3Check>,
    /// One residual per exact tree; absent for `n < 2`.
    pub lemma4_residuals: Vec<f64>,
}

/// Per-`n` summary row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub n: usize,
    /// First seed's instance.
    pub phi_star: f64,
    pub phi_bottleneck: f64,
    pub t_mix: Option<u64>,
    /// Over all seeds.
    pub lemma2_ok: bool,
    /// First seed, bound for the set attaining `phi_bottleneck`.
    pub lemma3_bound: f64,
    pub lemma3_ok: bool,
    /// Largest absolute residual over seeds and exact trees.
    pub lemma4_residual: Option<f64>,
    /// Mean of `ln(1/phi_star)` over seeds.
    pub log_inv_phi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub domain: FeatureDomain,
    pub num_states: usize,
    pub options: OracleOptions,
    pub variance: f64,
    pub bound_k: f64,
    pub predicted_slope: f64,
    pub lemma4_envelope: f64,
    pub exact_trees: Vec<String>,
    pub rows: Vec<BoundsRow>,
    pub fit: Option<LinearFit>,
    pub log_inv_phi_increasing: bool,
    pub slope_ok: bool,
    pub lemma2_all_ok: bool,
    pub lemma3_all_ok: bool,
    pub lemma4_all_ok: bool,
    pub instances: Vec<InstanceReport>,
}

impl BoundsReport {
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "n",
            "phi_star",
            "phi_bottleneck",
            "t_mix",
            "lemma2_ok",
            "lemma3_bound",
            "lemma4_residual",
            "log_inv_phi",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                format!("{:e}", r.phi_star),
                format!("{:e}", r.phi_bottleneck),
                r.t_mix.map_or("exceeded".to_string(), |t| t.to_string()),
                r.lemma2_ok.to_string(),
                format!("{:e}", r.lemma3_bound),
                r.lemma4_residual
                    .map_or("NA".to_string(), |v| v.to_string()),
                r.log_inv_phi.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

fn lemma3_checks(
    spec: &MarkovSpec,
    exact: &[TreeStructure],
    config: &ModelConfig<f64>,
    domain: &FeatureDomain,
) -> Result<Vec<Lemma3Check>> {
    let root_splits = domain.root_cell().num_valid_splits() as f64;
    let psi = config.move_probs.get(MoveKind::Grow) / root_splits;
    let m = *domain.arity().iter().max().unwrap_or(&1) as f64;
    let psi_grid = 1.0 / (2.0 * m * domain.num_features() as f64);
    let t0 = spec
        .index_of(&TreeStructure::leaf().canonical_key())
        .ok_or_else(|| Error::MarkovInvariant("single-leaf tree missing".into()))?;
    let lookup = |t: &TreeStructure| {
        let key = t.canonical_key();
        spec.index_of(&key)
            .ok_or_else(|| Error::MarkovInvariant(format!("exact tree {key} missing")))
    };
    let mut out = Vec::new();
    for (split, set) in root_split_sets(spec) {
        let log_phi = log_conductance(spec, &set)?;
        let log_pi_set = log_sum_exp(set.iter().map(|&i| spec.log_pi[i]));
        let witness = if log_pi_set <= 0.5f64.ln() {
            let t = exact
                .iter()
                .find(|t| t.root_split() == Some(split))
                .ok_or_else(|| {
                    Error::MarkovInvariant(format!("no exact tree with root {split}"))
                })?;
            lookup(t)?
        } else {
            let mut best: Option<usize> = None;
            for t in exact.iter().filter(|t| t.root_split() != Some(split)) {
                let i = lookup(t)?;
                if best.is_none_or(|b| spec.log_pi[i] > spec.log_pi[b]) {
                    best = Some(i);
                }
            }
            best.unwrap_or(t0)
        };
        let log_base = spec.log_pi[t0] - spec.log_pi[witness];
        let bound = (log_base + psi.ln()).exp();
        out.push(Lemma3Check {
            split: split.to_string(),
            phi: log_phi.exp(),
            pi_set: log_pi_set.exp(),
            witness: spec.keys[witness].clone(),
            bound,
            bound_grid_constant: (log_base + psi_grid.ln()).exp(),
            ok: log_phi <= log_base + psi.ln() + 1e-9 * log_phi.abs().max(1.0),
        });
    }
    Ok(out)
}

fn instance(
    synth: &SyntheticSpec,
    states: &[TreeStructure],
    exact: &[TreeStructure],
    config: &ModelConfig<f64>,
    options: &OracleOptions,
    n: usize,
    seed: u64,
) -> Result<InstanceReport> {
    let domain = &synth.domain;
    let data = synth_generate(&synth.with_n(n), seed)?;
    let spec = transition_matrix(states, &data, config, domain)?;
    let log_phi = log_phi_star(&spec, options.phi_mode)?;
    let log_bottleneck = bottleneck_log_conductances(&spec)?
        .iter()
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min);
    let t_mix = exact_mixing_time(&spec, options.eps, options.t_cap)?;
    let lemma2_lower = 0.25 * (-log_phi).exp();
    let lemma2_ok = match t_mix {
        MixingTime::Mixed { t } => t as f64 >= lemma2_lower,
        MixingTime::Exceeded { .. } => true,
    };
    let lemma4_residuals = if n >= 2 {
        lemma4_residuals(&data, exact, &synth.f0, &synth.px(), config)?
    } else {
        Vec::new()
    };
    Ok(InstanceReport {
        n,
        seed,
        phi_star: log_phi.exp(),
        log_inv_phi: -log_phi,
        phi_bottleneck: log_bottleneck.exp(),
        t_mix,
        lemma2_lower,
        lemma2_ok,
        lemma2_exact: t_mix.steps().is_some(),
        lemma3: lemma3_checks(&spec, exact, config, domain)?,
        lemma4_residuals,
    })
}

/// Runs the exact pipeline at every `n` and seed and checks the bounds.
pub fn verify_bounds(
    synth: &SyntheticSpec,
    n_grid: &[usize],
    config: &ModelConfig<f64>,
    seeds: &[u64],
    options: &OracleOptions,
) -> Result<BoundsReport> {
    synth.validate()?;
    config.validate()?;
    if seeds.is_empty() || n_grid.is_empty() {
        return Err(Error::InvalidInput(
            "need at least one seed and one n".into(),
        ));
    }
    let domain = &synth.domain;
    let states = enumerate_states(domain, None, options.state_limit)?;
    let exact = exact_trees(&synth.f0, domain)?;
    let jobs: Vec<(usize, u64)> = n_grid
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    let instances: Vec<InstanceReport> = jobs
        .par_iter()
        .map(|&(n, s)| instance(synth, &states, &exact, config, options, n, s))
        .collect::<Result<_>>()?;

    let bound_k = synth.bound();
    let envelope = 10.0 * bound_k * bound_k / config.noise_variance();
    let rows: Vec<BoundsRow> = n_grid
        .iter()
        .map(|&n| {
            let group: Vec<&InstanceReport> = instances.iter().filter(|r| r.n == n).collect();
            let first = group[0];
            let attaining = first
                .lemma3
                .iter()
                .min_by(|a, b| a.phi.total_cmp(&b.phi))
                .map_or(f64::NAN, |c| c.bound);
            let residual = group
                .iter()
                .flat_map(|r| r.lemma4_residuals.iter().map(|v| v.abs()))
                .reduce(f64::max);
            BoundsRow {
                n,
                phi_star: first.phi_star,
                phi_bottleneck: first.phi_bottleneck,
                t_mix: first.t_mix.steps(),
                lemma2_ok: group.iter().all(|r| r.lemma2_ok),
                lemma3_bound: attaining,
                lemma3_ok: group.iter().all(|r| r.lemma3.iter().all(|c| c.ok)),
                lemma4_residual: residual,
                log_inv_phi: group.iter().map(|r| r.log_inv_phi).sum::<f64>() / group.len() as f64,
            }
        })
        .collect();

    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.log_inv_phi).collect();
    let fit = linear_fit(&xs, &ys);
    let predicted_slope = synth.variance() / (2.0 * config.noise_variance());
    let slope_ok = fit.is_some_and(|f| {
        f.slope >= predicted_slope / options.slope_factor
            && f.slope <= predicted_slope * options.slope_factor
    });
    Ok(BoundsReport {
        domain: domain.clone(),
        num_states: states.len(),
        options: options.clone(),
        variance: synth.variance(),
        bound_k,
        predicted_slope,
        lemma4_envelope: envelope,
        exact_trees: exact.iter().map(TreeStructure::canonical_key).collect(),
        log_inv_phi_increasing: ys.windows(2).all(|w| w[1] > w[0]),
        slope_ok,
        lemma2_all_ok: rows.iter().all(|r| r.lemma2_ok),
        lemma3_all_ok: rows.iter().all(|r| r.lemma3_ok),
        lemma4_all_ok: rows
            .iter()
            .all(|r| r.lemma4_residual.is_none_or(|v| v <= envelope)),
        rows,
        fit,
        instances,
    })
}
