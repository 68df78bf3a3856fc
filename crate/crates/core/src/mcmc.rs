//! Metropolis-Hastings over tree structures and the BART backfitting sampler.
//!
//! A proposal picks a move kind by the configured probabilities, then a target
//! uniformly. If the chosen kind has no target in the current tree, or a
//! Change/Swap relabeling empties a descendant cell, the step is a self-loop
//! and counts as rejected; the kind is never redrawn.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diagnostics::rmse;
use crate::error::{Error, Result};
use crate::model::{log_prior, LeafSuffStats, LeafValues, ModelConfig, MoveProbs};
use crate::rng::{chain_seed, rng_from_seed, ChainRng};
use crate::tree::{Cell, FeatureDomain, Move, MoveKind, Split, TreeStructure};

pub type MoveDescriptor = Move;

/// Which splits a Grow move may propose.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Every split of the leaf's cell on the feature grid; matches the prior.
    #[default]
    Grid,
    /// Only splits leaving at least one training row on each side.
    Observed,
}

/// Sampler variants: move set and number of trees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Bayesian CART: all four moves, one tree.
    Bcart,
    /// Grow/Prune with probability 1/2 each, one tree.
    Simplified,
    /// All four moves, 200 trees.
    Bart,
}

impl Preset {
    pub fn move_probs(&self) -> MoveProbs<f64> {
        match self {
            Preset::Simplified => MoveProbs::simplified(),
            Preset::Bcart | Preset::Bart => MoveProbs::bart(),
        }
    }

    pub fn num_trees(&self) -> usize {
        match self {
            Preset::Bcart | Preset::Simplified => 1,
            Preset::Bart => 200,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Bcart => "bcart",
            Preset::Simplified => "simplified",
            Preset::Bart => "bart",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bcart" => Ok(Preset::Bcart),
            "simplified" => Ok(Preset::Simplified),
            "bart" => Ok(Preset::Bart),
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A proposed tree with the log proposal densities in both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalResult {
    pub tree: TreeStructure,
    /// `log psi(proposed | current)`; zero for self-loops.
    pub log_forward: f64,
    /// `log psi(current | proposed)`; zero for self-loops.
    pub log_reverse: f64,
    pub mv: Move,
}

impl ProposalResult {
    fn self_loop(tree: &TreeStructure) -> Self {
        Self {
            tree: tree.clone(),
            log_forward: 0.0,
            log_reverse: 0.0,
            mv: Move::SelfLoop,
        }
    }

    pub fn is_self_loop(&self) -> bool {
        self.mv == Move::SelfLoop
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub tree: TreeStructure,
    pub accepted: bool,
    pub mv: Move,
    /// Unnormalized log posterior of the returned tree.
    pub log_post: f64,
}

/// `min(1, exp(log_ratio))`, with NaN treated as a rejection.
pub fn acceptance_probability(log_ratio: f64) -> f64 {
    if log_ratio >= 0.0 {
        1.0
    } else if log_ratio.is_nan() {
        0.0
    } else {
        log_ratio.exp()
    }
}

/// Proposal mechanism and target density for one tree.
#[derive(Clone, Copy, Debug)]
pub struct Kernel<'a> {
    config: &'a ModelConfig<f64>,
    domain: &'a FeatureDomain,
    rule: SplitRule,
    /// Training features, needed by [`SplitRule::Observed`].
    x: &'a [u32],
}

impl<'a> Kernel<'a> {
    pub fn new(config: &'a ModelConfig<f64>, domain: &'a FeatureDomain) -> Self {
        Self {
            config,
            domain,
            rule: SplitRule::Grid,
            x: &[],
        }
    }

    /// Restricts Grow to splits with training rows from `x` on both sides.
    pub fn observed_splits(mut self, x: &'a [u32]) -> Self {
        self.rule = SplitRule::Observed;
        self.x = x;
        self
    }

    pub fn with_rule(self, rule: SplitRule, x: &'a [u32]) -> Self {
        match rule {
            SplitRule::Grid => Self { rule, ..self },
            SplitRule::Observed => self.observed_splits(x),
        }
    }

    pub fn config(&self) -> &ModelConfig<f64> {
        self.config
    }

    pub fn domain(&self) -> &FeatureDomain {
        self.domain
    }

    /// Splits a Grow move may use at a leaf with this cell.
    pub fn grow_splits(&self, cell: &Cell) -> Vec<Split> {
        let all = cell.valid_splits();
        match self.rule {
            SplitRule::Grid => all,
            SplitRule::Observed => {
                let d = self.domain.num_features();
                let rows: Vec<&[u32]> = self
                    .x
                    .chunks_exact(d)
                    .filter(|r| cell.contains(r))
                    .collect();
                all.into_iter()
                    .filter(|s| {
                        let left = rows.iter().filter(|r| s.goes_left(r)).count();
                        left > 0 && left < rows.len()
                    })
                    .collect()
            }
        }
    }

    /// Unnormalized log posterior of `tree` for responses `y` at rows `x`.
    pub fn log_target(&self, tree: &TreeStructure, x: &[u32], y: &[f64]) -> f64 {
        let assign = tree.assign_rows(x, self.domain.num_features());
        let stats =
            LeafSuffStats::from_assignment(&assign, y, tree.num_leaves(), self.config.mu_bar);
        log_prior(tree, self.config, self.domain) + stats.log_marginal(self.config)
    }

    fn log_prob(&self, kind: MoveKind) -> f64 {
        self.config.move_probs.get(kind).ln()
    }

    /// Log densities `(forward, reverse)` of a feasible move from `from` to `to`.
    pub fn log_densities(&self, from: &TreeStructure, mv: &Move, to: &TreeStructure) -> (f64, f64) {
        match *mv {
            Move::Grow { leaf, .. } => {
                let cell = &from.cells(self.domain)[leaf];
                let fwd = self.log_prob(MoveKind::Grow)
                    - (from.num_leaves() as f64).ln()
                    - (self.grow_splits(cell).len() as f64).ln();
                let rev = self.log_prob(MoveKind::Prune) - (to.prunable_nodes().len() as f64).ln();
                (fwd, rev)
            }
            Move::Prune { node } => {
                let fwd =
                    self.log_prob(MoveKind::Prune) - (from.prunable_nodes().len() as f64).ln();
                let split = from.split_at(node).expect("pruned node is internal");
                let cell = &to.cells(self.domain)[node];
                let splits = self.grow_splits(cell);
                let rev = if splits.contains(&split) {
                    self.log_prob(MoveKind::Grow)
                        - (to.num_leaves() as f64).ln()
                        - (splits.len() as f64).ln()
                } else {
                    f64::NEG_INFINITY
                };
                (fwd, rev)
            }
            Move::Change { node, .. } => {
                let n_splits = from.cells(self.domain)[node].num_valid_splits();
                let d = self.log_prob(MoveKind::Change)
                    - (from.internal_nodes().len() as f64).ln()
                    - (n_splits as f64).ln();
                (d, d)
            }
            Move::Swap { .. } => {
                let fwd = self.log_prob(MoveKind::Swap) - (from.swap_pairs().len() as f64).ln();
                let rev = self.log_prob(MoveKind::Swap) - (to.swap_pairs().len() as f64).ln();
                (fwd, rev)
            }
            Move::SelfLoop => (0.0, 0.0),
        }
    }

    fn finish(&self, tree: &TreeStructure, mv: Move) -> ProposalResult {
        match tree.apply_move(&mv, self.domain) {
            Ok(next) => {
                let (log_forward, log_reverse) = self.log_densities(tree, &mv, &next);
                ProposalResult {
                    tree: next,
                    log_forward,
                    log_reverse,
                    mv,
                }
            }
            Err(_) => ProposalResult::self_loop(tree),
        }
    }

    fn sample_kind<R: Rng + ?Sized>(&self, rng: &mut R) -> MoveKind {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = MoveKind::Grow;
        for kind in MoveKind::PROPOSABLE {
            let p = self.config.move_probs.get(kind);
            if p > 0.0 {
                acc += p;
                last = kind;
                if u < acc {
                    return kind;
                }
            }
        }
        last
    }

    /// Draws one proposal.
    pub fn propose<R: Rng + ?Sized>(&self, tree: &TreeStructure, rng: &mut R) -> ProposalResult {
        let mv = match self.sample_kind(rng) {
            MoveKind::Grow => {
                let leaves = tree.leaves();
                let leaf = leaves[rng.random_range(0..leaves.len())];
                let splits = self.grow_splits(&tree.cells(self.domain)[leaf]);
                if splits.is_empty() {
                    return ProposalResult::self_loop(tree);
                }
                Move::Grow {
                    leaf,
                    split: splits[rng.random_range(0..splits.len())],
                }
            }
            MoveKind::Prune => {
                let nodes = tree.prunable_nodes();
                if nodes.is_empty() {
                    return ProposalResult::self_loop(tree);
                }
                Move::Prune {
                    node: nodes[rng.random_range(0..nodes.len())],
                }
            }
            MoveKind::Change => {
                let nodes = tree.internal_nodes();
                if nodes.is_empty() {
                    return ProposalResult::self_loop(tree);
                }
                let node = nodes[rng.random_range(0..nodes.len())];
                let splits = tree.cells(self.domain)[node].valid_splits();
                Move::Change {
                    node,
                    split: splits[rng.random_range(0..splits.len())],
                }
            }
            MoveKind::Swap => {
                let pairs = tree.swap_pairs();
                if pairs.is_empty() {
                    return ProposalResult::self_loop(tree);
                }
                let (parent, child) = pairs[rng.random_range(0..pairs.len())];
                Move::Swap { parent, child }
            }
            MoveKind::SelfLoop => unreachable!("self-loop is never sampled"),
        };
        self.finish(tree, mv)
    }

    /// Every proposal outcome with its probability. Self-loop outcomes are
    /// listed individually; their probabilities plus the others sum to 1.
    pub fn proposal_distribution(&self, tree: &TreeStructure) -> Vec<(f64, ProposalResult)> {
        let mut out = Vec::new();
        let cells = tree.cells(self.domain);
        for kind in MoveKind::PROPOSABLE {
            let p = self.config.move_probs.get(kind);
            if p <= 0.0 {
                continue;
            }
            let moves: Vec<(f64, Option<Move>)> = match kind {
                MoveKind::Grow => {
                    let leaves = tree.leaves();
                    let per_leaf = p / leaves.len() as f64;
                    leaves
                        .iter()
                        .flat_map(|&leaf| {
                            let splits = self.grow_splits(&cells[leaf]);
                            if splits.is_empty() {
                                vec![(per_leaf, None)]
                            } else {
                                let q = per_leaf / splits.len() as f64;
                                splits
                                    .into_iter()
                                    .map(|split| (q, Some(Move::Grow { leaf, split })))
                                    .collect()
                            }
                        })
                        .collect()
                }
                MoveKind::Prune => uniform(p, tree.prunable_nodes(), |node| Move::Prune { node }),
                MoveKind::Change => {
                    let nodes = tree.internal_nodes();
                    if nodes.is_empty() {
                        vec![(p, None)]
                    } else {
                        let per_node = p / nodes.len() as f64;
                        nodes
                            .iter()
                            .flat_map(|&node| {
                                let splits = cells[node].valid_splits();
                                let q = per_node / splits.len() as f64;
                                splits
                                    .into_iter()
                                    .map(move |split| (q, Some(Move::Change { node, split })))
                            })
                            .collect()
                    }
                }
                MoveKind::Swap => uniform(p, tree.swap_pairs(), |(parent, child)| Move::Swap {
                    parent,
                    child,
                }),
                MoveKind::SelfLoop => unreachable!(),
            };
            for (q, mv) in moves {
                let result = match mv {
                    Some(mv) => self.finish(tree, mv),
                    None => ProposalResult::self_loop(tree),
                };
                out.push((q, result));
            }
        }
        out
    }

    /// One Metropolis-Hastings step from `tree`, whose log target is `log_post`.
    ///
    /// A uniform is drawn for every non-self-loop proposal, so the random
    /// stream does not depend on the acceptance ratio.
    pub fn step<R: Rng + ?Sized>(
        &self,
        tree: &TreeStructure,
        log_post: f64,
        x: &[u32],
        y: &[f64],
        rng: &mut R,
    ) -> StepOutcome {
        let proposal = self.propose(tree, rng);
        if proposal.is_self_loop() {
            return StepOutcome {
                tree: tree.clone(),
                accepted: false,
                mv: Move::SelfLoop,
                log_post,
            };
        }
        let proposed_post = self.log_target(&proposal.tree, x, y);
        let log_ratio = proposed_post + proposal.log_reverse - log_post - proposal.log_forward;
        let u: f64 = rng.random();
        if u < acceptance_probability(log_ratio) {
            StepOutcome {
                tree: proposal.tree,
                accepted: true,
                mv: proposal.mv,
                log_post: proposed_post,
            }
        } else {
            StepOutcome {
                tree: tree.clone(),
                accepted: false,
                mv: proposal.mv,
                log_post,
            }
        }
    }
}

fn uniform<T: Copy>(p: f64, items: Vec<T>, mk: impl Fn(T) -> Move) -> Vec<(f64, Option<Move>)> {
    if items.is_empty() {
        return vec![(p, None)];
    }
    let q = p / items.len() as f64;
    items.into_iter().map(|t| (q, Some(mk(t)))).collect()
}

/// One Metropolis-Hastings step on the tree-structure posterior.
pub fn mh_step<R: Rng + ?Sized>(
    tree: &TreeStructure,
    data: &Dataset<f64>,
    config: &ModelConfig<f64>,
    domain: &FeatureDomain,
    rng: &mut R,
) -> StepOutcome {
    let kernel = Kernel::new(config, domain);
    let lp = kernel.log_target(tree, data.x(), data.y());
    kernel.step(tree, lp, data.x(), data.y(), rng)
}

/// Draws one proposal with grid splits.
pub fn propose<R: Rng + ?Sized>(
    tree: &TreeStructure,
    config: &ModelConfig<f64>,
    domain: &FeatureDomain,
    rng: &mut R,
) -> ProposalResult {
    Kernel::new(config, domain).propose(tree, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Burnin,
    Sample,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Burnin => "burnin",
            Phase::Sample => "sample",
        }
    }
}

/// One iteration of a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub phase: Phase,
    /// Test-set RMSE of the drawn fit; `None` without test data.
    pub rmse: Option<f64>,
    /// Sum over trees of `log p(T_i) + log p(r_i | T_i, X)`, where `r_i` is
    /// the response (or partial residual) the tree was updated against.
    pub log_post: f64,
    /// Move proposed for the first tree.
    pub mv: MoveKind,
    /// Number of trees whose proposal was accepted.
    pub accepted: usize,
    /// Root split feature of each tree, `None` for a single leaf.
    pub roots: Vec<Option<usize>>,
    /// Canonical key of the first tree, when requested.
    pub key: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainTrace {
    pub num_trees: usize,
    pub rows: Vec<TraceRow>,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(|r| r.phase == Phase::Sample)
    }

    /// Post-burn-in test RMSE values.
    pub fn sample_rmse(&self) -> Vec<f64> {
        self.samples().filter_map(|r| r.rmse).collect()
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["iter", "phase", "rmse", "log_post", "move", "accepted"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((1..=self.num_trees).map(|i| format!("root_feature_{i}")));
        h
    }

    /// CSV bytes: `iter,phase,rmse,log_post,move,accepted,root_feature_1..M`.
    /// Root features are one-based; a single-leaf tree is `empty`.
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![
                r.iter.to_string(),
                r.phase.as_str().to_string(),
                r.rmse.map(|v| v.to_string()).unwrap_or_default(),
                r.log_post.to_string(),
                r.mv.as_str().to_string(),
                r.accepted.to_string(),
            ];
            rec.extend(r.roots.iter().map(|f| match f {
                Some(v) => (v + 1).to_string(),
                None => "empty".to_string(),
            }));
            w.write_record(&rec)?;
        }
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    /// Writes the CSV through a temporary file and a rename.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_csv_bytes()?)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let num_trees = headers
            .iter()
            .filter(|h| h.starts_with("root_feature_"))
            .count();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |what: &str| Error::Parse {
                path: shown.clone(),
                line,
                message: format!("bad {what}"),
            };
            let field = |i: usize| rec.get(i).unwrap_or("");
            let phase = match field(1) {
                "burnin" => Phase::Burnin,
                "sample" => Phase::Sample,
                _ => return Err(bad("phase")),
            };
            let rmse = match field(2) {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("rmse"))?),
            };
            let roots = (0..num_trees)
                .map(|t| match field(6 + t) {
                    "empty" => Ok(None),
                    s => s
                        .parse::<usize>()
                        .ok()
                        .filter(|&v| v >= 1)
                        .map(|v| Some(v - 1))
                        .ok_or_else(|| bad("root feature")),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(TraceRow {
                iter: field(0).parse().map_err(|_| bad("iter"))?,
                phase,
                rmse,
                log_post: field(3).parse().map_err(|_| bad("log_post"))?,
                mv: field(4).parse().map_err(|_| bad("move"))?,
                accepted: field(5).parse().map_err(|_| bad("accepted"))?,
                roots,
                key: None,
            });
        }
        Ok(Self { num_trees, rows })
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Iteration budget and reproducibility settings of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub iters: usize,
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default)]
    pub split_rule: SplitRule,
    /// Record the canonical key of the first tree on every row.
    #[serde(default)]
    pub record_keys: bool,
}

impl ChainSettings {
    pub fn new(iters: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            iters,
            burn_in,
            seed,
            split_rule: SplitRule::Grid,
            record_keys: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters <= self.burn_in {
            return Err(Error::InvalidConfig(format!(
                "iters ({}) must exceed burn-in ({})",
                self.iters, self.burn_in
            )));
        }
        Ok(())
    }

    fn phase(&self, iter: usize) -> Phase {
        if iter < self.burn_in {
            Phase::Burnin
        } else {
            Phase::Sample
        }
    }
}

fn check_test_domain(train: &Dataset<f64>, test: Option<&Dataset<f64>>) -> Result<()> {
    if let Some(t) = test {
        if t.domain() != train.domain() {
            return Err(Error::InvalidInput(format!(
                "test domain {} differs from training domain {}",
                t.domain(),
                train.domain()
            )));
        }
    }
    Ok(())
}

/// Single-tree chain (Bayesian CART, or simplified BART with Grow/Prune only)
/// started from the single-leaf tree.
///
/// After each structure step the leaf values are redrawn from their
/// conditional posterior to score the test set.
pub fn run_single_tree_chain(
    data: &Dataset<f64>,
    config: &ModelConfig<f64>,
    settings: &ChainSettings,
    test: Option<&Dataset<f64>>,
) -> Result<ChainTrace> {
    config.validate()?;
    settings.validate()?;
    check_test_domain(data, test)?;
    let domain = data.domain();
    let kernel = Kernel::new(config, domain).with_rule(settings.split_rule, data.x());
    let mut rng = rng_from_seed(settings.seed);
    let mut tree = TreeStructure::leaf();
    let mut lp = kernel.log_target(&tree, data.x(), data.y());
    let d = domain.num_features();
    let test = test.filter(|t| !t.is_empty());

    let mut rows = Vec::with_capacity(settings.iters);
    for iter in 0..settings.iters {
        let out = kernel.step(&tree, lp, data.x(), data.y(), &mut rng);
        tree = out.tree;
        lp = out.log_post;
        let assign = tree.assign_rows(data.x(), d);
        let stats =
            LeafSuffStats::from_assignment(&assign, data.y(), tree.num_leaves(), config.mu_bar);
        let theta = LeafValues::draw(&stats, config, &mut rng);
        let rmse = test.map(|t| {
            let pred: Vec<f64> = tree
                .assign_rows(t.x(), d)
                .iter()
                .map(|&l| theta[l])
                .collect();
            rmse(&pred, t.y()).expect("prediction length matches test set")
        });
        rows.push(TraceRow {
            iter,
            phase: settings.phase(iter),
            rmse,
            log_post: lp,
            mv: out.mv.kind(),
            accepted: out.accepted as usize,
            roots: vec![tree.root_split().map(|s| s.feature)],
            key: settings.record_keys.then(|| tree.canonical_key()),
        });
    }
    Ok(ChainTrace { num_trees: 1, rows })
}

/// Summary of one backfitting sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub first_move: MoveKind,
    pub accepted: usize,
    pub log_post: f64,
}

/// State of the sum-of-trees Gibbs sampler.
///
/// Per-tree fits on the training (and test) rows are cached; the running sum
/// is rebuilt at the start of each sweep and updated incrementally within it.
pub struct BartSampler<'a> {
    data: &'a Dataset<f64>,
    test: Option<&'a Dataset<f64>>,
    kernel: Kernel<'a>,
    trees: Vec<TreeStructure>,
    leaf_values: Vec<LeafValues<f64>>,
    fits: Vec<Vec<f64>>,
    total: Vec<f64>,
    test_fits: Vec<Vec<f64>>,
}

impl<'a> BartSampler<'a> {
    pub fn new(
        data: &'a Dataset<f64>,
        config: &'a ModelConfig<f64>,
        rule: SplitRule,
        test: Option<&'a Dataset<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        check_test_domain(data, test)?;
        let m = config.num_trees;
        let n = data.len();
        let test = test.filter(|t| !t.is_empty());
        let n_test = test.map_or(0, |t| t.len());
        let kernel = Kernel::new(config, data.domain()).with_rule(rule, data.x());
        let mut sampler = Self {
            data,
            test,
            kernel,
            trees: vec![TreeStructure::leaf(); m],
            leaf_values: vec![LeafValues(vec![config.mu_bar]); m],
            fits: vec![vec![config.mu_bar; n]; m],
            total: vec![0.0; n],
            test_fits: vec![vec![config.mu_bar; n_test]; m],
        };
        sampler.rebuild_totals();
        Ok(sampler)
    }

    pub fn trees(&self) -> &[TreeStructure] {
        &self.trees
    }

    pub fn leaf_values(&self) -> &[LeafValues<f64>] {
        &self.leaf_values
    }

    /// Incrementally maintained sum of tree fits on the training rows.
    pub fn total_fit(&self) -> &[f64] {
        &self.total
    }

    /// Sum of tree fits recomputed from the trees and leaf values.
    pub fn recomputed_total_fit(&self) -> Vec<f64> {
        let d = self.data.num_features();
        let mut out = vec![0.0; self.data.len()];
        for (tree, theta) in self.trees.iter().zip(&self.leaf_values) {
            for (o, l) in out.iter_mut().zip(tree.assign_rows(self.data.x(), d)) {
                *o += theta[l];
            }
        }
        out
    }

    /// Sum of tree fits on the test rows.
    pub fn test_prediction(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.test.map_or(0, |t| t.len())];
        sum_into(&mut out, &self.test_fits);
        out
    }

    fn rebuild_totals(&mut self) {
        sum_into(&mut self.total, &self.fits);
    }

    /// Updates every tree once against its partial residual.
    pub fn sweep(&mut self, rng: &mut ChainRng) -> SweepRecord {
        self.rebuild_totals();
        let d = self.data.num_features();
        let config = self.kernel.config();
        let mut record = SweepRecord {
            first_move: MoveKind::SelfLoop,
            accepted: 0,
            log_post: 0.0,
        };
        let mut residual = vec![0.0; self.data.len()];
        for i in 0..self.trees.len() {
            for (((r, &y), &t), &f) in residual
                .iter_mut()
                .zip(self.data.y())
                .zip(&self.total)
                .zip(&self.fits[i])
            {
                *r = y - (t - f);
            }
            let x = self.data.x();
            let lp = self.kernel.log_target(&self.trees[i], x, &residual);
            let out = self.kernel.step(&self.trees[i], lp, x, &residual, rng);
            if i == 0 {
                record.first_move = out.mv.kind();
            }
            record.accepted += out.accepted as usize;
            record.log_post += out.log_post;
            self.trees[i] = out.tree;

            let tree = &self.trees[i];
            let assign = tree.assign_rows(x, d);
            let stats = LeafSuffStats::from_assignment(
                &assign,
                &residual,
                tree.num_leaves(),
                config.mu_bar,
            );
            let theta = LeafValues::draw(&stats, config, rng);
            for ((t, f), &l) in self
                .total
                .iter_mut()
                .zip(self.fits[i].iter_mut())
                .zip(&assign)
            {
                let new = theta[l];
                *t += new - *f;
                *f = new;
            }
            if let Some(test) = self.test {
                self.test_fits[i] = tree
                    .assign_rows(test.x(), d)
                    .iter()
                    .map(|&l| theta[l])
                    .collect();
            }
            self.leaf_values[i] = theta;
        }
        record
    }

    /// Test RMSE of the current summed fit.
    pub fn test_rmse(&self) -> Option<f64> {
        self.test.map(|t| {
            rmse(&self.test_prediction(), t.y()).expect("prediction length matches test set")
        })
    }
}

fn sum_into(out: &mut [f64], parts: &[Vec<f64>]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for part in parts {
        for (o, p) in out.iter_mut().zip(part) {
            *o += p;
        }
    }
}

/// BART: `config.num_trees` trees updated by backfitting sweeps.
pub fn run_bart_chain(
    data: &Dataset<f64>,
    config: &ModelConfig<f64>,
    settings: &ChainSettings,
    test: Option<&Dataset<f64>>,
) -> Result<ChainTrace> {
    settings.validate()?;
    let mut sampler = BartSampler::new(data, config, settings.split_rule, test)?;
    let mut rng = rng_from_seed(settings.seed);
    let mut rows = Vec::with_capacity(settings.iters);
    for iter in 0..settings.iters {
        let rec = sampler.sweep(&mut rng);
        rows.push(TraceRow {
            iter,
            phase: settings.phase(iter),
            rmse: sampler.test_rmse(),
            log_post: rec.log_post,
            mv: rec.first_move,
            accepted: rec.accepted,
            roots: sampler
                .trees
                .iter()
                .map(|t| t.root_split().map(|s| s.feature))
                .collect(),
            key: settings
                .record_keys
                .then(|| sampler.trees[0].canonical_key()),
        });
    }
    Ok(ChainTrace {
        num_trees: config.num_trees,
        rows,
    })
}

/// Single-tree chain when `config.num_trees == 1`, backfitting otherwise.
/// Both paths produce identical traces for one tree.
pub fn run_chain(
    data: &Dataset<f64>,
    config: &ModelConfig<f64>,
    settings: &ChainSettings,
    test: Option<&Dataset<f64>>,
) -> Result<ChainTrace> {
    if config.num_trees == 1 {
        run_single_tree_chain(data, config, settings, test)
    } else {
        run_bart_chain(data, config, settings, test)
    }
}

/// `chains` independent chains; chain `j` uses seed `settings.seed + j`.
///
/// Chains run on at most `threads` workers. Output order is by chain index.
pub fn run_multi_chain(
    data: &Dataset<f64>,
    config: &ModelConfig<f64>,
    settings: &ChainSettings,
    test: Option<&Dataset<f64>>,
    chains: usize,
    threads: usize,
) -> Result<Vec<ChainTrace>> {
    if chains == 0 {
        return Err(Error::InvalidConfig(
            "at least one chain is required".into(),
        ));
    }
    let run = |j: usize| {
        let s = ChainSettings {
            seed: chain_seed(settings.seed, j),
            ..settings.clone()
        };
        run_chain(data, config, &s, test)
    };
    if threads <= 1 {
        return (0..chains).map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| (0..chains).into_par_iter().map(run).collect())
}
