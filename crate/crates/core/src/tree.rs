//! Decision trees over a discrete feature grid.
//!
//! A [`TreeStructure`] is stored as a preorder node arena. Node ids are
//! preorder positions, so leaves enumerated by id are in left-to-right order,
//! which is the canonical leaf ordering used for all leaf-value vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type NodeId = usize;

/// Per-feature value counts; feature `v` takes values `1..=arity[v]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct FeatureDomain {
    arity: Vec<u32>,
}

impl FeatureDomain {
    pub fn new(arity: Vec<u32>) -> Result<Self> {
        if arity.is_empty() {
            return Err(Error::InvalidDomain(
                "at least one feature is required".into(),
            ));
        }
        if let Some(v) = arity.iter().position(|&m| m == 0) {
            return Err(Error::InvalidDomain(format!(
                "feature {} has arity 0",
                v + 1
            )));
        }
        Ok(Self { arity })
    }

    /// `d` features, each with `m` values.
    pub fn uniform(m: u32, d: usize) -> Result<Self> {
        Self::new(vec![m; d])
    }

    pub fn num_features(&self) -> usize {
        self.arity.len()
    }

    pub fn arity(&self) -> &[u32] {
        &self.arity
    }

    /// Number of grid points, `None` on overflow.
    pub fn grid_size(&self) -> Option<usize> {
        self.arity
            .iter()
            .try_fold(1usize, |acc, &m| acc.checked_mul(m as usize))
    }

    pub fn contains(&self, x: &[u32]) -> bool {
        x.len() == self.arity.len()
            && x.iter()
                .zip(&self.arity)
                .all(|(&xv, &m)| xv >= 1 && xv <= m)
    }

    pub fn check(&self, x: &[u32]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                point: x.to_vec(),
                arity: self.arity.clone(),
            })
        }
    }

    /// Row-major position of a grid point (last feature varies fastest).
    pub fn grid_index(&self, x: &[u32]) -> usize {
        x.iter().zip(&self.arity).fold(0usize, |acc, (&xv, &m)| {
            acc * m as usize + (xv - 1) as usize
        })
    }

    pub fn grid_point(&self, mut index: usize) -> Vec<u32> {
        let mut x = vec![0u32; self.arity.len()];
        for (slot, &m) in x.iter_mut().zip(&self.arity).rev() {
            *slot = (index % m as usize) as u32 + 1;
            index /= m as usize;
        }
        x
    }

    /// All grid points in row-major order.
    pub fn grid_points(&self) -> impl Iterator<Item = Vec<u32>> + '_ {
        let n = self.grid_size().expect("grid size overflows usize");
        (0..n).map(move |i| self.grid_point(i))
    }

    pub fn root_cell(&self) -> Cell {
        Cell {
            lo: vec![1; self.arity.len()],
            hi: self.arity.clone(),
        }
    }
}

impl TryFrom<Vec<u32>> for FeatureDomain {
    type Error = Error;

    fn try_from(arity: Vec<u32>) -> Result<Self> {
        Self::new(arity)
    }
}

impl From<FeatureDomain> for Vec<u32> {
    fn from(domain: FeatureDomain) -> Self {
        domain.arity
    }
}

impl FromStr for FeatureDomain {
    type Err = Error;

    /// Parses `"2x2"`, `"3x4x2"`, or a single arity `"5"`.
    fn from_str(s: &str) -> Result<Self> {
        let arity = s
            .split(['x', 'X', ','])
            .map(|p| {
                p.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::InvalidDomain(format!("cannot parse `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(arity)
    }
}

impl fmt::Display for FeatureDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.arity.iter().map(u32::to_string).collect();
        f.write_str(&parts.join("x"))
    }
}

/// Split rule `x[feature] <= threshold` goes left.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: u32,
}

impl Split {
    pub fn new(feature: usize, threshold: u32) -> Self {
        Self { feature, threshold }
    }

    #[inline]
    pub fn goes_left(&self, x: &[u32]) -> bool {
        x[self.feature] <= self.threshold
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.feature + 1, self.threshold)
    }
}

/// Axis-aligned box of grid points, inclusive per-feature ranges.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    lo: Vec<u32>,
    hi: Vec<u32>,
}

impl Cell {
    pub fn lo(&self) -> &[u32] {
        &self.lo
    }

    pub fn hi(&self) -> &[u32] {
        &self.hi
    }

    pub fn contains(&self, x: &[u32]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&xv, (&lo, &hi))| lo <= xv && xv <= hi)
    }

    pub fn admits(&self, split: Split) -> bool {
        split.feature < self.lo.len()
            && self.lo[split.feature] <= split.threshold
            && split.threshold < self.hi[split.feature]
    }

    /// Children of the cell under `split`; the caller guarantees `admits(split)`.
    pub fn children(&self, split: Split) -> (Cell, Cell) {
        let mut left = self.clone();
        let mut right = self.clone();
        left.hi[split.feature] = split.threshold;
        right.lo[split.feature] = split.threshold + 1;
        (left, right)
    }

    /// Every admissible split, by feature then threshold.
    pub fn valid_splits(&self) -> Vec<Split> {
        let mut out = Vec::with_capacity(self.num_valid_splits());
        for (v, (&lo, &hi)) in self.lo.iter().zip(&self.hi).enumerate() {
            for t in lo..hi {
                out.push(Split::new(v, t));
            }
        }
        out
    }

    pub fn num_valid_splits(&self) -> usize {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&lo, &hi)| (hi - lo) as usize)
            .sum()
    }

    pub fn num_points(&self) -> usize {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&lo, &hi)| (hi - lo + 1) as usize)
            .product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Leaf,
    Internal {
        split: Split,
        left: NodeId,
        right: NodeId,
    },
}

/// Rooted ordered binary tree with `(feature, threshold)` labels on internal
/// nodes. Node 0 is the root; node ids are preorder positions.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TreeStructure {
    nodes: Vec<Node>,
}

impl Default for TreeStructure {
    fn default() -> Self {
        Self::leaf()
    }
}

impl TreeStructure {
    /// The single-leaf tree.
    pub fn leaf() -> Self {
        Self {
            nodes: vec![Node::Leaf],
        }
    }

    /// Tree whose root splits on `split` with the given subtrees.
    pub fn join(split: Split, left: TreeStructure, right: TreeStructure) -> Self {
        let left_len = left.nodes.len();
        let mut nodes = Vec::with_capacity(1 + left_len + right.nodes.len());
        nodes.push(Node::Internal {
            split,
            left: 1,
            right: 1 + left_len,
        });
        nodes.extend(left.nodes.iter().map(|n| shift(*n, 1)));
        nodes.extend(right.nodes.iter().map(|n| shift(*n, 1 + left_len)));
        Self { nodes }
    }

    /// Depth-one tree splitting the root.
    pub fn stump(split: Split) -> Self {
        Self::join(split, Self::leaf(), Self::leaf())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_trivial(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.len().div_ceil(2)
    }

    pub fn root_split(&self) -> Option<Split> {
        match self.nodes[0] {
            Node::Leaf => None,
            Node::Internal { split, .. } => Some(split),
        }
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes.get(id), Some(Node::Leaf))
    }

    pub fn split_at(&self, id: NodeId) -> Option<Split> {
        match self.nodes.get(id) {
            Some(Node::Internal { split, .. }) => Some(*split),
            _ => None,
        }
    }

    /// Leaf node ids in left-to-right order.
    pub fn leaves(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    pub fn internal_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| !self.is_leaf(i))
            .collect()
    }

    /// Internal nodes whose children are both leaves.
    pub fn prunable_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match *n {
                Node::Internal { left, right, .. } if self.is_leaf(left) && self.is_leaf(right) => {
                    Some(i)
                }
                _ => None,
            })
            .collect()
    }

    /// `(parent, child)` pairs where both are internal, left child first.
    pub fn swap_pairs(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if let Node::Internal { left, right, .. } = *n {
                for c in [left, right] {
                    if !self.is_leaf(c) {
                        out.push((i, c));
                    }
                }
            }
        }
        out
    }

    /// Depth of every node; the root has depth 0.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Node::Internal { left, right, .. } = *n {
                depth[left] = depth[i] + 1;
                depth[right] = depth[i] + 1;
            }
        }
        depth
    }

    /// Cell of every node. Children of an inadmissible split get an empty
    /// range on that feature (`lo > hi`), which [`TreeStructure::validate`] reports.
    pub fn cells(&self, domain: &FeatureDomain) -> Vec<Cell> {
        let mut cells = vec![domain.root_cell(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Node::Internal { split, left, right } = *n {
                let mut l = cells[i].clone();
                let mut r = cells[i].clone();
                if split.feature < l.hi.len() {
                    l.hi[split.feature] = split.threshold.min(l.hi[split.feature]);
                    r.lo[split.feature] = split.threshold + 1;
                }
                cells[left] = l;
                cells[right] = r;
            }
        }
        cells
    }

    pub fn validate(&self, domain: &FeatureDomain) -> Result<()> {
        let cells = self.cells(domain);
        for (i, n) in self.nodes.iter().enumerate() {
            if let Node::Internal { split, .. } = *n {
                if split.feature >= domain.num_features() {
                    return Err(Error::InvalidTree(format!(
                        "node {i} splits on feature {} of a {}-feature domain",
                        split.feature + 1,
                        domain.num_features()
                    )));
                }
                if !cells[i].admits(split) {
                    return Err(Error::InvalidTree(format!(
                        "node {i} split {split} leaves an empty child"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Splits available at `node`'s cell.
    pub fn valid_splits(&self, node: NodeId, domain: &FeatureDomain) -> Vec<Split> {
        self.cells(domain)[node].valid_splits()
    }

    /// Map from node id to leaf ordinal (`usize::MAX` for internal nodes).
    pub fn leaf_ordinals(&self) -> Vec<usize> {
        let mut next = 0;
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Leaf => {
                    next += 1;
                    next - 1
                }
                Node::Internal { .. } => usize::MAX,
            })
            .collect()
    }

    /// Node id of the leaf containing `x`; `x` must be in the domain.
    #[inline]
    pub fn leaf_node_of(&self, x: &[u32]) -> NodeId {
        let mut id = 0;
        while let Node::Internal { split, left, right } = self.nodes[id] {
            id = if split.goes_left(x) { left } else { right };
        }
        id
    }

    /// Ordinal of the leaf containing `x`.
    pub fn leaf_index(&self, domain: &FeatureDomain, x: &[u32]) -> Result<usize> {
        domain.check(x)?;
        let node = self.leaf_node_of(x);
        Ok(self.nodes[..node]
            .iter()
            .filter(|n| matches!(n, Node::Leaf))
            .count())
    }

    /// Leaf ordinal for each row of a row-major feature matrix.
    pub fn assign_rows(&self, x: &[u32], d: usize) -> Vec<usize> {
        let ord = self.leaf_ordinals();
        x.chunks_exact(d)
            .map(|row| ord[self.leaf_node_of(row)])
            .collect()
    }

    pub fn evaluate<F: Real>(&self, theta: &[F], domain: &FeatureDomain, x: &[u32]) -> Result<F> {
        if theta.len() != self.num_leaves() {
            return Err(Error::InvalidInput(format!(
                "{} leaf values for a tree with {} leaves",
                theta.len(),
                self.num_leaves()
            )));
        }
        Ok(theta[self.leaf_index(domain, x)?])
    }

    /// Preorder serialization: `L` for a leaf, `N(v,t)[left,right]` for a split,
    /// with `v` one-based.
    pub fn canonical_key(&self) -> String {
        let mut out = String::with_capacity(self.nodes.len() * 8);
        self.write_key(0, &mut out);
        out
    }

    fn write_key(&self, id: NodeId, out: &mut String) {
        match self.nodes[id] {
            Node::Leaf => out.push('L'),
            Node::Internal { split, left, right } => {
                out.push('N');
                out.push_str(&split.to_string());
                out.push('[');
                self.write_key(left, out);
                out.push(',');
                self.write_key(right, out);
                out.push(']');
            }
        }
    }

    fn subtree(&self, id: NodeId) -> TreeStructure {
        match self.nodes[id] {
            Node::Leaf => Self::leaf(),
            Node::Internal { split, left, right } => {
                Self::join(split, self.subtree(left), self.subtree(right))
            }
        }
    }

    /// Copy of the tree with the subtree at `target` replaced.
    fn replace_subtree(&self, target: NodeId, with: &TreeStructure) -> TreeStructure {
        fn go(
            t: &TreeStructure,
            id: NodeId,
            target: NodeId,
            with: &TreeStructure,
        ) -> TreeStructure {
            if id == target {
                return with.clone();
            }
            match t.nodes[id] {
                Node::Leaf => TreeStructure::leaf(),
                Node::Internal { split, left, right } => TreeStructure::join(
                    split,
                    go(t, left, target, with),
                    go(t, right, target, with),
                ),
            }
        }
        go(self, 0, target, with)
    }

    /// Applies a move, leaving `self` untouched.
    ///
    /// Grow keeps node ids before the grown leaf, so the new internal node has
    /// id `leaf`; likewise a pruned node `p` becomes leaf `p`.
    pub fn apply_move(
        &self,
        mv: &Move,
        domain: &FeatureDomain,
    ) -> Result<TreeStructure, Infeasible> {
        match *mv {
            Move::SelfLoop => Err(Infeasible::SelfLoop),
            Move::Grow { leaf, split } => {
                if !self.is_leaf(leaf) {
                    return Err(Infeasible::NotALeaf(leaf));
                }
                if !self.cells(domain)[leaf].admits(split) {
                    return Err(Infeasible::InadmissibleSplit(split));
                }
                Ok(self.replace_subtree(leaf, &Self::stump(split)))
            }
            Move::Prune { node } => match self.nodes.get(node) {
                Some(Node::Internal { left, right, .. })
                    if self.is_leaf(*left) && self.is_leaf(*right) =>
                {
                    Ok(self.replace_subtree(node, &Self::leaf()))
                }
                _ => Err(Infeasible::NotPrunable(node)),
            },
            Move::Change { node, split } => {
                let mut out = self.clone();
                match out.nodes.get_mut(node) {
                    Some(Node::Internal { split: s, .. }) => *s = split,
                    _ => return Err(Infeasible::NotInternal(node)),
                }
                out.validate(domain)
                    .map_err(|_| Infeasible::BreaksDescendant)?;
                Ok(out)
            }
            Move::Swap { parent, child } => {
                let (ps, cs) = match (self.nodes.get(parent), self.nodes.get(child)) {
                    (
                        Some(Node::Internal {
                            split: ps,
                            left,
                            right,
                        }),
                        Some(Node::Internal { split: cs, .. }),
                    ) if *left == child || *right == child => (*ps, *cs),
                    _ => return Err(Infeasible::NotParentChild(parent, child)),
                };
                let mut out = self.clone();
                set_split(&mut out.nodes[parent], cs);
                set_split(&mut out.nodes[child], ps);
                out.validate(domain)
                    .map_err(|_| Infeasible::BreaksDescendant)?;
                Ok(out)
            }
        }
    }

    /// Subtree rooted at `id` as an independent tree.
    pub fn subtree_at(&self, id: NodeId) -> Option<TreeStructure> {
        (id < self.nodes.len()).then(|| self.subtree(id))
    }
}

impl fmt::Display for TreeStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_key())
    }
}

fn shift(n: Node, by: usize) -> Node {
    match n {
        Node::Leaf => Node::Leaf,
        Node::Internal { split, left, right } => Node::Internal {
            split,
            left: left + by,
            right: right + by,
        },
    }
}

fn set_split(n: &mut Node, to: Split) {
    if let Node::Internal { split, .. } = n {
        *split = to;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
    Swap,
    SelfLoop,
}

impl MoveKind {
    pub const PROPOSABLE: [MoveKind; 4] = [
        MoveKind::Grow,
        MoveKind::Prune,
        MoveKind::Change,
        MoveKind::Swap,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MoveKind::Grow => "grow",
            MoveKind::Prune => "prune",
            MoveKind::Change => "change",
            MoveKind::Swap => "swap",
            MoveKind::SelfLoop => "self_loop",
        }
    }
}

impl fmt::Display for MoveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MoveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "grow" => MoveKind::Grow,
            "prune" => MoveKind::Prune,
            "change" => MoveKind::Change,
            "swap" => MoveKind::Swap,
            "self_loop" => MoveKind::SelfLoop,
            other => return Err(Error::InvalidInput(format!("unknown move `{other}`"))),
        })
    }
}

/// A tree move with its targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Move {
    Grow { leaf: NodeId, split: Split },
    Prune { node: NodeId },
    Change { node: NodeId, split: Split },
    Swap { parent: NodeId, child: NodeId },
    SelfLoop,
}

impl Move {
    pub fn kind(&self) -> MoveKind {
        match self {
            Move::Grow { .. } => MoveKind::Grow,
            Move::Prune { .. } => MoveKind::Prune,
            Move::Change { .. } => MoveKind::Change,
            Move::Swap { .. } => MoveKind::Swap,
            Move::SelfLoop => MoveKind::SelfLoop,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Infeasible {
    #[error("self-loop")]
    SelfLoop,
    #[error("node {0} is not a leaf")]
    NotALeaf(NodeId),
    #[error("split {0} is not admissible in the leaf's cell")]
    InadmissibleSplit(Split),
    #[error("node {0} does not have two leaf children")]
    NotPrunable(NodeId),
    #[error("node {0} is not internal")]
    NotInternal(NodeId),
    #[error("nodes ({0}, {1}) are not an internal parent-child pair")]
    NotParentChild(NodeId, NodeId),
    #[error("relabeling leaves a descendant split with an empty child")]
    BreaksDescendant,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d22() -> FeatureDomain {
        FeatureDomain::uniform(2, 2).unwrap()
    }

    #[test]
    fn trivial_tree_is_constant() {
        let t = TreeStructure::leaf();
        let dom = d22();
        for x in dom.grid_points() {
            assert_eq!(t.evaluate(&[5.0], &dom, &x).unwrap(), 5.0);
        }
    }

    #[test]
    fn stump_routes_left_and_right() {
        let t = TreeStructure::stump(Split::new(0, 1));
        let dom = d22();
        assert_eq!(t.evaluate(&[2.0, 3.0], &dom, &[1, 2]).unwrap(), 2.0);
        assert_eq!(t.evaluate(&[2.0, 3.0], &dom, &[2, 1]).unwrap(), 3.0);
    }

    #[test]
    fn depth_two_matches_partition_table() {
        // root (v=1, t=2); right child (v=2, t=1)
        let dom = FeatureDomain::uniform(3, 2).unwrap();
        let t = TreeStructure::join(
            Split::new(0, 2),
            TreeStructure::leaf(),
            TreeStructure::stump(Split::new(1, 1)),
        );
        let theta = [10.0, 20.0, 30.0];
        // Independent table: x1 <= 2 -> a; x1 = 3, x2 = 1 -> b; x1 = 3, x2 > 1 -> c.
        for x1 in 1..=3u32 {
            for x2 in 1..=3u32 {
                let expected = if x1 <= 2 {
                    10.0
                } else if x2 == 1 {
                    20.0
                } else {
                    30.0
                };
                assert_eq!(t.evaluate(&theta, &dom, &[x1, x2]).unwrap(), expected);
            }
        }
    }

    #[test]
    fn out_of_domain_point_is_rejected() {
        let t = TreeStructure::leaf();
        let dom = d22();
        assert!(matches!(
            t.leaf_index(&dom, &[3, 1]),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(t.leaf_index(&dom, &[0, 1]).is_err());
        assert!(t.leaf_index(&dom, &[1]).is_err());
        assert!(t.evaluate(&[1.0, 2.0], &dom, &[1, 1]).is_err());
    }

    #[test]
    fn valid_splits_on_small_domains() {
        let t = TreeStructure::leaf();
        assert_eq!(
            t.valid_splits(0, &d22()),
            vec![Split::new(0, 1), Split::new(1, 1)]
        );
        let d31 = FeatureDomain::uniform(3, 1).unwrap();
        assert_eq!(
            t.valid_splits(0, &d31),
            vec![Split::new(0, 1), Split::new(0, 2)]
        );

        // both leaves of a 2x1 split are single points
        let d21 = FeatureDomain::uniform(2, 1).unwrap();
        let s = TreeStructure::stump(Split::new(0, 1));
        assert!(s.valid_splits(1, &d21).is_empty());
        assert!(s.valid_splits(2, &d21).is_empty());
    }

    #[test]
    fn grow_and_prune_are_inverse() {
        let dom = d22();
        let t0 = TreeStructure::leaf();
        let grown = t0
            .apply_move(
                &Move::Grow {
                    leaf: 0,
                    split: Split::new(0, 1),
                },
                &dom,
            )
            .unwrap();
        assert_eq!(grown, TreeStructure::stump(Split::new(0, 1)));
        assert_eq!(grown.canonical_key(), "N(1,1)[L,L]");
        let back = grown.apply_move(&Move::Prune { node: 0 }, &dom).unwrap();
        assert_eq!(back.canonical_key(), t0.canonical_key());
        // input untouched
        assert_eq!(t0.canonical_key(), "L");
    }

    #[test]
    fn swap_exchanges_parent_and_child_labels() {
        let dom = d22();
        let t = TreeStructure::join(
            Split::new(0, 1),
            TreeStructure::stump(Split::new(1, 1)),
            TreeStructure::leaf(),
        );
        let s = t
            .apply_move(
                &Move::Swap {
                    parent: 0,
                    child: 1,
                },
                &dom,
            )
            .unwrap();
        assert_eq!(s.split_at(0), Some(Split::new(1, 1)));
        assert_eq!(s.split_at(1), Some(Split::new(0, 1)));
        s.validate(&dom).unwrap();
    }

    #[test]
    fn infeasible_moves_are_reported() {
        let dom = FeatureDomain::uniform(3, 1).unwrap();
        // root x<=2, left child x<=1: changing the root to x<=1 empties the child's range
        let t = TreeStructure::join(
            Split::new(0, 2),
            TreeStructure::stump(Split::new(0, 1)),
            TreeStructure::leaf(),
        );
        assert_eq!(
            t.apply_move(
                &Move::Change {
                    node: 0,
                    split: Split::new(0, 1)
                },
                &dom
            ),
            Err(Infeasible::BreaksDescendant)
        );
        assert_eq!(
            t.apply_move(
                &Move::Swap {
                    parent: 0,
                    child: 1
                },
                &dom
            ),
            Err(Infeasible::BreaksDescendant)
        );
        assert_eq!(
            TreeStructure::leaf().apply_move(&Move::Prune { node: 0 }, &dom),
            Err(Infeasible::NotPrunable(0))
        );
        assert_eq!(
            t.apply_move(
                &Move::Grow {
                    leaf: 0,
                    split: Split::new(0, 1)
                },
                &dom
            ),
            Err(Infeasible::NotALeaf(0))
        );
        assert_eq!(
            t.apply_move(
                &Move::Grow {
                    leaf: 2,
                    split: Split::new(0, 1)
                },
                &dom
            ),
            Err(Infeasible::InadmissibleSplit(Split::new(0, 1)))
        );
    }

    #[test]
    fn grow_keeps_preorder_ids() {
        let dom = FeatureDomain::uniform(4, 2).unwrap();
        let t = TreeStructure::stump(Split::new(0, 2));
        let g = t
            .apply_move(
                &Move::Grow {
                    leaf: 1,
                    split: Split::new(1, 3),
                },
                &dom,
            )
            .unwrap();
        assert_eq!(g.split_at(1), Some(Split::new(1, 3)));
        assert_eq!(g.leaves(), vec![2, 3, 4]);
        assert_eq!(g.prunable_nodes(), vec![1]);
        assert_eq!(g.swap_pairs(), vec![(0, 1)]);
        assert_eq!(g.depths(), vec![0, 1, 2, 2, 1]);
        assert_eq!(g.canonical_key(), "N(1,2)[N(2,3)[L,L],L]");
    }

    #[test]
    fn grid_index_round_trips() {
        let dom = FeatureDomain::new(vec![2, 3, 4]).unwrap();
        for (i, x) in dom.grid_points().enumerate() {
            assert_eq!(dom.grid_index(&x), i);
        }
        assert_eq!(dom.grid_point(0), vec![1, 1, 1]);
        assert_eq!(dom.grid_point(1), vec![1, 1, 2]);
        assert_eq!("2x3x4".parse::<FeatureDomain>().unwrap(), dom);
        assert!("2x0".parse::<FeatureDomain>().is_err());
    }
}
