//! Axis-aligned binary regression trees and tree ensembles.
//!
//! A tree partitions the unit cube of (standardized covariates, latent
//! coordinate). Internal nodes carry a split axis and cutpoint; "< cutpoint"
//! goes left, ties go right. Leaves carry one scalar. Nodes live in a flat
//! arena indexed by `u32`, with the root at index 0.
//!
//! Fixing the covariates of one observation and sweeping the latent
//! coordinate u across [0, 1) turns a tree (and a sum of trees) into a step
//! function of u; that view drives both the latent Gibbs pass and the exact
//! mixture representation of the predictive density.

use std::fmt;

/// Which coordinate a split examines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SplitAxis {
    /// A covariate column (standardized to [0, 1]).
    Covariate(u32),
    /// The auxiliary latent coordinate u in [0, 1).
    Latent,
}

/// A decision rule: `point[axis] < cutpoint` goes left, otherwise right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRule {
    pub axis: SplitAxis,
    pub cutpoint: f64,
}

/// Arena node. Children are arena indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Internal { rule: SplitRule, left: u32, right: u32 },
    Leaf { value: f64 },
}

/// One evaluation point: covariate row plus latent coordinate.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub x: &'a [f64],
    pub u: f64,
}

impl<'a> Point<'a> {
    pub fn coord(&self, axis: SplitAxis) -> f64 {
        match axis {
            SplitAxis::Covariate(j) => self.x[j as usize],
            SplitAxis::Latent => self.u,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeError {
    /// A covariate index in a split exceeds the point's dimension.
    AxisOutOfRange { axis: u32, dim: usize },
    /// Child index outside the arena (corrupt tree).
    BadChildIndex(u32),
}

impl fmt::Display for TreeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeError::AxisOutOfRange { axis, dim } => {
                write!(f, "split axis {} out of range for {}-dim point", axis, dim)
            }
            TreeError::BadChildIndex(i) => write!(f, "child index {} out of arena", i),
        }
    }
}

impl std::error::Error for TreeError {}

/// A single regression tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// The one-node tree holding `value`.
    pub fn leaf(value: f64) -> Self {
        Tree { nodes: vec![Node::Leaf { value }] }
    }

    pub fn root(&self) -> u32 {
        0
    }

    /// Arena index of the leaf containing `point`.
    pub fn leaf_index(&self, point: Point<'_>) -> Result<u32, TreeError> {
        let mut id = 0u32;
        loop {
            match self.nodes.get(id as usize) {
                None => return Err(TreeError::BadChildIndex(id)),
                Some(Node::Leaf { .. }) => return Ok(id),
                Some(Node::Internal { rule, left, right }) => {
                    if let SplitAxis::Covariate(j) = rule.axis {
                        if j as usize >= point.x.len() {
                            return Err(TreeError::AxisOutOfRange {
                                axis: j,
                                dim: point.x.len(),
                            });
                        }
                    }
                    id = if point.coord(rule.axis) < rule.cutpoint { *left } else { *right };
                }
            }
        }
    }

    /// Leaf value at `point`.
    pub fn evaluate(&self, point: Point<'_>) -> Result<f64, TreeError> {
        let id = self.leaf_index(point)?;
        match self.nodes[id as usize] {
            Node::Leaf { value } => Ok(value),
            Node::Internal { .. } => unreachable!("leaf_index returned an internal node"),
        }
    }

    pub fn value_at(&self, id: u32) -> f64 {
        match self.nodes[id as usize] {
            Node::Leaf { value } => value,
            Node::Internal { .. } => panic!("node {} is not a leaf", id),
        }
    }

    pub fn is_leaf(&self, id: u32) -> bool {
        matches!(self.nodes[id as usize], Node::Leaf { .. })
    }

    /// Arena indices of all leaves, in arena order.
    pub fn leaf_ids(&self) -> Vec<u32> {
        (0..self.nodes.len() as u32).filter(|&i| self.is_leaf(i)).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Internal nodes whose children are both leaves ("no grandchildren").
    pub fn nog_ids(&self) -> Vec<u32> {
        (0..self.nodes.len() as u32)
            .filter(|&i| match self.nodes[i as usize] {
                Node::Internal { left, right, .. } => {
                    self.is_leaf(left) && self.is_leaf(right)
                }
                Node::Leaf { .. } => false,
            })
            .collect()
    }

    /// Depth of every node (root = 0), walked top-down.
    pub fn depths(&self) -> Vec<u32> {
        let mut d = vec![0u32; self.nodes.len()];
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            if let Node::Internal { left, right, .. } = self.nodes[id as usize] {
                d[left as usize] = d[id as usize] + 1;
                d[right as usize] = d[id as usize] + 1;
                stack.push(left);
                stack.push(right);
            }
        }
        d
    }

    pub fn max_depth(&self) -> u32 {
        self.depths().into_iter().max().unwrap_or(0)
    }

    /// Parent of every node (root maps to itself).
    pub fn parents(&self) -> Vec<u32> {
        let mut p = vec![0u32; self.nodes.len()];
        for (id, n) in self.nodes.iter().enumerate() {
            if let Node::Internal { left, right, .. } = n {
                p[*left as usize] = id as u32;
                p[*right as usize] = id as u32;
            }
        }
        p
    }

    /// The axis-aligned cell of a node, walked from the root. Covariate
    /// cells start at [0, 1] and the latent interval at [0, 1).
    pub fn cell_of(&self, target: u32, dim: usize) -> Cell {
        let mut cell = Cell::unit(dim);
        let mut id = 0u32;
        'walk: while id != target {
            match self.nodes[id as usize] {
                Node::Leaf { .. } => break 'walk, // target unreachable; caller bug
                Node::Internal { rule, left, right } => {
                    // does target sit under left or right?
                    if self.subtree_contains(left, target) {
                        cell.clip_left(rule);
                        id = left;
                    } else {
                        debug_assert!(self.subtree_contains(right, target));
                        cell.clip_right(rule);
                        id = right;
                    }
                }
            }
        }
        cell
    }

    fn subtree_contains(&self, sub: u32, target: u32) -> bool {
        if sub == target {
            return true;
        }
        match self.nodes[sub as usize] {
            Node::Leaf { .. } => false,
            Node::Internal { left, right, .. } => {
                self.subtree_contains(left, target) || self.subtree_contains(right, target)
            }
        }
    }

    /// Restrict the tree to fixed covariates and view it as a step function
    /// of u on [0, 1): strictly increasing cutpoints interior to (0, 1) and
    /// the leaf arena index on each of the cuts.len()+1 intervals.
    pub fn u_steps(&self, x: &[f64]) -> (Vec<f64>, Vec<u32>) {
        let mut cuts = Vec::new();
        let mut leaves = Vec::new();
        self.u_steps_into(x, &mut cuts, &mut leaves);
        (cuts, leaves)
    }

    /// [`Self::u_steps`] appending into caller-owned buffers, for hot loops
    /// that merge the step functions of many trees without reallocating.
    pub fn u_steps_into(&self, x: &[f64], cuts: &mut Vec<f64>, leaves: &mut Vec<u32>) {
        self.u_steps_rec(0, x, 0.0, 1.0, cuts, leaves);
    }

    fn u_steps_rec(
        &self,
        id: u32,
        x: &[f64],
        lo: f64,
        hi: f64,
        cuts: &mut Vec<f64>,
        leaves: &mut Vec<u32>,
    ) {
        match self.nodes[id as usize] {
            Node::Leaf { .. } => leaves.push(id),
            Node::Internal { rule, left, right } => match rule.axis {
                SplitAxis::Covariate(j) => {
                    let next = if x[j as usize] < rule.cutpoint { left } else { right };
                    self.u_steps_rec(next, x, lo, hi, cuts, leaves);
                }
                SplitAxis::Latent => {
                    // cutpoints are drawn strictly inside the node interval,
                    // so lo < c < hi holds for well-formed trees
                    self.u_steps_rec(left, x, lo, rule.cutpoint, cuts, leaves);
                    cuts.push(rule.cutpoint);
                    self.u_steps_rec(right, x, rule.cutpoint, hi, cuts, leaves);
                }
            },
        }
    }
}

/// Hyper-rectangle: per-covariate [lo, hi] plus the latent interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub u_lo: f64,
    pub u_hi: f64,
}

impl Cell {
    pub fn unit(dim: usize) -> Self {
        Cell { x_lo: vec![0.0; dim], x_hi: vec![1.0; dim], u_lo: 0.0, u_hi: 1.0 }
    }

    /// Shrink to the left side of a rule.
    pub fn clip_left(&mut self, rule: SplitRule) {
        match rule.axis {
            SplitAxis::Covariate(j) => self.x_hi[j as usize] = rule.cutpoint,
            SplitAxis::Latent => self.u_hi = rule.cutpoint,
        }
    }

    /// Shrink to the right side of a rule.
    pub fn clip_right(&mut self, rule: SplitRule) {
        match rule.axis {
            SplitAxis::Covariate(j) => self.x_lo[j as usize] = rule.cutpoint,
            SplitAxis::Latent => self.u_lo = rule.cutpoint,
        }
    }
}

/// A sum of trees.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ensemble {
    pub trees: Vec<Tree>,
}

impl Ensemble {
    /// `count` single-leaf trees holding `value`.
    pub fn constant(count: usize, value: f64) -> Self {
        Ensemble { trees: (0..count).map(|_| Tree::leaf(value)).collect() }
    }

    /// Sum of per-tree leaf values at `point`.
    pub fn evaluate(&self, point: Point<'_>) -> Result<f64, TreeError> {
        let mut s = 0.0;
        for t in &self.trees {
            s += t.evaluate(point)?;
        }
        Ok(s)
    }

    /// Number of trees in which the two points share a leaf.
    pub fn shared_leaf_count(&self, a: Point<'_>, b: Point<'_>) -> Result<usize, TreeError> {
        let mut c = 0;
        for t in &self.trees {
            if t.leaf_index(a)? == t.leaf_index(b)? {
                c += 1;
            }
        }
        Ok(c)
    }
}

/// Union of the latent-axis cutpoints of both ensembles along the u line at
/// fixed covariates, bracketed by 0 and 1, sorted, deduplicated. These are
/// exactly the points where the fitted conditional density's mixture
/// components change.
pub fn u_breakpoints(mean: &Ensemble, var: &Ensemble, x: &[f64]) -> Vec<f64> {
    let mut pts = vec![0.0, 1.0];
    for t in mean.trees.iter().chain(var.trees.iter()) {
        let (cuts, _) = t.u_steps(x);
        pts.extend(cuts);
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    pts
}

/// Per-leaf occupancy: (leaf arena index, number of points it contains),
/// in arena order.
pub fn leaf_occupancy(
    tree: &Tree,
    xs: &[Vec<f64>],
    us: &[f64],
) -> Result<Vec<(u32, usize)>, TreeError> {
    let mut counts = vec![0usize; tree.nodes.len()];
    for (x, &u) in xs.iter().zip(us.iter()) {
        let id = tree.leaf_index(Point { x, u })?;
        counts[id as usize] += 1;
    }
    Ok(tree
        .leaf_ids()
        .into_iter()
        .map(|id| (id, counts[id as usize]))
        .collect())
}
