//! Hierarchical box partitions of low-dimensional point sets.
//!
//! Each tree level is produced by `ceil(log2 r)` rounds of cyclic median
//! splits, so an internal node has up to `2^ceil(log2 r)` children whose
//! cells are axis-aligned boxes. Nodes live in an arena and are addressed by
//! `usize` ids; id 0 is the root.

use serde::{Deserialize, Serialize};

use crate::linalg::{dot, norm};
use crate::polytope::box_hull_distance;

/// Tolerance for deciding that a cell lies on one side of a hyperplane.
pub const CROSSING_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCell {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxCell {
    pub fn bounding<P: AsRef<[f64]>>(points: &[P], dim: usize) -> Self {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in points {
            for (i, x) in p.as_ref().iter().enumerate() {
                lo[i] = lo[i].min(*x);
                hi[i] = hi[i].max(*x);
            }
        }
        if points.is_empty() {
            lo.fill(0.0);
            hi.fill(0.0);
        }
        BoxCell { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (a, b))| *x >= a - tol && *x <= b + tol)
    }

    pub fn contains_box(&self, other: &BoxCell, tol: f64) -> bool {
        (0..self.dim()).all(|i| other.lo[i] >= self.lo[i] - tol && other.hi[i] <= self.hi[i] + tol)
    }

    /// Whether the interiors overlap (touching faces do not count).
    pub fn interiors_overlap(&self, other: &BoxCell) -> bool {
        (0..self.dim()).all(|i| self.lo[i] < other.hi[i] && other.lo[i] < self.hi[i])
    }

    pub fn corners(&self) -> Vec<Vec<f64>> {
        let dim = self.dim();
        (0..1usize << dim)
            .map(|mask| {
                (0..dim)
                    .map(|i| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] })
                    .collect()
            })
            .collect()
    }

    /// Range of `<dir, x>` over the box.
    pub fn support(&self, dir: &[f64]) -> (f64, f64) {
        let mut center = 0.0;
        let mut radius = 0.0;
        for i in 0..self.dim() {
            center += dir[i] * 0.5 * (self.lo[i] + self.hi[i]);
            radius += dir[i].abs() * 0.5 * (self.hi[i] - self.lo[i]);
        }
        (center - radius, center + radius)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Hyperplane {
    /// Plane `<normal, x> = offset`; the normal is rescaled to unit length.
    pub fn new(normal: &[f64], offset: f64) -> Self {
        let n = norm(normal);
        assert!(n > 0.0, "hyperplane normal must be nonzero");
        Hyperplane {
            normal: normal.iter().map(|x| x / n).collect(),
            offset: offset / n,
        }
    }

    pub fn signed_distance(&self, p: &[f64]) -> f64 {
        dot(&self.normal, p) - self.offset
    }

    /// -1 or +1 when the box lies strictly on one side, 0 when it lies in
    /// the plane, `None` when the plane crosses it.
    pub fn side_of(&self, cell: &BoxCell) -> Option<i8> {
        let (a, b) = cell.support(&self.normal);
        let (a, b) = (a - self.offset, b - self.offset);
        if a < -CROSSING_TOL && b > CROSSING_TOL {
            None
        } else if b <= CROSSING_TOL && a < -CROSSING_TOL {
            Some(-1)
        } else if a >= -CROSSING_TOL && b > CROSSING_TOL {
            Some(1)
        } else {
            Some(0)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionNode {
    pub cell: BoxCell,
    pub points: Vec<usize>,
    pub children: Vec<usize>,
    pub level: usize,
}

impl PartitionNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionTree {
    dim: usize,
    r: usize,
    nodes: Vec<PartitionNode>,
}

/// Builds the tree over `points` (all of one dimension) with branching
/// parameter `r >= 2`. Leaves hold at most `2r` points.
pub fn build_tree<P: AsRef<[f64]>>(points: &[P], r: usize) -> PartitionTree {
    PartitionTree::build(points, r)
}

impl PartitionTree {
    pub fn build<P: AsRef<[f64]>>(points: &[P], r: usize) -> Self {
        assert!(r >= 2, "branching parameter must be at least 2");
        let dim = points.first().map_or(0, |p| p.as_ref().len());
        let pts: Vec<&[f64]> = points.iter().map(|p| p.as_ref()).collect();
        let mut tree = PartitionTree {
            dim,
            r,
            nodes: Vec::new(),
        };
        let cell = BoxCell::bounding(points, dim);
        tree.build_node(&pts, (0..points.len()).collect(), cell, 0);
        tree
    }

    fn rounds_per_level(&self) -> usize {
        (self.r as f64).log2().ceil() as usize
    }

    fn build_node(&mut self, pts: &[&[f64]], idx: Vec<usize>, cell: BoxCell, level: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(PartitionNode {
            cell: cell.clone(),
            points: idx.clone(),
            children: Vec::new(),
            level,
        });
        if idx.len() <= 2 * self.r || self.dim == 0 {
            return id;
        }
        let rounds = self.rounds_per_level();
        let mut pieces = vec![(idx, cell)];
        for round in 0..rounds {
            let axis = (level * rounds + round) % self.dim;
            let mut next = Vec::with_capacity(pieces.len() * 2);
            for (mut piece, cell) in pieces {
                if piece.len() < 2 {
                    next.push((piece, cell));
                    continue;
                }
                piece.sort_by(|&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
                let left_len = piece.len().div_ceil(2);
                let split = pts[piece[left_len - 1]][axis];
                let right = piece.split_off(left_len);
                let mut left_cell = cell.clone();
                left_cell.hi[axis] = split;
                let mut right_cell = cell;
                right_cell.lo[axis] = split;
                next.push((piece, left_cell));
                next.push((right, right_cell));
            }
            pieces = next;
        }
        let mut children = Vec::with_capacity(pieces.len());
        for (mut piece, cell) in pieces {
            piece.sort_unstable();
            children.push(self.build_node(pts, piece, cell, level + 1));
        }
        self.nodes[id].children = children;
        id
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn node(&self, id: usize) -> &PartitionNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[PartitionNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of levels (a single leaf has depth 1).
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().map_or(0, |l| l + 1)
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    /// Node ids of a given level.
    pub fn level(&self, level: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].level == level)
            .collect()
    }
}

/// Highest uncrossed nodes with their labels, plus crossed leaves.
#[derive(Clone, Debug, Default)]
pub struct Frontier<L> {
    pub nodes: Vec<(usize, L)>,
    pub residual: Vec<usize>,
}

/// Descends from the root into every node crossed by some plane. Nodes
/// crossed by none are reported with their sign vector; crossed leaves are
/// reported as residual.
pub fn uncrossed_frontier(tree: &PartitionTree, planes: &[Hyperplane]) -> Frontier<Vec<i8>> {
    let mut out = Frontier {
        nodes: Vec::new(),
        residual: Vec::new(),
    };
    if tree.is_empty() {
        return out;
    }
    let mut stack = vec![tree.root()];
    while let Some(id) = stack.pop() {
        let node = tree.node(id);
        let sides: Option<Vec<i8>> = planes.iter().map(|h| h.side_of(&node.cell)).collect();
        match sides {
            Some(label) => out.nodes.push((id, label)),
            None if node.is_leaf() => out.residual.push(id),
            None => stack.extend(node.children.iter().rev()),
        }
    }
    out
}

/// Number of leaves crossed by a single plane.
pub fn crossed_leaves(tree: &PartitionTree, plane: &Hyperplane) -> usize {
    uncrossed_frontier(tree, std::slice::from_ref(plane)).residual.len()
}

/// A rotated lattice of parallel hyperplane families: along each unit axis
/// `axes[i]` the planes `<axes[i], x - origin> = j * widths[i]` for all
/// integers `j`. Infinite width means no planes along that axis.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub origin: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
    pub widths: Vec<f64>,
}

impl Lattice {
    /// Axis-wise support intervals of a box relative to the origin.
    fn intervals(&self, cell: &BoxCell) -> Vec<(f64, f64)> {
        self.axes
            .iter()
            .map(|a| {
                let (lo, hi) = cell.support(a);
                let o = dot(a, &self.origin);
                (lo - o, hi - o)
            })
            .collect()
    }

    /// Cell label of a point, as lattice indices.
    pub fn label_of(&self, p: &[f64]) -> Vec<i64> {
        self.axes
            .iter()
            .zip(&self.widths)
            .map(|(a, w)| {
                if w.is_finite() {
                    ((dot(a, p) - dot(a, &self.origin)) / w).floor() as i64
                } else {
                    0
                }
            })
            .collect()
    }
}

/// Same traversal as [`uncrossed_frontier`] against the planes of a
/// lattice, without listing them. Nodes whose support misses `window`
/// (per-axis intervals relative to the origin) are dropped entirely.
pub fn lattice_frontier(tree: &PartitionTree, lattice: &Lattice, window: Option<&[(f64, f64)]>) -> Frontier<Vec<i64>> {
    let mut out = Frontier {
        nodes: Vec::new(),
        residual: Vec::new(),
    };
    if tree.is_empty() {
        return out;
    }
    let mut stack = vec![tree.root()];
    while let Some(id) = stack.pop() {
        let node = tree.node(id);
        let iv = lattice.intervals(&node.cell);
        if let Some(win) = window {
            if iv.iter().zip(win).any(|((a, b), (l, h))| *b < *l || *a > *h) {
                continue;
            }
        }
        let mut label = Vec::with_capacity(iv.len());
        let mut crossed = false;
        for ((a, b), w) in iv.iter().zip(&lattice.widths) {
            if !w.is_finite() {
                label.push(0);
                continue;
            }
            let (ja, jb) = ((a / w).floor(), (b / w).floor());
            if ja != jb {
                crossed = true;
                break;
            }
            label.push(ja as i64);
        }
        if !crossed {
            out.nodes.push((id, label));
        } else if node.is_leaf() {
            out.residual.push(id);
        } else {
            stack.extend(node.children.iter().rev());
        }
    }
    out
}

/// Leaves whose cell lies within Euclidean distance `alpha` of the convex
/// hull of `vertices`. Subtrees are pruned when their cell is farther away,
/// which is exact because child cells are contained in their parent's.
pub fn cells_near_polytope(tree: &PartitionTree, vertices: &[Vec<f64>], alpha: f64) -> Vec<usize> {
    let mut out = Vec::new();
    if tree.is_empty() || vertices.is_empty() {
        return out;
    }
    let mut stack = vec![tree.root()];
    while let Some(id) = stack.pop() {
        let node = tree.node(id);
        if alpha.is_finite() && box_hull_distance(&node.cell.lo, &node.cell.hi, vertices) > alpha {
            continue;
        }
        if node.is_leaf() {
            out.push(id);
        } else {
            stack.extend(node.children.iter().rev());
        }
    }
    out.sort_unstable();
    out
}
