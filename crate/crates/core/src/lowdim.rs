//! Approximate k-flat near-neighbor reporting in constant dimension.
//!
//! A [`SearchStructure`] over points in R^dim keeps a partition tree of the
//! projection onto the first k+1 coordinates (the subspace E). When
//! dim > k+1, every internal node also owns a few slab structures: a thin
//! slab in E that fully contains several child cells, with a recursive
//! structure over the points of those cells projected onto the hyperplane
//! through the slab's median plane and orthogonal to E.
//!
//! Queries return a superset of the points within `alpha` of the query
//! that contains nothing farther than `kappa(dim, k) * alpha`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ann::Neighbor;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{binomial, dot, for_each_subset, orthonormalize, Flat};
use crate::partition::{BoxCell, PartitionTree};
use crate::polytope::{box_hull_distance, QueryPolytope};

pub const DEFAULT_BRANCHING: usize = 16;

/// Above this many vertex subsets the slab search samples instead.
pub const SLAB_SUBSET_CAP: usize = 20_000;

/// Relative widening of the query radius.
const BOUNDARY_SLACK: f64 = 1e-9;

/// Approximation factor of [`SearchStructure::query_near`] in dimension
/// `dim` for k-flats.
pub fn kappa(dim: usize, k: usize) -> f64 {
    assert!(dim > k, "dimension must exceed the flat dimension");
    (4 * k + 3) as f64 * (dim - k - 1) as f64 + ((k + 1) as f64).sqrt()
}

/// Slabs per node: floor(r^(1/3)).
fn slabs_per_node(r: usize) -> usize {
    ((r as f64).cbrt() + 1e-9).floor() as usize
}

/// Cells per slab: ceil(r^(2/3)).
fn cells_per_slab(r: usize) -> usize {
    ((r as f64).powf(2.0 / 3.0) - 1e-9).ceil() as usize
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlabStructure {
    /// Unit normal of the median plane inside E.
    pub normal: Vec<f64>,
    pub offset: f64,
    pub width: f64,
    /// Positions (in the node's child list) of the cells inside the slab.
    pub cells: Vec<usize>,
    /// Orthonormal directions of E orthogonal to `normal`.
    pub frame: Vec<Vec<f64>>,
    pub inner: SearchStructure,
}

/// Coordinates on the hyperplane through a median plane orthogonal to E:
/// the in-E frame followed by the coordinates outside E.
fn project_onto_slab(frame: &[Vec<f64>], x: &[f64], k: usize) -> Vec<f64> {
    let mut y: Vec<f64> = frame.iter().map(|u| dot(u, &x[..k + 1])).collect();
    y.extend_from_slice(&x[k + 1..]);
    y
}

impl SlabStructure {
    /// The slab projection as a (dim-1) x dim row matrix.
    fn projection_rows(&self, k: usize, dim: usize) -> Vec<Vec<f64>> {
        let mut rows: Vec<Vec<f64>> = self
            .frame
            .iter()
            .map(|u| {
                let mut r = u.clone();
                r.resize(dim, 0.0);
                r
            })
            .collect();
        for i in k + 1..dim {
            let mut r = vec![0.0; dim];
            r[i] = 1.0;
            rows.push(r);
        }
        rows
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Body {
    List,
    Tree {
        tree: PartitionTree,
        /// Per node, slabs in construction order (non-decreasing widths).
        slabs: Vec<Vec<SlabStructure>>,
        /// Per node and child position, the slab holding that child.
        slab_of: Vec<Vec<Option<u32>>>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchStructure {
    dim: usize,
    k: usize,
    r: usize,
    ids: Vec<usize>,
    points: Vec<Vec<f64>>,
    body: Body,
}

/// Counters collected while answering a query.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryStats {
    pub nodes_visited: usize,
    pub slabs_queried: usize,
    /// Largest `width / alpha` among queried slabs.
    pub max_slab_ratio: f64,
    pub points_checked: usize,
}

pub fn build_search_structure<P: AsRef<[f64]>>(points: &[P], k: usize) -> Result<SearchStructure> {
    SearchStructure::build(points, k, DEFAULT_BRANCHING, 0)
}

impl SearchStructure {
    /// Builds over `points` (all in R^dim with dim > k). `seed` drives the
    /// subset sampling of large slab searches.
    pub fn build<P: AsRef<[f64]>>(points: &[P], k: usize, r: usize, seed: u64) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyInput)?;
        let dim = first.as_ref().len();
        if dim <= k {
            return Err(Error::InvalidParams(format!(
                "points of dimension {dim} cannot host {k}-flat queries"
            )));
        }
        if r < 2 {
            return Err(Error::InvalidParams("branching parameter must be at least 2".into()));
        }
        let mut pts = Vec::with_capacity(points.len());
        for p in points {
            check_dim(dim, p.as_ref().len())?;
            pts.push(p.as_ref().to_vec());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::build_level(pts, (0..points.len()).collect(), k, r, &mut rng))
    }

    fn build_level(points: Vec<Vec<f64>>, ids: Vec<usize>, k: usize, r: usize, rng: &mut ChaCha8Rng) -> Self {
        let dim = points[0].len();
        if points.len() < 2 * r {
            return SearchStructure {
                dim,
                k,
                r,
                ids,
                points,
                body: Body::List,
            };
        }
        let projected: Vec<&[f64]> = points.iter().map(|p| &p[..k + 1]).collect();
        let tree = PartitionTree::build(&projected, r);
        let mut slabs = vec![Vec::new(); tree.len()];
        let mut slab_of: Vec<Vec<Option<u32>>> = tree.nodes().iter().map(|n| vec![None; n.children.len()]).collect();
        if dim > k + 1 {
            for id in 0..tree.len() {
                let node = tree.node(id);
                if node.is_leaf() {
                    continue;
                }
                let cells: Vec<&BoxCell> = node.children.iter().map(|&c| &tree.node(c).cell).collect();
                let mut remaining: Vec<usize> = (0..cells.len()).collect();
                for j in 0..slabs_per_node(r) {
                    let Some(found) = best_slab(&cells, &remaining, k, cells_per_slab(r), rng) else {
                        break;
                    };
                    remaining.retain(|c| !found.cells.contains(c));
                    for &c in &found.cells {
                        slab_of[id][c] = Some(j as u32);
                    }
                    let frame = complement_frame(&found.normal);
                    let mut sub_ids = Vec::new();
                    let mut sub_pts = Vec::new();
                    for &c in &found.cells {
                        for &i in &tree.node(node.children[c]).points {
                            sub_ids.push(ids[i]);
                            sub_pts.push(project_onto_slab(&frame, &points[i], k));
                        }
                    }
                    slabs[id].push(SlabStructure {
                        normal: found.normal,
                        offset: found.offset,
                        width: found.width,
                        cells: found.cells,
                        frame,
                        inner: Self::build_level(sub_pts, sub_ids, k, r, rng),
                    });
                }
            }
        }
        SearchStructure {
            dim,
            k,
            r,
            ids,
            points,
            body: Body::Tree { tree, slabs, slab_of },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn tree(&self) -> Option<&PartitionTree> {
        match &self.body {
            Body::List => None,
            Body::Tree { tree, .. } => Some(tree),
        }
    }

    /// Slab structures owned by a tree node.
    pub fn slabs(&self, node: usize) -> &[SlabStructure] {
        match &self.body {
            Body::List => &[],
            Body::Tree { slabs, .. } => &slabs[node],
        }
    }

    /// All slab structures at this level, with their node ids.
    pub fn all_slabs(&self) -> Vec<(usize, &SlabStructure)> {
        match &self.body {
            Body::List => Vec::new(),
            Body::Tree { slabs, .. } => slabs
                .iter()
                .enumerate()
                .flat_map(|(id, s)| s.iter().map(move |x| (id, x)))
                .collect(),
        }
    }

    /// Total number of stored point copies across all recursion levels.
    pub fn total_slots(&self) -> usize {
        self.points.len()
            + self
                .all_slabs()
                .iter()
                .map(|(_, s)| s.inner.total_slots())
                .sum::<usize>()
    }

    /// Largest number of dimension reductions below this level.
    pub fn recursion_depth(&self) -> usize {
        self.all_slabs()
            .iter()
            .map(|(_, s)| 1 + s.inner.recursion_depth())
            .max()
            .unwrap_or(0)
    }

    /// The query flat clipped to the bounding box of the points extended by
    /// `alpha`, or `None` if nothing is within reach.
    pub fn initial_polytope(&self, flat: &Flat, alpha: f64) -> Result<Option<QueryPolytope>> {
        check_dim(self.dim, flat.dim())?;
        check_dim(self.k, flat.k())?;
        let bbox = BoxCell::bounding(&self.points, self.dim);
        Ok(QueryPolytope::from_flat_in_box(flat, &bbox.lo, &bbox.hi, alpha))
    }

    /// Reports (sorted, global ids) a superset of the points within `alpha`
    /// of `flat` containing no point farther than `kappa * alpha`.
    pub fn query_near(&self, flat: &Flat, alpha: f64) -> Result<Vec<usize>> {
        Ok(self.query_near_stats(flat, alpha)?.0)
    }

    pub fn query_near_stats(&self, flat: &Flat, alpha: f64) -> Result<(Vec<usize>, QueryStats)> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidParams(format!("alpha must be nonnegative, got {alpha}")));
        }
        // Points exactly at distance alpha must survive rounding in the
        // polytope distance.
        let alpha = alpha * (1.0 + BOUNDARY_SLACK) + f64::MIN_POSITIVE;
        let mut stats = QueryStats::default();
        let mut out = Vec::new();
        if let Some(poly) = self.initial_polytope(flat, alpha)? {
            self.query_polytope(&poly, alpha, &mut out, &mut stats);
        }
        out.sort_unstable();
        out.dedup();
        Ok((out, stats))
    }

    /// Same as [`query_near`](Self::query_near) for an already clipped
    /// polytope in this structure's coordinates.
    pub fn query_polytope(&self, poly: &QueryPolytope, alpha: f64, out: &mut Vec<usize>, stats: &mut QueryStats) {
        match &self.body {
            Body::List => self.report_leaf(&(0..self.points.len()).collect::<Vec<_>>(), poly, alpha, out, stats),
            Body::Tree { tree, .. } if self.dim == self.k + 1 => self.report_diamond(tree, poly, alpha, out, stats),
            Body::Tree { tree, slabs, slab_of } => {
                let fhat = poly.leading_vertices(self.k + 1);
                self.query_node(tree, slabs, slab_of, tree.root(), poly, &fhat, alpha, out, stats);
            }
        }
    }

    fn report_leaf(
        &self,
        local: &[usize],
        poly: &QueryPolytope,
        alpha: f64,
        out: &mut Vec<usize>,
        stats: &mut QueryStats,
    ) {
        for &i in local {
            stats.points_checked += 1;
            if poly.distance(&self.points[i]) <= alpha {
                out.push(self.ids[i]);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn query_node(
        &self,
        tree: &PartitionTree,
        slabs: &[Vec<SlabStructure>],
        slab_of: &[Vec<Option<u32>>],
        id: usize,
        poly: &QueryPolytope,
        fhat: &[Vec<f64>],
        alpha: f64,
        out: &mut Vec<usize>,
        stats: &mut QueryStats,
    ) {
        stats.nodes_visited += 1;
        let node = tree.node(id);
        if node.is_leaf() {
            self.report_leaf(&node.points, poly, alpha, out, stats);
            return;
        }
        let limit = (4 * self.k + 2) as f64 * alpha;
        let j_star = slabs[id].iter().take_while(|s| s.width <= limit).count();
        for slab in &slabs[id][..j_star] {
            stats.slabs_queried += 1;
            let ratio = if alpha > 0.0 { slab.width / alpha } else { 0.0 };
            stats.max_slab_ratio = stats.max_slab_ratio.max(ratio);
            let mut normal = slab.normal.clone();
            normal.resize(self.dim, 0.0);
            let Some(trimmed) = poly.intersect_slab(&normal, slab.offset, alpha + slab.width / 2.0) else {
                continue;
            };
            let rows = slab.projection_rows(self.k, self.dim);
            let projected = trimmed.map_affine(&rows, &vec![0.0; self.dim]);
            slab.inner.query_polytope(&projected, alpha, out, stats);
        }
        for (pos, &child) in node.children.iter().enumerate() {
            if matches!(slab_of[id][pos], Some(j) if (j as usize) < j_star) {
                continue;
            }
            let cell = &tree.node(child).cell;
            if box_hull_distance(&cell.lo, &cell.hi, fhat) > alpha {
                continue;
            }
            self.query_node(tree, slabs, slab_of, child, poly, fhat, alpha, out, stats);
        }
    }

    /// Bottom level (dim = k+1): report the points whose l1 distance to the
    /// polytope is at most `sqrt(k+1) * alpha`.
    fn report_diamond(
        &self,
        tree: &PartitionTree,
        poly: &QueryPolytope,
        alpha: f64,
        out: &mut Vec<usize>,
        stats: &mut QueryStats,
    ) {
        let radius = ((self.k + 1) as f64).sqrt() * alpha;
        let inside = |p: &[f64]| -> bool {
            let d2 = poly.distance(p);
            if d2 <= alpha {
                true
            } else if d2 > radius {
                false
            } else {
                poly.l1_distance(p) <= radius
            }
        };
        let mut stack = vec![tree.root()];
        while let Some(id) = stack.pop() {
            stats.nodes_visited += 1;
            let node = tree.node(id);
            if box_hull_distance(&node.cell.lo, &node.cell.hi, poly.vertices()) > radius {
                continue;
            }
            if node.cell.corners().iter().all(|c| inside(c)) {
                out.extend(node.points.iter().map(|&i| self.ids[i]));
                continue;
            }
            if node.is_leaf() {
                for &i in &node.points {
                    stats.points_checked += 1;
                    if inside(&self.points[i]) {
                        out.push(self.ids[i]);
                    }
                }
            } else {
                stack.extend(node.children.iter().rev());
            }
        }
    }

    /// Approximate nearest neighbor of `flat` by sampling a threshold.
    /// Returns the answer and the size of the reported set.
    pub fn query_ann_sampled(&self, flat: &Flat, rng_seed: u64) -> Result<(Neighbor, usize)> {
        check_dim(self.dim, flat.dim())?;
        check_dim(self.k, flat.k())?;
        let n = self.points.len();
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let p = 1.0 / (n as f64).sqrt();
        let mut sample_idx: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < p).collect();
        if sample_idx.is_empty() {
            sample_idx.push(rng.random_range(0..n));
        }
        let mut best = self.neighbor_of(flat, sample_idx[0]);
        for &i in &sample_idx[1..] {
            let cand = self.neighbor_of(flat, i);
            if cand.better_than(&best) {
                best = cand;
            }
        }
        if best.distance == 0.0 {
            return Ok((best, 0));
        }
        let alpha = best.distance / kappa(self.dim, self.k);
        let reported = self.query_near(flat, alpha)?;
        // Top-level ids are positions.
        for &id in &reported {
            let cand = self.neighbor_of(flat, id);
            if cand.better_than(&best) {
                best = cand;
            }
        }
        Ok((best, reported.len()))
    }

    fn neighbor_of(&self, flat: &Flat, local: usize) -> Neighbor {
        Neighbor {
            index: self.ids[local],
            distance: flat.distance(&self.points[local]),
        }
    }
}

struct FoundSlab {
    normal: Vec<f64>,
    offset: f64,
    width: f64,
    cells: Vec<usize>,
}

/// Minimum-width full slab whose median plane passes through k+1 cell
/// corners. `None` when fewer than `need` cells remain or every candidate
/// subset is degenerate.
fn best_slab(
    cells: &[&BoxCell],
    remaining: &[usize],
    k: usize,
    need: usize,
    rng: &mut ChaCha8Rng,
) -> Option<FoundSlab> {
    if remaining.len() < need || need == 0 {
        return None;
    }
    let mut corners: Vec<Vec<f64>> = remaining.iter().flat_map(|&c| cells[c].corners()).collect();
    corners.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    corners.dedup();

    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut extents = vec![0.0; remaining.len()];
    let mut evaluate = |subset: &[usize]| {
        let Some((normal, offset)) = plane_through(subset.iter().map(|&i| &corners[i][..]), k) else {
            return;
        };
        for (e, &c) in extents.iter_mut().zip(remaining) {
            let (a, b) = cells[c].support(&normal);
            *e = (a - offset).abs().max((b - offset).abs());
        }
        let mut sorted = extents.clone();
        sorted.select_nth_unstable_by(need - 1, f64::total_cmp);
        let width = 2.0 * sorted[need - 1];
        if best.as_ref().is_none_or(|(w, _, _)| width < *w) {
            best = Some((width, normal, offset));
        }
    };
    let total = binomial(corners.len(), k + 1);
    if total <= SLAB_SUBSET_CAP as f64 {
        for_each_subset(corners.len(), k + 1, &mut evaluate);
    } else {
        for _ in 0..SLAB_SUBSET_CAP {
            let subset = sample(rng, corners.len(), k + 1).into_vec();
            evaluate(&subset);
        }
    }
    let (width, normal, offset) = best?;
    let mut order: Vec<(f64, usize)> = remaining
        .iter()
        .map(|&c| {
            let (a, b) = cells[c].support(&normal);
            ((a - offset).abs().max((b - offset).abs()), c)
        })
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let chosen: Vec<usize> = order[..need].iter().map(|x| x.1).collect();
    Some(FoundSlab {
        normal,
        offset,
        width,
        cells: chosen,
    })
}

/// Unit normal and offset of the hyperplane of R^(k+1) through k+1 points.
fn plane_through<'a>(mut pts: impl Iterator<Item = &'a [f64]>, k: usize) -> Option<(Vec<f64>, f64)> {
    let p0 = pts.next()?;
    let diffs: Vec<Vec<f64>> = pts.map(|p| p.iter().zip(p0).map(|(a, b)| a - b).collect()).collect();
    let basis = orthonormalize(&diffs);
    if basis.len() < k {
        return None;
    }
    let mut all = basis;
    for i in 0..=k {
        let mut e = vec![0.0; k + 1];
        e[i] = 1.0;
        all.push(e);
    }
    let full = orthonormalize(&all);
    let normal = full.get(k)?.clone();
    let offset = dot(&normal, p0);
    Some((normal, offset))
}

/// Orthonormal basis of the complement of `normal` inside R^(k+1).
fn complement_frame(normal: &[f64]) -> Vec<Vec<f64>> {
    let m = normal.len();
    let mut vecs = vec![normal.to_vec()];
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        vecs.push(e);
    }
    orthonormalize(&vecs).split_off(1)
}
