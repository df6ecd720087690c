//! Per-cluster structure for c-approximate k-flat queries.
//!
//! Members of a cluster lie within `radius` of a k-flat K. They are split
//! into their K-coordinates (`q_a`, in K's stored basis) and their
//! components orthogonal to K (`q_b`, full-length vectors). A partition tree
//! over `q_a` carries a point-ANN structure over the `q_b` of every node.
//!
//! A query is parallel to K, near the cluster, or far from it. Near queries
//! are discretized into patches parallel to K; far queries only look at
//! the members' projections onto K.

use serde::{Deserialize, Serialize};

use crate::ann::{AnnConfig, Neighbor, PointAnnStructure};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{align_flats, axpy, dot, Flat, FlatPairFrame};
use crate::partition::{lattice_frontier, Lattice, PartitionTree};

pub const CLUSTER_BRANCHING: usize = 4;
pub const DEFAULT_PATCH_BUDGET: f64 = 1e6;
/// `1 - sigma_k` at or below this counts as parallel.
pub const PARALLEL_TOL: f64 = 1e-9;

/// `1 / (100 ln n)`, at most 1/16.
pub fn default_eps(n: usize) -> f64 {
    let ln = (n.max(2) as f64).ln();
    (1.0 / (100.0 * ln)).min(1.0 / 16.0)
}

/// Combined factor of the near-case approximation chain.
pub fn near_chain_factor(n: usize) -> f64 {
    let ln = (n as f64).ln();
    let eps = default_eps(n);
    (1.0 - 1.0 / (2.0 * ln)) * (1.0 + eps).powi(2) / (1.0 - eps)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cluster {
    pub flat: Flat,
    pub radius: f64,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub c: f64,
    /// Size of the whole data set; sets eps and the n^t scales.
    pub n: usize,
    pub t: f64,
    pub eps: f64,
    pub budget: f64,
    pub branching: usize,
}

impl ClusterParams {
    pub fn new(c: f64, n: usize, t: f64) -> Self {
        ClusterParams {
            c,
            n,
            t,
            eps: default_eps(n),
            budget: DEFAULT_PATCH_BUDGET,
            branching: CLUSTER_BRANCHING,
        }
    }

    pub fn n_t(&self) -> f64 {
        (self.n as f64).powf(self.t)
    }

    /// `(1 - 1/ln n) c`, kept above 1.
    pub fn c_prime(&self) -> f64 {
        let ln = (self.n.max(2) as f64).ln();
        ((1.0 - 1.0 / ln) * self.c).max(1.0 + 1e-6)
    }
}

/// A bounded l-dimensional piece parallel to K: `C w + anchor` over the box
/// `lo <= w <= hi`, where `C = [scales_i * axes_i]` with orthonormal axes
/// in K's direction space.
#[derive(Clone, Debug)]
pub struct Patch {
    pub axes: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
    pub anchor: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Patch {
    /// Columns of C.
    pub fn basis_parallel(&self) -> Vec<Vec<f64>> {
        self.axes
            .iter()
            .zip(&self.scales)
            .map(|(a, s)| a.iter().map(|x| x * s).collect())
            .collect()
    }

    pub fn at(&self, w: &[f64]) -> Vec<f64> {
        let mut x = self.anchor.clone();
        for ((a, s), wi) in self.axes.iter().zip(&self.scales).zip(w) {
            axpy(&mut x, s * wi, a);
        }
        x
    }

    /// Euclidean distance from `q`; exact because C has orthogonal columns.
    pub fn distance(&self, q: &[f64]) -> f64 {
        let r: Vec<f64> = q.iter().zip(&self.anchor).map(|(a, b)| a - b).collect();
        let mut d2 = dot(&r, &r);
        for (i, (a, s)) in self.axes.iter().zip(&self.scales).enumerate() {
            let p = dot(&r, a);
            let w = if *s > 0.0 {
                (p / s).clamp(self.lo[i], self.hi[i])
            } else {
                0.0
            };
            d2 += (p - s * w) * (p - s * w) - p * p;
        }
        d2.max(0.0).sqrt()
    }
}

/// What a cluster query did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClusterQueryInfo {
    pub parallel: bool,
    pub near_ran: bool,
    /// The near case exceeded its budget and scanned all members instead.
    pub near_fallback: bool,
    pub far_ran: bool,
    pub patches: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterStructure {
    cluster: Cluster,
    params: ClusterParams,
    points: Vec<Vec<f64>>,
    q_a: Vec<Vec<f64>>,
    q_b: Vec<Vec<f64>>,
    tree: PartitionTree,
    /// One ANN structure per tree node, reporting member positions.
    node_ann: Vec<PointAnnStructure>,
}

pub fn build_cluster_structure(
    cluster: Cluster,
    data: &[Vec<f64>],
    params: &ClusterParams,
    ann: &AnnConfig,
) -> Result<ClusterStructure> {
    ClusterStructure::build(cluster, data, params, ann)
}

impl ClusterStructure {
    /// `data` is the full point set; `cluster.members` index into it.
    pub fn build(cluster: Cluster, data: &[Vec<f64>], params: &ClusterParams, ann: &AnnConfig) -> Result<Self> {
        if cluster.members.is_empty() {
            return Err(Error::EmptyInput);
        }
        let d = cluster.flat.dim();
        let mut points = Vec::with_capacity(cluster.members.len());
        for &i in &cluster.members {
            let p = data
                .get(i)
                .ok_or_else(|| Error::InvalidParams(format!("member {i} out of range")))?;
            check_dim(d, p.len())?;
            let dist = cluster.flat.distance(p);
            if dist > cluster.radius + 1e-9 * (1.0 + cluster.radius) {
                return Err(Error::InvalidParams(format!(
                    "member {i} lies {dist} from the cluster flat, radius is {}",
                    cluster.radius
                )));
            }
            points.push(p.clone());
        }
        let basis = cluster.flat.basis();
        let q_a: Vec<Vec<f64>> = points.iter().map(|p| cluster.flat.coords(p)).collect();
        let q_b: Vec<Vec<f64>> = points
            .iter()
            .zip(&q_a)
            .map(|(p, coords)| {
                let mut r = p.clone();
                for (b, c) in basis.iter().zip(coords) {
                    axpy(&mut r, -c, b);
                }
                r
            })
            .collect();
        let tree = PartitionTree::build(&q_a, params.branching);
        let node_cfg = ann.with_c(params.c_prime());
        let mut node_ann = Vec::with_capacity(tree.len());
        for (id, node) in tree.nodes().iter().enumerate() {
            let subset: Vec<&Vec<f64>> = node.points.iter().map(|&i| &q_b[i]).collect();
            let cfg = node_cfg.with_seed(
                node_cfg
                    .rng_seed
                    .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(id as u64 + 1)),
            );
            node_ann.push(PointAnnStructure::build(&subset, node.points.clone(), &cfg)?);
        }
        Ok(ClusterStructure {
            cluster,
            params: params.clone(),
            points,
            q_a,
            q_b,
            tree,
            node_ann,
        })
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn params(&self) -> &ClusterParams {
        &self.params
    }

    pub fn radius(&self) -> f64 {
        self.cluster.radius
    }

    pub fn members(&self) -> &[usize] {
        &self.cluster.members
    }

    pub fn tree(&self) -> &PartitionTree {
        &self.tree
    }

    pub fn q_a(&self) -> &[Vec<f64>] {
        &self.q_a
    }

    pub fn q_b(&self) -> &[Vec<f64>] {
        &self.q_b
    }

    pub fn node_ann(&self, node: usize) -> &PointAnnStructure {
        &self.node_ann[node]
    }

    fn to_global(&self, local: usize, distance: f64) -> Neighbor {
        Neighbor {
            index: self.cluster.members[local],
            distance,
        }
    }

    fn flat_candidate(&self, flat: &Flat, local: usize) -> Neighbor {
        self.to_global(local, flat.distance(&self.points[local]))
    }

    /// Exact nearest member by linear scan.
    pub fn scan(&self, flat: &Flat) -> Neighbor {
        let mut best = self.flat_candidate(flat, 0);
        for i in 1..self.points.len() {
            let cand = self.flat_candidate(flat, i);
            if cand.better_than(&best) {
                best = cand;
            }
        }
        best
    }

    /// c-approximate nearest member of `flat`, given `r_tilde` with
    /// `d(flat, members)` in `[r_tilde / n^t, r_tilde]`.
    pub fn query(&self, flat: &Flat, r_tilde: f64) -> Result<Neighbor> {
        Ok(self.query_traced(flat, r_tilde)?.0)
    }

    pub fn query_traced(&self, flat: &Flat, r_tilde: f64) -> Result<(Neighbor, ClusterQueryInfo)> {
        check_dim(self.cluster.flat.dim(), flat.dim())?;
        check_dim(self.cluster.flat.k(), flat.k())?;
        let mut info = ClusterQueryInfo::default();
        let frame = align_flats(&self.cluster.flat, flat)?;
        if frame.singular_values.iter().all(|s| 1.0 - s <= PARALLEL_TOL) {
            info.parallel = true;
            return Ok((self.parallel_query(flat), info));
        }
        let eps = self.params.eps;
        let alpha = self.cluster.radius;
        let n_t = self.params.n_t();
        let mut best: Option<Neighbor> = None;
        if r_tilde / n_t <= alpha / eps {
            info.near_ran = true;
            match self.near_query(&frame, flat, &mut info) {
                Ok(hit) => best = Neighbor::best(best, hit),
                Err(Error::BudgetExceeded { .. }) => {
                    info.near_fallback = true;
                    best = Neighbor::best(best, Some(self.scan(flat)));
                }
                Err(e) => return Err(e),
            }
        }
        if r_tilde >= alpha / eps || best.is_none() {
            info.far_ran = true;
            best = Neighbor::best(best, Some(self.far_query_with_frame(&frame, flat, r_tilde)));
        }
        Ok((best.expect("far query always answers"), info))
    }

    fn parallel_query(&self, flat: &Flat) -> Neighbor {
        let f = self.complement(flat.offset());
        let hit = self.node_ann[self.tree.root()]
            .query_or_scan(&f)
            .expect("dimensions checked");
        self.flat_candidate(flat, hit.index)
    }

    /// Component of `x` orthogonal to K's direction space.
    fn complement(&self, x: &[f64]) -> Vec<f64> {
        let mut r = x.to_vec();
        for b in self.cluster.flat.basis() {
            let c = dot(b, x);
            axpy(&mut r, -c, b);
        }
        r
    }

    /// Number of leading singular values at or above `sqrt(1 - eps)`.
    fn split_index(&self, frame: &FlatPairFrame) -> usize {
        let threshold = (1.0 - self.params.eps).sqrt();
        frame
            .singular_values
            .iter()
            .take_while(|s| **s >= threshold - PARALLEL_TOL)
            .count()
    }

    fn near_query(&self, frame: &FlatPairFrame, flat: &Flat, info: &mut ClusterQueryInfo) -> Result<Option<Neighbor>> {
        let l = self.split_index(frame);
        let p = &self.params;
        let needed = l_flat_count(frame.k(), l, p) * patch_count(frame, l, p);
        if needed > p.budget {
            return Err(Error::BudgetExceeded {
                needed,
                budget: p.budget,
            });
        }
        let mut best: Option<Neighbor> = None;
        for sub in enumerate_l_flats(frame, l, self.cluster.radius, p)? {
            for patch in enumerate_patches(&sub, frame, l, self.cluster.radius, p)? {
                info.patches += 1;
                let (_, local) = self.patch_nn_local(&patch, frame);
                best = Neighbor::best(best, Some(self.flat_candidate(flat, local)));
            }
        }
        Ok(best)
    }

    /// Approximate nearest member of a patch; distances are to the patch.
    pub fn patch_nn_query(&self, patch: &Patch, frame: &FlatPairFrame) -> Neighbor {
        let (distance, local) = self.patch_nn_local(patch, frame);
        self.to_global(local, distance)
    }

    fn patch_nn_local(&self, patch: &Patch, frame: &FlatPairFrame) -> (f64, usize) {
        let k = self.cluster.flat.k();
        let p = &self.params;
        let alpha = self.cluster.radius;
        let g = self.complement(&patch.anchor);
        let origin = self.cluster.flat.coords(&patch.anchor);
        let side = p.eps * alpha / (2.0 * p.n_t() * p.n_t() * (k.max(1) as f64).sqrt());
        let reach = 3.0 * alpha * (k.max(1) as f64).sqrt() / p.eps;
        let axes: Vec<Vec<f64>> = (0..k).map(|j| frame.rot_k.iter().map(|row| row[j]).collect()).collect();
        let mut widths = vec![side; k];
        let mut window = vec![(-reach, reach); k];
        for i in 0..patch.axes.len() {
            if patch.hi[i].is_infinite() || patch.lo[i].is_infinite() {
                widths[i] = f64::INFINITY;
                window[i] = (f64::NEG_INFINITY, f64::INFINITY);
            } else {
                window[i] = (
                    patch.scales[i] * patch.lo[i] - reach,
                    patch.scales[i] * patch.hi[i] + reach,
                );
            }
        }
        // Degenerate widths (alpha = 0) would put every node on a boundary.
        for w in widths.iter_mut() {
            if !(*w > 0.0) {
                *w = f64::INFINITY;
            }
        }
        let lattice = Lattice { origin, axes, widths };
        let frontier = lattice_frontier(&self.tree, &lattice, Some(&window));
        let mut candidates: Vec<usize> = frontier
            .nodes
            .iter()
            .map(|(node, _)| {
                self.node_ann[*node]
                    .query_or_scan(&g)
                    .expect("dimensions checked")
                    .index
            })
            .collect();
        for leaf in &frontier.residual {
            candidates.extend(&self.tree.node(*leaf).points);
        }
        if candidates.is_empty() {
            // Everything was outside the window: fall back to all members.
            candidates.extend(0..self.points.len());
        }
        candidates
            .into_iter()
            .map(|local| (patch.distance(&self.points[local]), local))
            .min_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then(self.cluster.members[a.1].cmp(&self.cluster.members[b.1]))
            })
            .expect("nonempty cluster")
    }

    /// Far-case query using only the members' projections onto K.
    pub fn far_query(&self, flat: &Flat, r_tilde: f64) -> Result<Neighbor> {
        check_dim(self.cluster.flat.dim(), flat.dim())?;
        check_dim(self.cluster.flat.k(), flat.k())?;
        let frame = align_flats(&self.cluster.flat, flat)?;
        Ok(self.far_query_with_frame(&frame, flat, r_tilde))
    }

    fn far_query_with_frame(&self, frame: &FlatPairFrame, flat: &Flat, r_tilde: f64) -> Neighbor {
        let k = frame.k();
        let p = &self.params;
        let axes: Vec<Vec<f64>> = (0..k).map(|j| frame.rot_k.iter().map(|row| row[j]).collect()).collect();
        let origin: Vec<f64> = (0..k)
            .map(|i| (0..k).map(|j| frame.rot_k[i][j] * frame.u_f[j]).sum())
            .collect();
        let widths: Vec<f64> = frame
            .singular_values
            .iter()
            .map(|s| {
                let gap = (1.0 - s) * (1.0 + s);
                let w = p.eps * r_tilde / (2.0 * p.n_t() * (k as f64 * gap).sqrt());
                if gap <= 0.0 || !(w > 0.0) || !w.is_finite() {
                    f64::INFINITY
                } else {
                    w
                }
            })
            .collect();
        let lattice = Lattice { origin, axes, widths };
        let frontier = lattice_frontier(&self.tree, &lattice, None);
        let mut best: Option<Neighbor> = None;
        for (node, _) in &frontier.nodes {
            let rep = self.tree.node(*node).points[0];
            best = Neighbor::best(best, Some(self.flat_candidate(flat, rep)));
        }
        for leaf in &frontier.residual {
            for &i in &self.tree.node(*leaf).points {
                best = Neighbor::best(best, Some(self.flat_candidate(flat, i)));
            }
        }
        best.expect("frontier covers all members")
    }
}

fn l_flat_range(k: usize, p: &ClusterParams) -> usize {
    let n2t = p.n_t() * p.n_t();
    (n2t * (k as f64).sqrt() / p.eps.powf(2.5)).ceil() as usize
}

fn patch_range(l: usize, p: &ClusterParams) -> usize {
    let n2t = p.n_t() * p.n_t();
    (2.0 * n2t * (l as f64).sqrt() / (p.eps * p.eps)).ceil() as usize
}

fn l_flat_count(k: usize, l: usize, p: &ClusterParams) -> f64 {
    if l == k {
        return 1.0;
    }
    (2.0 * l_flat_range(k, p) as f64 + 1.0).powi((k - l) as i32)
}

fn patch_count(frame: &FlatPairFrame, l: usize, p: &ClusterParams) -> f64 {
    let bounded = frame.singular_values[..l]
        .iter()
        .filter(|s| (1.0 - **s) * (1.0 + **s) > 0.0)
        .count();
    (2.0 * patch_range(l, p) as f64 + 1.0).powi(bounded as i32)
}

/// Sub-flats of the query spanned by its first `l` rotated directions,
/// shifted along the remaining directions on a grid around the point of
/// the query closest to K.
pub fn enumerate_l_flats(frame: &FlatPairFrame, l: usize, alpha: f64, p: &ClusterParams) -> Result<Vec<Flat>> {
    let k = frame.k();
    if l > k {
        return Err(Error::InvalidParams(format!("l = {l} exceeds k = {k}")));
    }
    let count = l_flat_count(k, l, p);
    if count > p.budget {
        return Err(Error::BudgetExceeded {
            needed: count,
            budget: p.budget,
        });
    }
    let dirs: Vec<Vec<f64>> = frame.basis_f[..l].to_vec();
    if l == k {
        return Ok(vec![Flat::from_orthonormal(dirs, &frame.offset_f)]);
    }
    let tau = alpha * p.eps / (p.n_t() * p.n_t() * (k as f64).sqrt());
    let o = l_flat_range(k, p) as i64;
    let mut out = Vec::with_capacity(count as usize);
    let mut index = vec![-o; k - l];
    loop {
        let mut v = frame.v_k.clone();
        for (j, i) in index.iter().enumerate() {
            v[l + j] += *i as f64 * tau;
        }
        let through = frame.point_on_f(&v);
        out.push(Flat::from_orthonormal(dirs.clone(), &through));
        if !advance(&mut index, -o, o) {
            break;
        }
    }
    Ok(out)
}

/// Odometer step over `[lo, hi]^len`; false once every vector was visited.
fn advance(index: &mut [i64], lo: i64, hi: i64) -> bool {
    for x in index.iter_mut() {
        if *x < hi {
            *x += 1;
            return true;
        }
        *x = lo;
    }
    false
}

/// Patches parallel to K approximating the sub-flat `sub` (whose basis is
/// the first `l` rotated query directions).
pub fn enumerate_patches(
    sub: &Flat,
    frame: &FlatPairFrame,
    l: usize,
    alpha: f64,
    p: &ClusterParams,
) -> Result<Vec<Patch>> {
    check_dim(l, sub.k())?;
    let count = patch_count(frame, l, p);
    if count > p.budget {
        return Err(Error::BudgetExceeded {
            needed: count,
            budget: p.budget,
        });
    }
    if l == 0 {
        return Ok(vec![Patch {
            axes: Vec::new(),
            scales: Vec::new(),
            anchor: sub.offset().to_vec(),
            lo: Vec::new(),
            hi: Vec::new(),
        }]);
    }
    // Point of the sub-flat closest to K: its first l query coordinates
    // agree with v_K, the rest are fixed by the sub-flat itself.
    let tail: Vec<f64> = frame.basis_f[l..]
        .iter()
        .map(|b| dot(b, sub.offset()) - dot(b, &frame.offset_f))
        .collect();
    let mut v = frame.v_k[..l].to_vec();
    v.extend(tail);
    let w_k = sub.coords(&frame.point_on_f(&v));

    let n2t = p.n_t() * p.n_t();
    let sigmas = &frame.singular_values[..l];
    let taus: Vec<f64> = sigmas
        .iter()
        .map(|s| {
            let gap = (1.0 - s) * (1.0 + s);
            if gap > 0.0 {
                alpha * p.eps / (n2t * (l as f64 * gap).sqrt())
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let o = patch_range(l, p) as i64;
    let bounded: Vec<usize> = (0..l).filter(|&i| taus[i].is_finite()).collect();
    let axes: Vec<Vec<f64>> = frame.basis_k[..l].to_vec();
    let mut lo = vec![0.0; l];
    let mut hi = taus.clone();
    for i in 0..l {
        if !taus[i].is_finite() {
            lo[i] = f64::NEG_INFINITY;
            hi[i] = f64::INFINITY;
        }
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut index = vec![-o; bounded.len()];
    loop {
        let mut w = w_k.clone();
        for (j, &i) in bounded.iter().enumerate() {
            w[i] += index[j] as f64 * taus[i];
        }
        out.push(Patch {
            axes: axes.clone(),
            scales: sigmas.to_vec(),
            anchor: sub.at(&w),
            lo: lo.clone(),
            hi: hi.clone(),
        });
        if !advance(&mut index, -o, o) {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::AnnKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gauss(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Members scattered along K with offsets of norm at most `radius`.
    fn planted(rng: &mut ChaCha8Rng, m: usize, d: usize, k: usize, radius: f64) -> (Flat, Vec<Vec<f64>>) {
        let dirs: Vec<Vec<f64>> = (0..k).map(|_| gauss(rng, d)).collect();
        let flat = Flat::new(&dirs, &gauss(rng, d)).unwrap();
        let pts = (0..m)
            .map(|_| {
                let w: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
                let mut x = flat.at(&w);
                let noise = flat.residual(&gauss(rng, d));
                let nn = dot(&noise, &noise).sqrt();
                let s = radius * rng.random::<f64>() / nn.max(1e-300);
                axpy(&mut x, s, &noise);
                x
            })
            .collect();
        (flat, pts)
    }

    fn structure(flat: &Flat, pts: &[Vec<f64>], radius: f64, params: &ClusterParams) -> ClusterStructure {
        let cluster = Cluster {
            flat: flat.clone(),
            radius,
            members: (0..pts.len()).collect(),
        };
        ClusterStructure::build(cluster, pts, params, &AnnConfig::oracle(params.c)).unwrap()
    }

    fn oracle(pts: &[Vec<f64>], f: &Flat) -> f64 {
        pts.iter().map(|p| f.distance(p)).fold(f64::INFINITY, f64::min)
    }

    fn random_flat(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Flat {
        let dirs: Vec<Vec<f64>> = (0..k).map(|_| gauss(rng, d)).collect();
        Flat::new(&dirs, &gauss(rng, d)).unwrap()
    }

    #[test]
    fn chain_factor_is_at_most_one() {
        for n in [16, 100, 1024, 1 << 17, 1 << 20] {
            assert!(near_chain_factor(n) <= 1.0, "n = {n}");
        }
    }

    #[test]
    fn single_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (flat, pts) = planted(&mut rng, 1, 6, 1, 0.1);
        let cs = structure(&flat, &pts, 0.1, &ClusterParams::new(2.0, 100, 0.1));
        assert_eq!(cs.tree().len(), 1);
        assert_eq!(cs.node_ann(0).len(), 1);
        let q = random_flat(&mut rng, 6, 1);
        assert_eq!(cs.query(&q, 1.0).unwrap().index, 0);
    }

    #[test]
    fn members_on_the_flat_have_zero_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (flat, pts) = planted(&mut rng, 50, 5, 2, 0.0);
        let cs = structure(&flat, &pts, 0.0, &ClusterParams::new(2.0, 100, 0.1));
        let off = flat.offset();
        for b in cs.q_b() {
            let diff: f64 = b.iter().zip(off).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-9);
        }
    }

    #[test]
    fn node_ann_holds_node_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (flat, pts) = planted(&mut rng, 512, 16, 1, 0.2);
        let cs = structure(&flat, &pts, 0.2, &ClusterParams::new(2.0, 4096, 0.1));
        let tree = cs.tree();
        assert!(tree.depth() > 1);
        for (id, node) in tree.nodes().iter().enumerate() {
            assert_eq!(cs.node_ann(id).ids(), &node.points[..]);
            assert_eq!(cs.node_ann(id).dim(), 16);
        }
    }

    #[test]
    fn query_equal_to_cluster_flat_is_parallel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (flat, pts) = planted(&mut rng, 100, 8, 2, 0.3);
        let cs = structure(&flat, &pts, 0.3, &ClusterParams::new(2.0, 1000, 0.1));
        let (hit, info) = cs.query_traced(&flat, 0.3).unwrap();
        assert!(info.parallel);
        assert_eq!(hit.distance, cs.scan(&flat).distance);
    }

    #[test]
    fn orthogonal_query_through_member() {
        let k_flat = Flat::from_points(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![i as f64 * 0.1, 0.01 * (i % 3) as f64, 0.0])
            .collect();
        let cs = structure(&k_flat, &pts, 0.03, &ClusterParams::new(2.0, 1000, 0.1));
        let q = Flat::from_points(&[pts[7].clone(), vec![pts[7][0], pts[7][1], 1.0]]).unwrap();
        let hit = cs.query(&q, 1e-6).unwrap();
        assert!(hit.distance < 1e-12);
    }

    #[test]
    fn l_flats_single_when_nearly_parallel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k_flat = random_flat(&mut rng, 6, 2);
        let frame = align_flats(&k_flat, &random_flat(&mut rng, 6, 2)).unwrap();
        let p = ClusterParams::new(2.0, 100, 0.1);
        let subs = enumerate_l_flats(&frame, 2, 0.1, &p).unwrap();
        assert_eq!(subs.len(), 1);
    }

    #[test]
    fn zero_flats_are_grid_points_on_the_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k_flat = random_flat(&mut rng, 5, 1);
        let q = random_flat(&mut rng, 5, 1);
        let frame = align_flats(&k_flat, &q).unwrap();
        let mut p = ClusterParams::new(2.0, 4, 0.0);
        p.eps = 0.5;
        let alpha = 0.2;
        let subs = enumerate_l_flats(&frame, 0, alpha, &p).unwrap();
        let tau = alpha * p.eps; // n^2t = 1, sqrt(k) = 1
        let o = (1.0 / p.eps.powf(2.5)).ceil() as usize;
        assert_eq!(subs.len(), 2 * o + 1);
        let mut coords: Vec<f64> = subs
            .iter()
            .map(|s| {
                assert!(q.distance(s.offset()) < 1e-9);
                dot(&frame.basis_f[0], s.offset()) - dot(&frame.basis_f[0], &frame.offset_f)
            })
            .collect();
        coords.sort_by(f64::total_cmp);
        for w in coords.windows(2) {
            assert!((w[1] - w[0] - tau).abs() < 1e-9);
        }
        let center = frame.v_k[0];
        assert!(coords.iter().all(|c| (c - center).abs() <= o as f64 * tau + 1e-9));
    }

    #[test]
    fn l_flats_lie_on_the_query_and_stay_parallel() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let k_flat = random_flat(&mut rng, 7, 2);
            let q = random_flat(&mut rng, 7, 2);
            let frame = align_flats(&k_flat, &q).unwrap();
            let mut p = ClusterParams::new(2.0, 4, 0.0);
            p.eps = 0.6;
            let l = {
                let th = (1.0 - p.eps).sqrt();
                frame.singular_values.iter().take_while(|s| **s >= th).count()
            };
            let Ok(subs) = enumerate_l_flats(&frame, l, 0.3, &p) else {
                continue;
            };
            for s in &subs {
                for _ in 0..100 {
                    let w = gauss(&mut rng, l);
                    assert!(q.distance(&s.at(&w)) < 1e-9);
                }
                for b in s.basis() {
                    let proj: f64 = k_flat.basis().iter().map(|a| dot(a, b).powi(2)).sum::<f64>().sqrt();
                    assert!(proj >= (1.0 - p.eps).sqrt() - 1e-9);
                }
            }
        }
    }

    #[test]
    fn patches_stay_close_to_their_sub_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k_flat = random_flat(&mut rng, 6, 1);
        // query direction close to K's
        let dir: Vec<f64> = k_flat.basis()[0]
            .iter()
            .map(|x| x + 0.05 * rng.random_range(-1.0..1.0))
            .collect();
        let q = Flat::new(&[dir], &gauss(&mut rng, 6)).unwrap();
        let frame = align_flats(&k_flat, &q).unwrap();
        let mut p = ClusterParams::new(2.0, 4, 0.0);
        p.eps = 0.2;
        let alpha = 0.5;
        assert!(frame.singular_values[0] >= (1.0 - p.eps).sqrt());
        let subs = enumerate_l_flats(&frame, 1, alpha, &p).unwrap();
        let patches = enumerate_patches(&subs[0], &frame, 1, alpha, &p).unwrap();
        let bound = p.eps * alpha; // n^2t = 1
        for g in &patches {
            for c in g.basis_parallel() {
                let mut off = c.clone();
                for a in k_flat.basis() {
                    axpy(&mut off, -dot(a, &c), a);
                }
                assert!(dot(&off, &off).sqrt() <= 1e-9);
            }
            for _ in 0..20 {
                let w = [rng.random_range(g.lo[0]..=g.hi[0])];
                let x = g.at(&w);
                assert!(subs[0].distance(&x) <= bound + 1e-9);
            }
        }
    }

    #[test]
    fn l_zero_patch_is_the_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k_flat = random_flat(&mut rng, 4, 1);
        let frame = align_flats(&k_flat, &random_flat(&mut rng, 4, 1)).unwrap();
        let p = ClusterParams::new(2.0, 4, 0.0);
        let pt = Flat::point(&[0.1, 0.2, 0.3, 0.4]);
        let patches = enumerate_patches(&pt, &frame, 0, 0.1, &p).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].anchor, vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn patch_distance_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let k_flat = random_flat(&mut rng, 5, 1);
        let patch = Patch {
            axes: vec![k_flat.basis()[0].clone()],
            scales: vec![0.9],
            anchor: gauss(&mut rng, 5),
            lo: vec![0.0],
            hi: vec![0.7],
        };
        for _ in 0..20 {
            let q = gauss(&mut rng, 5);
            let mut best = f64::INFINITY;
            for i in 0..=7000 {
                let w = 0.7 * i as f64 / 7000.0;
                best = best.min(crate::linalg::dist(&q, &patch.at(&[w])));
            }
            let d = patch.distance(&q);
            assert!(d <= best + 1e-12 && best - d < 1e-3);
        }
    }

    #[test]
    fn patch_query_on_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (flat, pts) = planted(&mut rng, 64, 8, 1, 0.1);
        let cs = structure(&flat, &pts, 0.1, &ClusterParams::new(2.0, 4, 0.0));
        let frame = align_flats(&flat, &flat).unwrap();
        let patch = Patch {
            axes: vec![flat.basis()[0].clone()],
            scales: vec![1.0],
            anchor: pts[5].clone(),
            lo: vec![0.0],
            hi: vec![0.0],
        };
        let hit = cs.patch_nn_query(&patch, &frame);
        assert_eq!(hit.distance, 0.0);
    }

    #[test]
    fn patch_query_with_equal_complements_matches_scan() {
        let k_flat = Flat::from_points(&[vec![0.0; 4], vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let pts: Vec<Vec<f64>> = (0..80).map(|i| vec![(i as f64 * 0.37) % 5.0, 0.1, 0.0, 0.0]).collect();
        let cs = structure(&k_flat, &pts, 0.1, &ClusterParams::new(2.0, 4, 0.0));
        let frame = align_flats(&k_flat, &k_flat).unwrap();
        for s in [0.3, 1.7, 4.2] {
            let patch = Patch {
                axes: vec![vec![1.0, 0.0, 0.0, 0.0]],
                scales: vec![1.0],
                anchor: vec![s, 0.0, 0.5, 0.0],
                lo: vec![0.0],
                hi: vec![0.05],
            };
            let hit = cs.patch_nn_query(&patch, &frame);
            let best = pts.iter().map(|p| patch.distance(p)).fold(f64::INFINITY, f64::min);
            assert!(hit.distance <= best * (1.0 + 1e-12), "{} vs {best}", hit.distance);
        }
    }

    #[test]
    fn patch_query_is_c_approximate() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (flat, pts) = planted(&mut rng, 256, 8, 1, 0.2);
        let p = ClusterParams::new(2.0, 4, 0.0);
        let cs = structure(&flat, &pts, 0.2, &p);
        let frame = align_flats(&flat, &flat).unwrap();
        for _ in 0..30 {
            let base = &pts[rng.random_range(0..256)];
            let mut anchor = base.clone();
            axpy(&mut anchor, 0.3, &flat.residual(&gauss(&mut rng, 8)));
            let patch = Patch {
                axes: vec![flat.basis()[0].clone()],
                scales: vec![rng.random_range(0.8..1.0)],
                anchor,
                lo: vec![0.0],
                hi: vec![rng.random_range(0.0..0.5)],
            };
            let hit = cs.patch_nn_query(&patch, &frame);
            let best = pts.iter().map(|q| patch.distance(q)).fold(f64::INFINITY, f64::min);
            assert!(hit.distance <= 2.0 * best + 1e-12);
        }
    }

    #[test]
    fn far_query_single_projection() {
        let k_flat = Flat::from_points(&[vec![0.0; 3], vec![1.0, 0.0, 0.0]]).unwrap();
        let pts: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![0.5, 0.01 * (i % 5) as f64, 0.01 * (i % 7) as f64])
            .collect();
        let cs = structure(&k_flat, &pts, 0.1, &ClusterParams::new(2.0, 1000, 0.1));
        let q = Flat::from_points(&[vec![0.0, 0.0, 5.0], vec![0.0, 1.0, 5.0]]).unwrap();
        let hit = cs.far_query(&q, 5.0).unwrap();
        assert!(hit.distance <= oracle(&pts, &q) * 1.0 + 0.2);
    }

    #[test]
    fn far_query_orthogonal_within_one_plus_four_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let k_flat = Flat::from_points(&[vec![0.0; 6], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
        let radius = 0.05;
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let mut x = vec![rng.random_range(-3.0..3.0), 0.0, 0.0, 0.0, 0.0, 0.0];
                for v in x.iter_mut().skip(1) {
                    *v = rng.random_range(-1.0..1.0) * radius / 6f64.sqrt();
                }
                x
            })
            .collect();
        let mut p = ClusterParams::new(2.0, 1000, 0.1);
        p.eps = 0.05;
        let cs = structure(&k_flat, &pts, radius, &p);
        for _ in 0..20 {
            let mut far_pt = vec![0.0; 6];
            far_pt[0] = rng.random_range(-3.0..3.0);
            far_pt[2] = 2.0 + rng.random::<f64>();
            let mut other = far_pt.clone();
            other[1] += 1.0; // direction e2, orthogonal to K
            let q = Flat::from_points(&[far_pt, other]).unwrap();
            let frame = align_flats(&k_flat, &q).unwrap();
            assert!(frame.singular_values[0] < 1e-12);
            let exact = oracle(&pts, &q);
            assert!(exact >= radius / p.eps);
            let hit = cs.far_query(&q, exact * 1.5).unwrap();
            assert!(hit.distance <= (1.0 + 4.0 * p.eps) * exact + 1e-12);
        }
    }

    #[test]
    fn random_clusters_are_c_approximate() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for trial in 0..50 {
            let k = 1 + trial % 2;
            let (flat, pts) = planted(&mut rng, 256, 16, k, 0.2);
            let p = ClusterParams::new(2.0, 4096, 0.1);
            let cs = structure(&flat, &pts, 0.2, &p);
            let q = random_flat(&mut rng, 16, k);
            let exact = oracle(&pts, &q);
            let r_tilde = exact * p.n_t().sqrt();
            let hit = cs.query(&q, r_tilde).unwrap();
            assert!(hit.distance <= 2.0 * exact + 1e-12);
            assert!((q.distance(&pts[hit.index]) - hit.distance).abs() < 1e-10);
        }
    }

    #[test]
    fn near_case_with_small_grids_runs_patches() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (flat, pts) = planted(&mut rng, 128, 6, 1, 0.2);
        let mut p = ClusterParams::new(2.0, 2, 0.0);
        p.eps = 0.5;
        let cs = structure(&flat, &pts, 0.2, &p);
        for _ in 0..10 {
            let dir: Vec<f64> = flat.basis()[0]
                .iter()
                .map(|x| x + 0.3 * rng.random_range(-1.0..1.0))
                .collect();
            let mut through = pts[rng.random_range(0..128)].clone();
            axpy(&mut through, 0.1, &flat.residual(&gauss(&mut rng, 6)));
            let q = Flat::new(&[dir], &through).unwrap();
            let exact = oracle(&pts, &q);
            let (hit, info) = cs.query_traced(&q, exact).unwrap();
            assert!(info.near_ran && !info.near_fallback);
            assert!(info.patches > 0);
            assert!(hit.distance <= 2.0 * exact + 1e-12);
        }
    }

    #[test]
    fn lsh_kind_cluster_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (flat, pts) = planted(&mut rng, 200, 10, 1, 0.2);
        let p = ClusterParams::new(2.0, 1000, 0.1);
        let cluster = Cluster {
            flat: flat.clone(),
            radius: 0.2,
            members: (0..200).collect(),
        };
        let cs = ClusterStructure::build(cluster, &pts, &p, &AnnConfig::new(AnnKind::Lsh, 2.0, 5)).unwrap();
        let (hit, info) = cs.query_traced(&flat, 0.2).unwrap();
        assert!(info.parallel);
        assert!(hit.distance <= 2.0 * oracle(&pts, &flat) + 1e-12);
    }
}
