//! Top-level c-approximate nearest-neighbor index for k-flat queries.
//!
//! Building greedily removes the tightest full cluster (m points around a
//! k-flat) until no points are left. Clusters are stored by decreasing
//! radius. A perfect binary tree over the clusters holds exact-search
//! projection structures on the unions of its leaves, and a rough
//! projection structure over all points supplies the distance estimate
//! that decides which clusters need their own query.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ann::{AnnConfig, AnnKind, Neighbor};
use crate::cluster::{Cluster, ClusterParams, ClusterStructure};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{binomial, dot, for_each_subset, orthonormalize, sub, Flat};
use crate::projection::{ProjectionKind, ProjectionStructure, DEFAULT_REPEATS};

/// Above this many candidate subsets the cluster search samples instead.
pub const DEFAULT_SUBSET_CAP: usize = 2_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexParams {
    pub k: usize,
    pub c: f64,
    pub t: f64,
    pub ann_kind: AnnKind,
    pub seed: u64,
    pub repeats: usize,
    /// Cluster size; derived from n, k and rho when `None`.
    pub m: Option<usize>,
    pub subset_cap: usize,
}

impl IndexParams {
    pub fn new(k: usize, c: f64, t: f64, ann_kind: AnnKind, seed: u64) -> Self {
        IndexParams {
            k,
            c,
            t,
            ann_kind,
            seed,
            repeats: DEFAULT_REPEATS,
            m: None,
            subset_cap: DEFAULT_SUBSET_CAP,
        }
    }

    pub fn ann_config(&self) -> AnnConfig {
        AnnConfig::new(self.ann_kind, self.c, self.seed)
    }
}

/// `round(n^(k / (k + 1 - rho)))` clamped to `[k + 2, n / 2]`.
pub fn cluster_size(n: usize, k: usize, rho: f64) -> usize {
    let m = (n as f64).powf(k as f64 / (k as f64 + 1.0 - rho)).round() as usize;
    m.min(n / 2).max(k + 2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FullCluster {
    pub flat: Flat,
    pub alpha: f64,
    pub members: Vec<usize>,
    /// The candidate subsets were sampled rather than enumerated.
    pub sampled: bool,
}

/// Flat through `pts` extended by coordinate directions to dimension k.
fn flat_through(pts: &[&Vec<f64>], k: usize) -> Flat {
    let d = pts[0].len();
    let mut dirs: Vec<Vec<f64>> = pts[1..].iter().map(|p| sub(p, pts[0])).collect();
    dirs.extend((0..d).map(|i| {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        e
    }));
    let mut basis = orthonormalize(&dirs);
    basis.truncate(k);
    Flat::from_orthonormal(basis, pts[0])
}

/// Members of `flat`'s m-point cluster among `active`: the m closest by
/// (distance, index), and the m-th distance.
fn closest_m(points: &[Vec<f64>], active: &[usize], flat: &Flat, m: usize) -> (f64, Vec<usize>) {
    let mut by_dist: Vec<(f64, usize)> = active.iter().map(|&i| (flat.distance(&points[i]), i)).collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    by_dist.truncate(m);
    let alpha = by_dist.last().map_or(0.0, |x| x.0);
    let mut members: Vec<usize> = by_dist.into_iter().map(|x| x.1).collect();
    members.sort_unstable();
    (alpha, members)
}

/// Among flats through k+1 active points, the one whose m-th closest
/// active point is nearest. Enumerates all subsets up to `cap` of them and
/// samples `cap` subsets beyond that.
pub fn find_min_full_cluster(
    points: &[Vec<f64>],
    active: &[usize],
    k: usize,
    m: usize,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FullCluster> {
    let na = active.len();
    if m == 0 || m > na {
        return Err(Error::InvalidParams(format!("cannot pick {m} of {na} points")));
    }
    if na <= k + 1 {
        let pts: Vec<&Vec<f64>> = active.iter().map(|&i| &points[i]).collect();
        let flat = flat_through(&pts, k);
        let (alpha, members) = closest_m(points, active, &flat, m);
        return Ok(FullCluster {
            flat,
            alpha,
            members,
            sampled: false,
        });
    }
    let mut search = GramSearch::new(points, active, k, m);
    let total = binomial(na, k + 1);
    let sampled = total > cap as f64;
    if sampled {
        for _ in 0..cap {
            let mut s = sample(rng, na, k + 1).into_vec();
            s.sort_unstable();
            search.try_subset(&s);
        }
    } else {
        for_each_subset(na, k + 1, |s| search.try_subset(s));
    }
    let flat = match search.best.take() {
        Some((_, s)) => {
            let pts: Vec<&Vec<f64>> = s.iter().map(|&j| &points[active[j]]).collect();
            flat_through(&pts, k)
        }
        // Every subset was degenerate: the active points span less than k.
        None => {
            let pts: Vec<&Vec<f64>> = active.iter().map(|&i| &points[i]).collect();
            let mut basis_pts = vec![pts[0]];
            for p in &pts[1..] {
                let mut cand = basis_pts.clone();
                cand.push(p);
                if Flat::from_points(&cand).is_ok() {
                    basis_pts = cand;
                }
            }
            flat_through(&basis_pts, k)
        }
    };
    let (alpha, members) = closest_m(points, active, &flat, m);
    Ok(FullCluster {
        flat,
        alpha,
        members,
        sampled,
    })
}

/// Squared distances to flats through active points computed from the
/// Gram matrix of the centered active points.
struct GramSearch {
    k: usize,
    m: usize,
    gram: Vec<Vec<f64>>,
    scale: f64,
    best: Option<(f64, Vec<usize>)>,
    buf: Vec<f64>,
}

impl GramSearch {
    fn new(points: &[Vec<f64>], active: &[usize], k: usize, m: usize) -> Self {
        let d = points[active[0]].len();
        let mut mean = vec![0.0; d];
        for &i in active {
            for (s, x) in mean.iter_mut().zip(&points[i]) {
                *s += x;
            }
        }
        mean.iter_mut().for_each(|s| *s /= active.len() as f64);
        let centered: Vec<Vec<f64>> = active.iter().map(|&i| sub(&points[i], &mean)).collect();
        let gram: Vec<Vec<f64>> = centered
            .iter()
            .map(|a| centered.iter().map(|b| dot(a, b)).collect())
            .collect();
        let scale = gram
            .iter()
            .enumerate()
            .map(|(i, r)| r[i])
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        GramSearch {
            k,
            m,
            gram,
            scale,
            best: None,
            buf: Vec::with_capacity(active.len()),
        }
    }

    fn try_subset(&mut self, s: &[usize]) {
        let g = &self.gram;
        let p0 = s[0];
        let k = self.k;
        // Gram matrix of the difference vectors and its Cholesky factor.
        let mut h = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in 0..=a {
                let (i, j) = (s[a + 1], s[b + 1]);
                h[a][b] = g[i][j] - g[i][p0] - g[j][p0] + g[p0][p0];
            }
        }
        let Some(l) = cholesky(&h, 1e-10 * self.scale) else {
            return;
        };
        let bound = self.best.as_ref().map_or(f64::INFINITY, |b| b.0);
        let buf = &mut self.buf;
        buf.clear();
        let n = g.len();
        let allowed_far = n - self.m;
        let mut far = 0;
        let mut c = vec![0.0; k];
        for x in 0..n {
            let gx = &g[x];
            let r2 = gx[x] - 2.0 * gx[p0] + g[p0][p0];
            for a in 0..k {
                let i = s[a + 1];
                c[a] = gx[i] - gx[p0] - g[i][p0] + g[p0][p0];
            }
            // Forward substitution: |L^{-1} c|^2 = c^T H^{-1} c.
            let mut proj = 0.0;
            for a in 0..k {
                let mut v = c[a];
                for b in 0..a {
                    v -= l[a][b] * c[b];
                }
                v /= l[a][a];
                c[a] = v;
                proj += v * v;
            }
            let d2 = (r2 - proj).max(0.0);
            if d2 > bound {
                far += 1;
                if far > allowed_far {
                    return;
                }
            }
            buf.push(d2);
        }
        let (_, mth, _) = buf.select_nth_unstable_by(self.m - 1, f64::total_cmp);
        let mth = *mth;
        if mth < bound {
            self.best = Some((mth, s.to_vec()));
        }
    }
}

fn cholesky(h: &[Vec<f64>], tol: f64) -> Option<Vec<Vec<f64>>> {
    let k = h.len();
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let mut v = h[i][j];
            for p in 0..j {
                v -= l[i][p] * l[j][p];
            }
            if i == j {
                if v <= tol {
                    return None;
                }
                l[i][i] = v.sqrt();
            } else {
                l[i][j] = v / l[j][j];
            }
        }
    }
    Some(l)
}

/// What a query did, for diagnostics and coverage tests.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryTrace {
    pub r_tilde: f64,
    pub i_star: usize,
    pub clusters_queried: Vec<usize>,
    pub walk: Vec<usize>,
    pub q3_reported: usize,
    pub near_fallbacks: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlatIndex {
    pub(crate) params: IndexParams,
    pub(crate) n: usize,
    pub(crate) d: usize,
    pub(crate) m: usize,
    pub(crate) rho: f64,
    pub(crate) sampled_search: bool,
    pub(crate) points: Vec<Vec<f64>>,
    pub(crate) clusters: Vec<ClusterStructure>,
    /// Heap-ordered perfect binary tree: node 1 is the root, leaves are
    /// `leaves..2*leaves`, leaf `leaves + i` holds cluster i. Padding
    /// leaves and their empty unions are `None`.
    pub(crate) q3_tree: Vec<Option<ProjectionStructure>>,
    pub(crate) leaves: usize,
    pub(crate) q1_root: ProjectionStructure,
}

pub fn build_index(points: Vec<Vec<f64>>, params: &IndexParams) -> Result<FlatIndex> {
    FlatIndex::build(points, params)
}

pub fn query_index(idx: &FlatIndex, flat: &Flat, seed: u64) -> Result<Neighbor> {
    idx.query(flat, seed)
}

impl FlatIndex {
    pub fn build(points: Vec<Vec<f64>>, params: &IndexParams) -> Result<Self> {
        let k = params.k;
        let n = points.len();
        if n < 2 * (k + 2) {
            return Err(Error::InvalidParams(format!(
                "need at least {} points, got {n}",
                2 * (k + 2)
            )));
        }
        if !(params.t > 0.0 && params.t <= 1.0) {
            return Err(Error::InvalidParams(format!("t = {} outside (0, 1]", params.t)));
        }
        let ann = params.ann_config();
        ann.validate()?;
        let d = points[0].len();
        if d <= k {
            return Err(Error::InvalidParams(format!("dimension {d} cannot host {k}-flats")));
        }
        for p in &points {
            check_dim(d, p.len())?;
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParams("non-finite coordinate".into()));
            }
        }
        let m = match params.m {
            Some(m) if m > k && m <= n => m,
            Some(m) => {
                return Err(Error::InvalidParams(format!(
                    "cluster size {m} outside [{}, {n}]",
                    k + 1
                )))
            }
            None => cluster_size(n, k, ann.rho),
        };

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut active: Vec<usize> = (0..n).collect();
        let mut extracted: Vec<FullCluster> = Vec::new();
        let mut sampled_search = false;
        while !active.is_empty() {
            let size = m.min(active.len());
            let mut fc = find_min_full_cluster(&points, &active, k, size, params.subset_cap, &mut rng)?;
            sampled_search |= fc.sampled;
            // Keep radii monotone in extraction order; a larger radius
            // still covers the members.
            if let Some(prev) = extracted.last() {
                fc.alpha = fc.alpha.max(prev.alpha);
            }
            active.retain(|i| fc.members.binary_search(i).is_err());
            extracted.push(fc);
        }
        extracted.reverse();

        let cparams = ClusterParams::new(params.c, n, params.t);
        let clusters = extracted
            .iter()
            .enumerate()
            .map(|(i, fc)| {
                let cluster = Cluster {
                    flat: fc.flat.clone(),
                    radius: fc.alpha,
                    members: fc.members.clone(),
                };
                ClusterStructure::build(
                    cluster,
                    &points,
                    &cparams,
                    &ann.with_seed(params.seed.wrapping_add(i as u64)),
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let leaves = clusters.len().next_power_of_two();
        let mut q3_tree: Vec<Option<ProjectionStructure>> = vec![None; 2 * leaves];
        for node in 1..2 * leaves {
            let members = union_members(&clusters, leaves, node);
            if members.is_empty() {
                continue;
            }
            let seed = params.seed ^ (0x51ed_270b_u64 << 20).wrapping_mul(node as u64);
            q3_tree[node] = Some(ProjectionStructure::build(
                &points,
                &members,
                k,
                params.t,
                params.repeats,
                ProjectionKind::Q3,
                seed,
            )?);
        }
        let all: Vec<usize> = (0..n).collect();
        let q1_root = ProjectionStructure::build(
            &points,
            &all,
            k,
            params.t,
            params.repeats,
            ProjectionKind::Q1,
            params.seed.wrapping_mul(0x2545_f491_4f6c_dd1d),
        )?;
        Ok(FlatIndex {
            params: params.clone(),
            n,
            d,
            m,
            rho: ann.rho,
            sampled_search,
            points,
            clusters,
            q3_tree,
            leaves,
            q1_root,
        })
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.params.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// The cluster search sampled subsets in at least one round.
    pub fn sampled_search(&self) -> bool {
        self.sampled_search
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn clusters(&self) -> &[ClusterStructure] {
        &self.clusters
    }

    pub fn leaves(&self) -> usize {
        self.leaves
    }

    /// Number of levels of the Q3 tree.
    pub fn depth(&self) -> usize {
        self.leaves.trailing_zeros() as usize + 1
    }

    pub fn q3_node(&self, node: usize) -> Option<&ProjectionStructure> {
        self.q3_tree.get(node).and_then(|x| x.as_ref())
    }

    pub fn q1_root(&self) -> &ProjectionStructure {
        &self.q1_root
    }

    /// Number of clusters whose radius exceeds `r_tilde * n^t`.
    pub fn i_star(&self, r_tilde: f64) -> usize {
        let threshold = r_tilde * (self.n as f64).powf(self.params.t);
        self.clusters.iter().take_while(|c| c.radius() > threshold).count()
    }

    /// Tree nodes whose leaves are exactly clusters `0..i_star`.
    pub fn walk_nodes(&self, i_star: usize) -> Vec<usize> {
        if i_star >= self.leaves {
            return vec![1];
        }
        let mut out = Vec::new();
        let mut node = self.leaves + i_star;
        while node > 1 {
            if node % 2 == 1 {
                out.push(node - 1);
            }
            node /= 2;
        }
        out
    }

    /// Global indices stored under a tree node.
    pub fn node_members(&self, node: usize) -> Vec<usize> {
        union_members(&self.clusters, self.leaves, node)
    }

    pub fn query(&self, flat: &Flat, seed: u64) -> Result<Neighbor> {
        Ok(self.query_traced(flat, seed)?.0)
    }

    pub fn query_traced(&self, flat: &Flat, seed: u64) -> Result<(Neighbor, QueryTrace)> {
        check_dim(self.d, flat.dim())?;
        check_dim(self.params.k, flat.k())?;
        let mut best = self.q1_root.q1_query(flat, seed)?;
        let mut trace = QueryTrace {
            r_tilde: best.distance,
            ..QueryTrace::default()
        };
        if best.distance == 0.0 {
            return Ok((best, trace));
        }
        let r_tilde = best.distance;
        let i_star = self.i_star(r_tilde);
        trace.i_star = i_star;
        for (i, cs) in self.clusters.iter().enumerate().skip(i_star) {
            let (hit, info) = cs.query_traced(flat, r_tilde)?;
            trace.clusters_queried.push(i);
            trace.near_fallbacks += info.near_fallback as usize;
            if hit.better_than(&best) {
                best = hit;
            }
        }
        if i_star > 0 {
            trace.walk = self.walk_nodes(i_star);
            for &node in &trace.walk {
                let Some(ps) = self.q3_node(node) else { continue };
                let (hit, reported) = ps.q3_query(flat, r_tilde)?;
                trace.q3_reported += reported;
                if let Some(hit) = hit {
                    if hit.better_than(&best) {
                        best = hit;
                    }
                }
            }
        }
        Ok((best, trace))
    }

    /// Exact nearest point by linear scan.
    pub fn scan(&self, flat: &Flat) -> Neighbor {
        let mut best = Neighbor {
            index: 0,
            distance: flat.distance(&self.points[0]),
        };
        for (i, p) in self.points.iter().enumerate().skip(1) {
            let cand = Neighbor {
                index: i,
                distance: flat.distance(p),
            };
            if cand.better_than(&best) {
                best = cand;
            }
        }
        best
    }
}

fn union_members(clusters: &[ClusterStructure], leaves: usize, node: usize) -> Vec<usize> {
    let level_span = leaves >> (usize::BITS - 1 - node.leading_zeros());
    let first = (node << (level_span.trailing_zeros())) - leaves;
    let mut out: Vec<usize> = clusters
        .iter()
        .skip(first)
        .take(level_span)
        .flat_map(|c| c.members().iter().copied())
        .collect();
    out.sort_unstable();
    out
}
