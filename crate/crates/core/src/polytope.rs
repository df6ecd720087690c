//! Convex query polytopes and distance computations.
//!
//! A [`QueryPolytope`] is a bounded piece of a k-flat, stored in parametric
//! form `y = G w + g` together with halfspace constraints `a . w <= b` on the
//! parameters and the resulting vertex list. Euclidean distances to boxes
//! and points use Wolfe's minimum-norm-point method; l1 distances enumerate
//! the vertices of the arrangement of constraints and breakpoints.

use serde::{Deserialize, Serialize};

use crate::linalg::{axpy, dist_sq, dot, for_each_subset, solve_dense, Flat};

const WOLFE_MAX_MAJOR: usize = 500;
const WOLFE_TOL: f64 = 1e-13;
const WEIGHT_EPS: f64 = 1e-14;

/// Result of a minimum-norm-point computation.
#[derive(Clone, Debug)]
pub struct MinNorm {
    pub point: Vec<f64>,
    /// Certified lower bound on the norm of the true minimizer.
    pub lower_bound: f64,
}

impl MinNorm {
    pub fn norm(&self) -> f64 {
        dot(&self.point, &self.point).sqrt()
    }
}

/// Wolfe's minimum-norm-point algorithm over a convex set given by a linear
/// minimization oracle `lmo(x) = argmin_{y in set} <x, y>`.
pub fn min_norm_point(mut lmo: impl FnMut(&[f64]) -> Vec<f64>, start: Vec<f64>) -> MinNorm {
    let mut s: Vec<Vec<f64>> = vec![start.clone()];
    let mut lam = vec![1.0];
    let mut x = start;
    let mut lower_bound = 0.0f64;
    for _ in 0..WOLFE_MAX_MAJOR {
        let p = lmo(&x);
        let xx = dot(&x, &x);
        if xx == 0.0 {
            lower_bound = 0.0;
            break;
        }
        let xp = dot(&x, &p);
        lower_bound = lower_bound.max(xp / xx.sqrt());
        let scale = s.iter().map(|q| dot(q, q)).fold(dot(&p, &p), f64::max);
        if xx - xp <= WOLFE_TOL * scale {
            break;
        }
        if s.iter().any(|q| dist_sq(q, &p) <= 1e-26 * scale) {
            break;
        }
        s.push(p);
        lam.push(0.0);
        let mut stalled = false;
        loop {
            let Some(mu) = affine_minimizer(&s) else {
                stalled = true;
                break;
            };
            if mu.iter().all(|&m| m > WEIGHT_EPS) {
                lam = mu;
                x = combination(&s, &lam);
                break;
            }
            let mut theta = 1.0f64;
            for (l, m) in lam.iter().zip(&mu) {
                if *m <= WEIGHT_EPS && l - m > 0.0 {
                    theta = theta.min(l / (l - m));
                }
            }
            for (l, m) in lam.iter_mut().zip(&mu) {
                *l = (1.0 - theta) * *l + theta * m;
            }
            let mut i = 0;
            while i < s.len() {
                if lam[i] <= WEIGHT_EPS {
                    s.remove(i);
                    lam.remove(i);
                } else {
                    i += 1;
                }
            }
            if s.is_empty() {
                stalled = true;
                break;
            }
            let total: f64 = lam.iter().sum();
            lam.iter_mut().for_each(|l| *l /= total);
            x = combination(&s, &lam);
        }
        if stalled {
            break;
        }
    }
    let nx = dot(&x, &x).sqrt();
    MinNorm {
        point: x,
        lower_bound: lower_bound.clamp(0.0, nx),
    }
}

fn combination(s: &[Vec<f64>], lam: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; s[0].len()];
    for (q, l) in s.iter().zip(lam) {
        axpy(&mut x, *l, q);
    }
    x
}

/// Weights of the minimum-norm point in the affine hull of `s`.
fn affine_minimizer(s: &[Vec<f64>]) -> Option<Vec<f64>> {
    let m = s.len();
    let mut a = vec![vec![0.0; m + 1]; m + 1];
    for i in 0..m {
        for j in i..m {
            let v = dot(&s[i], &s[j]);
            a[i][j] = v;
            a[j][i] = v;
        }
        a[i][m] = 1.0;
        a[m][i] = 1.0;
    }
    let mut rhs = vec![0.0; m + 1];
    rhs[m] = 1.0;
    let sol = solve_dense(a, rhs)?;
    Some(sol[..m].to_vec())
}

/// Euclidean distance from `p` to the convex hull of `vertices`.
pub fn point_hull_distance(p: &[f64], vertices: &[Vec<f64>]) -> f64 {
    match vertices.len() {
        0 => f64::INFINITY,
        1 => dist_sq(p, &vertices[0]).sqrt(),
        2 => point_segment_distance(p, &vertices[0], &vertices[1]),
        _ => {
            let shifted: Vec<Vec<f64>> = vertices
                .iter()
                .map(|v| v.iter().zip(p).map(|(a, b)| a - b).collect())
                .collect();
            let start = shifted[0].clone();
            min_norm_point(|x| argmin_dot(&shifted, x).clone(), start).lower_bound
        }
    }
}

fn argmin_dot<'a>(points: &'a [Vec<f64>], x: &[f64]) -> &'a Vec<f64> {
    let mut best = &points[0];
    let mut bv = dot(best, x);
    for q in &points[1..] {
        let v = dot(q, x);
        if v < bv {
            bv = v;
            best = q;
        }
    }
    best
}

pub fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let ap: Vec<f64> = p.iter().zip(a).map(|(x, y)| x - y).collect();
    let len2 = dot(&ab, &ab);
    let t = if len2 > 0.0 {
        (dot(&ap, &ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ap.iter()
        .zip(&ab)
        .map(|(x, y)| (x - t * y) * (x - t * y))
        .sum::<f64>()
        .sqrt()
}

/// Lower bound (tight up to solver tolerance) on the Euclidean distance
/// between the box `[lo, hi]` and the convex hull of `vertices`.
pub fn box_hull_distance(lo: &[f64], hi: &[f64], vertices: &[Vec<f64>]) -> f64 {
    if vertices.is_empty() {
        return f64::INFINITY;
    }
    if vertices.len() == 1 {
        return point_box_distance(&vertices[0], lo, hi);
    }
    let center: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let start: Vec<f64> = center.iter().zip(&vertices[0]).map(|(c, v)| c - v).collect();
    let lmo = |x: &[f64]| -> Vec<f64> {
        // argmin over box minus hull of <x, b - v>
        let v = argmax_dot(vertices, x);
        (0..x.len())
            .map(|i| if x[i] > 0.0 { lo[i] } else { hi[i] } - v[i])
            .collect()
    };
    min_norm_point(lmo, start).lower_bound
}

fn argmax_dot<'a>(points: &'a [Vec<f64>], x: &[f64]) -> &'a Vec<f64> {
    let mut best = &points[0];
    let mut bv = dot(best, x);
    for q in &points[1..] {
        let v = dot(q, x);
        if v > bv {
            bv = v;
            best = q;
        }
    }
    best
}

pub fn point_box_distance(p: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    p.iter()
        .zip(lo.iter().zip(hi))
        .map(|(x, (a, b))| {
            let d = if x < a {
                a - x
            } else if x > b {
                x - b
            } else {
                0.0
            };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// A halfspace `normal . w <= bound` in parameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub bound: f64,
}

/// Bounded convex piece of a k-flat in R^dim.
#[derive(Clone, Debug)]
pub struct QueryPolytope {
    k: usize,
    /// k generator columns, each in R^dim.
    gens: Vec<Vec<f64>>,
    origin: Vec<f64>,
    halfspaces: Vec<Halfspace>,
    vertices_w: Vec<Vec<f64>>,
    vertices: Vec<Vec<f64>>,
}

impl QueryPolytope {
    /// The part of `flat` inside the box `[lo - pad, hi + pad]`, or `None`
    /// if they do not meet.
    pub fn from_flat_in_box(flat: &Flat, lo: &[f64], hi: &[f64], pad: f64) -> Option<Self> {
        let dim = flat.dim();
        let k = flat.k();
        let gens = flat.basis().to_vec();
        let origin = flat.offset().to_vec();
        let mut halfspaces = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            let row: Vec<f64> = gens.iter().map(|g| g[i]).collect();
            halfspaces.push(Halfspace {
                normal: row.clone(),
                bound: hi[i] + pad - origin[i],
            });
            halfspaces.push(Halfspace {
                normal: row.iter().map(|x| -x).collect(),
                bound: origin[i] - (lo[i] - pad),
            });
        }
        debug_assert!(gens.len() == k);
        Self::from_parts(k, gens, origin, halfspaces)
    }

    /// Builds from raw parts; computes vertices and drops constraints that
    /// are tight at no vertex. `None` when the region is empty.
    pub fn from_parts(k: usize, gens: Vec<Vec<f64>>, origin: Vec<f64>, halfspaces: Vec<Halfspace>) -> Option<Self> {
        let (vertices_w, halfspaces) = enumerate_vertices(k, &halfspaces)?;
        let vertices = vertices_w
            .iter()
            .map(|w| {
                let mut y = origin.clone();
                for (g, wi) in gens.iter().zip(w) {
                    axpy(&mut y, *wi, g);
                }
                y
            })
            .collect();
        Some(QueryPolytope {
            k,
            gens,
            origin,
            halfspaces,
            vertices_w,
            vertices,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn at(&self, w: &[f64]) -> Vec<f64> {
        let mut y = self.origin.clone();
        for (g, wi) in self.gens.iter().zip(w) {
            axpy(&mut y, *wi, g);
        }
        y
    }

    /// Restricts to `|<normal, y> - offset| <= half_width`.
    pub fn intersect_slab(&self, normal: &[f64], offset: f64, half_width: f64) -> Option<Self> {
        let a: Vec<f64> = self.gens.iter().map(|g| dot(normal, g)).collect();
        let c = dot(normal, &self.origin) - offset;
        let mut halfspaces = self.halfspaces.clone();
        halfspaces.push(Halfspace {
            normal: a.clone(),
            bound: half_width - c,
        });
        halfspaces.push(Halfspace {
            normal: a.iter().map(|x| -x).collect(),
            bound: half_width + c,
        });
        Self::from_parts(self.k, self.gens.clone(), self.origin.clone(), halfspaces)
    }

    /// Image under the affine map `y -> R (y - shift)`, where `rows` are the
    /// rows of `R`.
    pub fn map_affine(&self, rows: &[Vec<f64>], shift: &[f64]) -> Self {
        let gens = self
            .gens
            .iter()
            .map(|g| rows.iter().map(|r| dot(r, g)).collect())
            .collect();
        let centered: Vec<f64> = self.origin.iter().zip(shift).map(|(a, b)| a - b).collect();
        let origin: Vec<f64> = rows.iter().map(|r| dot(r, &centered)).collect();
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                let c: Vec<f64> = v.iter().zip(shift).map(|(a, b)| a - b).collect();
                rows.iter().map(|r| dot(r, &c)).collect()
            })
            .collect();
        QueryPolytope {
            k: self.k,
            gens,
            origin,
            halfspaces: self.halfspaces.clone(),
            vertices_w: self.vertices_w.clone(),
            vertices,
        }
    }

    /// Vertices restricted to the first `m` coordinates.
    pub fn leading_vertices(&self, m: usize) -> Vec<Vec<f64>> {
        self.vertices.iter().map(|v| v[..m].to_vec()).collect()
    }

    /// Euclidean distance from `p`.
    pub fn distance(&self, p: &[f64]) -> f64 {
        point_hull_distance(p, &self.vertices)
    }

    /// l1 distance from `p`, minimized over the parameter polytope.
    pub fn l1_distance(&self, p: &[f64]) -> f64 {
        if self.k == 0 {
            return self
                .vertices
                .first()
                .map_or(f64::INFINITY, |v| v.iter().zip(p).map(|(a, b)| (a - b).abs()).sum());
        }
        // The objective is piecewise linear with breakpoints where a
        // coordinate of y(w) - p vanishes; the optimum sits at a vertex of
        // the arrangement of those hyperplanes and the constraints.
        let residual: Vec<f64> = self.origin.iter().zip(p).map(|(a, b)| a - b).collect();
        let mut planes: Vec<Halfspace> = self.halfspaces.clone();
        let n_cons = planes.len();
        for (i, r) in residual.iter().enumerate() {
            let row: Vec<f64> = self.gens.iter().map(|g| g[i]).collect();
            if row.iter().any(|x| *x != 0.0) {
                planes.push(Halfspace { normal: row, bound: -r });
            }
        }
        let eval = |w: &[f64]| -> f64 {
            let y = self.at(w);
            y.iter().zip(p).map(|(a, b)| (a - b).abs()).sum()
        };
        let mut best = f64::INFINITY;
        for w in &self.vertices_w {
            best = best.min(eval(w));
        }
        let cons = &planes[..n_cons];
        let scale = constraint_scale(cons);
        for_each_subset(planes.len(), self.k, |subset| {
            if subset.iter().all(|&i| i < n_cons) {
                return; // plain vertices are already covered
            }
            if let Some(w) = solve_subset(&planes, subset) {
                if feasible(cons, &w, scale) {
                    best = best.min(eval(&w));
                }
            }
        });
        best
    }
}

fn constraint_scale(halfspaces: &[Halfspace]) -> f64 {
    halfspaces.iter().map(|h| h.bound.abs()).fold(1.0, f64::max)
}

fn feasible(halfspaces: &[Halfspace], w: &[f64], scale: f64) -> bool {
    halfspaces.iter().all(|h| dot(&h.normal, w) <= h.bound + 1e-9 * scale)
}

fn solve_subset(planes: &[Halfspace], subset: &[usize]) -> Option<Vec<f64>> {
    let a: Vec<Vec<f64>> = subset.iter().map(|&i| planes[i].normal.clone()).collect();
    let b: Vec<f64> = subset.iter().map(|&i| planes[i].bound).collect();
    solve_dense(a, b)
}

/// Vertices of `{w : a.w <= b}` and the constraints tight at some vertex.
fn enumerate_vertices(k: usize, halfspaces: &[Halfspace]) -> Option<(Vec<Vec<f64>>, Vec<Halfspace>)> {
    let scale = constraint_scale(halfspaces);
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    for_each_subset(halfspaces.len(), k, |subset| {
        let Some(w) = solve_subset(halfspaces, subset) else {
            return;
        };
        if !feasible(halfspaces, &w, scale) {
            return;
        }
        let tol = 1e-18 * scale * scale;
        if !vertices.iter().any(|v| dist_sq(v, &w) <= tol) {
            vertices.push(w);
        }
    });
    if vertices.is_empty() {
        return None;
    }
    let kept: Vec<Halfspace> = halfspaces
        .iter()
        .filter(|h| {
            let nn = dot(&h.normal, &h.normal).sqrt();
            nn > 0.0
                && vertices
                    .iter()
                    .any(|v| (h.bound - dot(&h.normal, v)).abs() <= 1e-9 * scale)
        })
        .cloned()
        .collect();
    Some((vertices, kept))
}
