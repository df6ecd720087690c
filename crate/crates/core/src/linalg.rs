//! Vector and affine-flat geometry.
//!
//! A [`Flat`] stores an orthonormal basis of its direction space together
//! with the unique point of the flat closest to the origin, so the offset is
//! always orthogonal to the span. Every other module in the crate speaks in
//! terms of these flats: query objects, cluster flats, sub-flats of a query
//! and projected flats are all [`Flat`]s.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A point in R^d.
pub type Point = Vec<f64>;

/// Residual norm below which a vector counts as dependent, relative to the
/// largest input norm.
const DEPENDENCE_TOL: f64 = 1e-12;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[inline]
pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
///
/// Vectors whose residual falls below `1e-12` times the largest input norm
/// are dropped, so the result spans the same space with `len() == rank`.
pub fn orthonormalize(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let scale = vectors.iter().map(|v| norm(v)).fold(0.0, f64::max);
    if scale == 0.0 {
        return Vec::new();
    }
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut w = v.clone();
        for _pass in 0..2 {
            for q in &out {
                let c = dot(q, &w);
                axpy(&mut w, -c, q);
            }
        }
        let n = norm(&w);
        if n < DEPENDENCE_TOL * scale {
            continue;
        }
        w.iter_mut().for_each(|x| *x /= n);
        out.push(w);
    }
    out
}

/// A k-dimensional affine subspace of R^d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flat {
    basis: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

impl Flat {
    /// Flat through `through` spanned by `directions`.
    ///
    /// Fails with [`Error::DegenerateInput`] when the directions are linearly
    /// dependent.
    pub fn new(directions: &[Vec<f64>], through: &[f64]) -> Result<Self> {
        for dir in directions {
            check_dim(through.len(), dir.len())?;
        }
        let basis = orthonormalize(directions);
        if basis.len() < directions.len() {
            return Err(Error::DegenerateInput(format!(
                "{} directions span only a {}-dimensional space",
                directions.len(),
                basis.len()
            )));
        }
        Ok(Self::from_orthonormal(basis, through))
    }

    /// Builds a flat from columns that are already orthonormal.
    pub fn from_orthonormal(basis: Vec<Vec<f64>>, through: &[f64]) -> Self {
        let mut offset = through.to_vec();
        for _pass in 0..2 {
            for b in &basis {
                let c = dot(b, &offset);
                axpy(&mut offset, -c, b);
            }
        }
        Flat { basis, offset }
    }

    /// The 0-flat consisting of a single point.
    pub fn point(p: &[f64]) -> Self {
        Flat {
            basis: Vec::new(),
            offset: p.to_vec(),
        }
    }

    /// Affine hull of `k + 1` affinely independent points.
    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyInput)?.as_ref();
        let diffs: Vec<Vec<f64>> = points[1..]
            .iter()
            .map(|p| {
                check_dim(first.len(), p.as_ref().len())?;
                Ok(sub(p.as_ref(), first))
            })
            .collect::<Result<_>>()?;
        let basis = orthonormalize(&diffs);
        if basis.len() < diffs.len() {
            return Err(Error::DegenerateInput(format!(
                "{} points have an affine hull of dimension {}",
                points.len(),
                basis.len()
            )));
        }
        Ok(Self::from_orthonormal(basis, first))
    }

    /// Ambient dimension d.
    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    /// Intrinsic dimension k.
    pub fn k(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// Point of the flat closest to the origin.
    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// Coordinates of the projection of `p` in this flat's basis.
    pub fn coords(&self, p: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|b| dot(b, p)).collect()
    }

    /// The point `offset + basis * w`.
    pub fn at(&self, w: &[f64]) -> Vec<f64> {
        let mut x = self.offset.clone();
        for (b, wi) in self.basis.iter().zip(w) {
            axpy(&mut x, *wi, b);
        }
        x
    }

    /// Orthogonal projection of `p` onto the flat.
    pub fn project(&self, p: &[f64]) -> Vec<f64> {
        self.at(&self.coords(p))
    }

    /// Component of `p - offset` orthogonal to the flat's directions.
    pub fn residual(&self, p: &[f64]) -> Vec<f64> {
        let mut r = sub(p, &self.offset);
        for b in &self.basis {
            let c = dot(b, &r);
            axpy(&mut r, -c, b);
        }
        r
    }

    pub fn distance_sq(&self, p: &[f64]) -> f64 {
        // ||p - o||^2 - sum <b, p - o>^2 cancels badly far from the flat,
        // so the residual is formed explicitly.
        let r = self.residual(p);
        dot(&r, &r)
    }

    /// Euclidean distance from `p`; dimensions must agree.
    pub fn distance(&self, p: &[f64]) -> f64 {
        self.distance_sq(p).sqrt()
    }
}

/// Distance from a point to a flat.
pub fn dist_point_flat(p: &[f64], flat: &Flat) -> Result<f64> {
    check_dim(flat.dim(), p.len())?;
    Ok(flat.distance(p))
}

/// Singular value decomposition `M = U diag(sigma) V^T` of a small square
/// matrix. Matrices are stored row-major as `Vec<Vec<f64>>`.
#[derive(Clone, Debug)]
pub struct SmallSvd {
    pub u: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

const JACOBI_MAX_SWEEPS: usize = 64;
const JACOBI_OFF_TOL: f64 = 1e-14;

/// Cyclic two-sided Jacobi SVD for k x k matrices (k <= 16 in practice).
///
/// Each (p, q) step first symmetrizes the 2x2 pivot block with a left
/// rotation and then diagonalizes it with a symmetric Jacobi rotation
/// applied on both sides. Singular values come back non-negative and in
/// descending order.
pub fn svd_small(m: &[Vec<f64>]) -> Result<SmallSvd> {
    let k = m.len();
    for row in m {
        check_dim(k, row.len())?;
    }
    let mut b: Vec<Vec<f64>> = m.to_vec();
    let mut u = identity(k);
    let mut v = identity(k);
    let scale = m.iter().flat_map(|r| r.iter()).fold(0.0f64, |acc, x| acc.max(x.abs()));
    let tol = JACOBI_OFF_TOL * scale.max(f64::MIN_POSITIVE);

    let mut converged = k <= 1;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let off = off_diagonal_max(&b);
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..k {
            for q in (p + 1)..k {
                if b[p][q].abs() <= tol && b[q][p].abs() <= tol {
                    continue;
                }
                jacobi_pair(&mut b, &mut u, &mut v, p, q);
            }
        }
    }
    if !converged
        && off_diagonal_max(&b) > tol {
            return Err(Error::NoConvergence(JACOBI_MAX_SWEEPS));
        }

    let mut sigma: Vec<f64> = (0..k).map(|i| b[i][i]).collect();
    for i in 0..k {
        if sigma[i] < 0.0 {
            sigma[i] = -sigma[i];
            for row in u.iter_mut() {
                row[i] = -row[i];
            }
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));
    let permute = |mat: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        mat.iter().map(|row| order.iter().map(|&j| row[j]).collect()).collect()
    };
    Ok(SmallSvd {
        u: permute(&u),
        sigma: order.iter().map(|&j| sigma[j]).collect(),
        v: permute(&v),
    })
}

fn identity(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn off_diagonal_max(b: &[Vec<f64>]) -> f64 {
    let mut off = 0.0f64;
    for (i, row) in b.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            if i != j {
                off = off.max(x.abs());
            }
        }
    }
    off
}

// Invariant maintained throughout: M = U * B * V^T.
fn jacobi_pair(b: &mut [Vec<f64>], u: &mut [Vec<f64>], v: &mut [Vec<f64>], p: usize, q: usize) {
    let k = b.len();
    let (a, bb, c, d) = (b[p][p], b[p][q], b[q][p], b[q][q]);

    // Left rotation J1 = [[c1, s1], [-s1, c1]] making the block symmetric.
    let phi = (c - bb).atan2(a + d);
    let (s1, c1) = phi.sin_cos();
    for col in 0..k {
        let (xp, xq) = (b[p][col], b[q][col]);
        b[p][col] = c1 * xp + s1 * xq;
        b[q][col] = -s1 * xp + c1 * xq;
    }
    // U <- U * J1^T
    for row in u.iter_mut() {
        let (xp, xq) = (row[p], row[q]);
        row[p] = c1 * xp + s1 * xq;
        row[q] = -s1 * xp + c1 * xq;
    }

    // Symmetric Jacobi rotation J2 = [[cs, sn], [-sn, cs]].
    let x = b[p][p];
    let y = 0.5 * (b[p][q] + b[q][p]);
    let z = b[q][q];
    if y == 0.0 {
        return;
    }
    let zeta = (z - x) / (2.0 * y);
    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
    let t = if zeta == 0.0 { 1.0 } else { t };
    let cs = 1.0 / (1.0 + t * t).sqrt();
    let sn = cs * t;
    // B <- J2^T B J2
    for col in 0..k {
        let (xp, xq) = (b[p][col], b[q][col]);
        b[p][col] = cs * xp - sn * xq;
        b[q][col] = sn * xp + cs * xq;
    }
    for row in b.iter_mut() {
        let (xp, xq) = (row[p], row[q]);
        row[p] = cs * xp - sn * xq;
        row[q] = sn * xp + cs * xq;
    }
    for mat in [u, v] {
        for row in mat.iter_mut() {
            let (xp, xq) = (row[p], row[q]);
            row[p] = cs * xp - sn * xq;
            row[q] = sn * xp + cs * xq;
        }
    }
    b[p][q] = 0.0;
    b[q][p] = 0.0;
}

/// Joint frame of a cluster flat K and a query flat F of equal dimension.
///
/// With `A = A'U` and `B = B'V` from the SVD of `A'^T B'`, the distance from
/// F to a point `A u + a` of K separates into per-axis terms
/// `sum (1 - sigma_i^2) (u - u_F)_i^2 + d(F, K)^2`, and symmetrically for
/// points of F.
#[derive(Clone, Debug)]
pub struct FlatPairFrame {
    pub singular_values: Vec<f64>,
    /// Columns of `A = A'U`.
    pub basis_k: Vec<Vec<f64>>,
    /// Columns of `B = B'V`.
    pub basis_f: Vec<Vec<f64>>,
    pub offset_k: Vec<f64>,
    pub offset_f: Vec<f64>,
    /// `U`, expressing the rotated K axes in K's stored basis.
    pub rot_k: Vec<Vec<f64>>,
    /// `V`, expressing the rotated F axes in F's stored basis.
    pub rot_f: Vec<Vec<f64>>,
    pub u_f: Vec<f64>,
    pub v_k: Vec<f64>,
    pub dist_kf: f64,
}

impl FlatPairFrame {
    pub fn k(&self) -> usize {
        self.singular_values.len()
    }

    /// `A u + a`
    pub fn point_on_k(&self, u: &[f64]) -> Vec<f64> {
        combine(&self.basis_k, u, &self.offset_k)
    }

    /// `B v + b`
    pub fn point_on_f(&self, v: &[f64]) -> Vec<f64> {
        combine(&self.basis_f, v, &self.offset_f)
    }

    /// d(F, Au + a) through the separated formula.
    pub fn dist_f_from_k_coords(&self, u: &[f64]) -> f64 {
        self.separated(u, &self.u_f)
    }

    /// d(Bv + b, K) through the separated formula.
    pub fn dist_k_from_f_coords(&self, v: &[f64]) -> f64 {
        self.separated(v, &self.v_k)
    }

    fn separated(&self, x: &[f64], center: &[f64]) -> f64 {
        let mut s = self.dist_kf * self.dist_kf;
        for ((sig, xi), ci) in self.singular_values.iter().zip(x).zip(center) {
            s += ((1.0 - sig) * (1.0 + sig)).max(0.0) * (xi - ci) * (xi - ci);
        }
        s.sqrt()
    }
}

fn combine(basis: &[Vec<f64>], w: &[f64], offset: &[f64]) -> Vec<f64> {
    let mut x = offset.to_vec();
    for (b, wi) in basis.iter().zip(w) {
        axpy(&mut x, *wi, b);
    }
    x
}

/// Below this `1 - sigma^2` an axis pair counts as parallel when solving
/// for the closest pair.
const PARALLEL_DET: f64 = 1e-14;

/// Computes the SVD-aligned frame of two flats of equal dimension.
pub fn align_flats(cluster_flat: &Flat, query: &Flat) -> Result<FlatPairFrame> {
    check_dim(cluster_flat.dim(), query.dim())?;
    check_dim(cluster_flat.k(), query.k())?;
    let k = cluster_flat.k();
    let a_prime = cluster_flat.basis();
    let b_prime = query.basis();

    let m: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| dot(&a_prime[i], &b_prime[j])).collect())
        .collect();
    let svd = svd_small(&m)?;

    let rotate = |basis: &[Vec<f64>], rot: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..k)
            .map(|j| {
                let mut col = vec![0.0; cluster_flat.dim()];
                for (i, bi) in basis.iter().enumerate() {
                    axpy(&mut col, rot[i][j], bi);
                }
                col
            })
            .collect()
    };
    let basis_k = rotate(a_prime, &svd.u);
    let basis_f = rotate(b_prime, &svd.v);
    let offset_k = cluster_flat.offset().to_vec();
    let offset_f = query.offset().to_vec();

    // In the aligned frame the closest-pair normal equations split into
    // 2x2 blocks [1, -s; -s, 1] per axis.
    let delta = sub(&offset_f, &offset_k);
    let mut u_f = vec![0.0; k];
    let mut v_k = vec![0.0; k];
    for i in 0..k {
        let (alpha, beta) = (dot(&basis_k[i], &delta), dot(&basis_f[i], &delta));
        let sig = svd.sigma[i];
        let det = (1.0 - sig) * (1.0 + sig);
        if det <= PARALLEL_DET {
            u_f[i] = alpha / 2.0;
            v_k[i] = -beta / 2.0;
        } else {
            u_f[i] = (alpha - sig * beta) / det;
            v_k[i] = (sig * alpha - beta) / det;
        }
    }
    let dist_kf = dist(&combine(&basis_k, &u_f, &offset_k), &combine(&basis_f, &v_k, &offset_f));

    Ok(FlatPairFrame {
        singular_values: svd.sigma,
        basis_k,
        basis_f,
        offset_k,
        offset_f,
        rot_k: svd.u,
        rot_f: svd.v,
        u_f,
        v_k,
        dist_kf,
    })
}

/// Gaussian elimination with partial pivoting. Returns `None` for a
/// numerically singular system.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flat_map(|r| r.iter()).fold(0.0f64, |acc, x| acc.max(x.abs()));
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-300_f64.max(scale * 1e-15) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for c in (row + 1)..n {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

/// Determinant of a small square matrix by elimination.
pub fn determinant(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = match (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())) {
            Some(p) => p,
            None => return 0.0,
        };
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(col, pivot);
            det = -det;
        }
        det *= a[col][col];
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
        }
    }
    det
}

/// Largest distance from the points to the flat.
pub fn max_distance<P: AsRef<[f64]>>(points: &[P], flat: &Flat) -> f64 {
    points.iter().map(|p| flat.distance(p.as_ref())).fold(0.0, f64::max)
}

/// Replaces an arbitrary k-flat by the affine hull of k + 1 input points
/// whose maximum point distance is at most `(2k + 1)` times that of `flat`
/// (for k >= 1).
///
/// The anchor is the point with the smallest first coordinate along the
/// flat; the other k points maximize the absolute determinant of their
/// projected offsets from the anchor's projection.
pub fn discretize_flat<P: AsRef<[f64]>>(points: &[P], flat: &Flat) -> Result<Flat> {
    let k = flat.k();
    if points.len() < k + 1 {
        return Err(Error::InvalidParams(format!(
            "need at least {} points, got {}",
            k + 1,
            points.len()
        )));
    }
    for p in points {
        check_dim(flat.dim(), p.as_ref().len())?;
    }
    let coords: Vec<Vec<f64>> = points.iter().map(|p| flat.coords(p.as_ref())).collect();
    if k == 0 {
        let nearest = (0..points.len())
            .min_by(|&i, &j| {
                flat.distance_sq(points[i].as_ref())
                    .total_cmp(&flat.distance_sq(points[j].as_ref()))
            })
            .expect("non-empty");
        return Ok(Flat::point(points[nearest].as_ref()));
    }
    let anchor = (0..points.len())
        .min_by(|&i, &j| coords[i][0].total_cmp(&coords[j][0]).then(i.cmp(&j)))
        .expect("non-empty");
    let rel: Vec<Vec<f64>> = coords.iter().map(|c| sub(c, &coords[anchor])).collect();

    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_subset(points.len(), k, |subset| {
        let mat: Vec<Vec<f64>> = subset.iter().map(|&i| rel[i].clone()).collect();
        let det = determinant(mat).abs();
        if best.as_ref().is_none_or(|(b, _)| det > *b) {
            best = Some((det, subset.to_vec()));
        }
    });
    let (det, chosen) = best.expect("at least one subset");
    let span_scale = rel.iter().map(|r| norm(r)).fold(0.0, f64::max);
    if det <= 1e-12 * span_scale.powi(k as i32).max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateInput(
            "projections onto the flat do not span it".into(),
        ));
    }
    let mut hull: Vec<&[f64]> = vec![points[anchor].as_ref()];
    hull.extend(chosen.iter().map(|&i| points[i].as_ref()));
    Flat::from_points(&hull)
}

/// Calls `f` with every size-`k` subset of `0..n` in lexicographic order.
pub fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] < i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in (i + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Binomial coefficient as f64 (exact for the small values used here).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn random_flat(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Flat {
        let dirs: Vec<Vec<f64>> = (0..k).map(|_| gaussian_vec(rng, d)).collect();
        Flat::new(&dirs, &gaussian_vec(rng, d)).unwrap()
    }

    #[test]
    fn line_through_origin_along_e1() {
        let f = Flat::from_points(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(f.k(), 1);
        assert!((f.basis()[0][0] - 1.0).abs() < 1e-15);
        assert!(f.offset().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn translated_line_keeps_offset() {
        let f = Flat::from_points(&[vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 1.0]]).unwrap();
        assert!((f.basis()[0][0] - 1.0).abs() < 1e-15);
        assert_eq!(f.offset(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn random_plane_contains_generators() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..3).map(|_| gaussian_vec(&mut rng, 5)).collect();
        let f = Flat::from_points(&pts).unwrap();
        for p in &pts {
            assert!(dist_point_flat(p, &f).unwrap() <= 1e-10);
        }
        for b in f.basis() {
            assert!(dot(b, f.offset()).abs() < 1e-10);
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let err = Flat::from_points(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput(_)));
        let err = Flat::from_points(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput(_)));
    }

    #[test]
    fn three_four_five() {
        let x_axis = Flat::from_points(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        assert!((dist_point_flat(&[0.0, 3.0, 4.0], &x_axis).unwrap() - 5.0).abs() < 1e-15);
        assert!(dist_point_flat(&[7.0, 0.0, 0.0], &x_axis).unwrap() < 1e-12);
        assert!(matches!(
            dist_point_flat(&[0.0, 1.0], &x_axis),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn distance_matches_grid_minimum() {
        // brute-force minimization over a dense grid of flat coordinates
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let f = random_flat(&mut rng, 10, 2);
            let p = gaussian_vec(&mut rng, 10);
            let w0 = f.coords(&p);
            let (steps, half) = (400, 2.0);
            let h = 2.0 * half / steps as f64;
            let mut best = f64::INFINITY;
            for i in 0..=steps {
                for j in 0..=steps {
                    let w = [w0[0].round() - half + i as f64 * h, w0[1].round() - half + j as f64 * h];
                    best = best.min(dist(&p, &f.at(&w)));
                }
            }
            let exact = f.distance(&p);
            assert!(exact <= best + 1e-12);
            // grid resolution bound: half-diagonal of a cell
            assert!(best - exact <= h, "{best} vs {exact}");
        }
    }

    #[test]
    fn distance_independent_of_basis_choice() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 6;
        let dirs: Vec<Vec<f64>> = (0..3).map(|_| gaussian_vec(&mut rng, d)).collect();
        let through = gaussian_vec(&mut rng, d);
        let f1 = Flat::new(&dirs, &through).unwrap();
        let mixed: Vec<Vec<f64>> = vec![
            add(&dirs[0], &dirs[1]),
            sub(&dirs[2], &dirs[0]),
            add(&scale(&dirs[1], 3.0), &dirs[2]),
        ];
        let f2 = Flat::new(&mixed, &add(&through, &dirs[1])).unwrap();
        for _ in 0..20 {
            let p = gaussian_vec(&mut rng, d);
            assert!((f1.distance(&p) - f2.distance(&p)).abs() < 1e-10);
        }
    }

    fn reconstruct(svd: &SmallSvd) -> Vec<Vec<f64>> {
        let k = svd.sigma.len();
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| (0..k).map(|l| svd.u[i][l] * svd.sigma[l] * svd.v[j][l]).sum())
                    .collect()
            })
            .collect()
    }

    fn assert_orthogonal(m: &[Vec<f64>]) {
        let k = m.len();
        for i in 0..k {
            for j in 0..k {
                let s: f64 = (0..k).map(|l| m[l][i] * m[l][j]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((s - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn svd_of_diagonal() {
        let svd = svd_small(&[vec![0.6, 0.0], vec![0.0, 0.3]]).unwrap();
        assert_eq!(svd.sigma, vec![0.6, 0.3]);
        assert_eq!(svd.u, identity(2));
        assert_eq!(svd.v, identity(2));
    }

    #[test]
    fn svd_of_zero() {
        let svd = svd_small(&vec![vec![0.0; 3]; 3]).unwrap();
        assert_eq!(svd.sigma, vec![0.0; 3]);
        assert_orthogonal(&svd.u);
    }

    #[test]
    fn svd_reconstructs_and_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for k in 1..=8 {
            for _ in 0..20 {
                let m: Vec<Vec<f64>> = (0..k).map(|_| gaussian_vec(&mut rng, k)).collect();
                let svd = svd_small(&m).unwrap();
                let r = reconstruct(&svd);
                let mmax = m.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
                for i in 0..k {
                    for j in 0..k {
                        assert!((r[i][j] - m[i][j]).abs() <= 1e-10 * mmax.max(1.0));
                    }
                }
                assert_orthogonal(&svd.u);
                assert_orthogonal(&svd.v);
                assert!(svd.sigma.windows(2).all(|w| w[0] >= w[1]));
                let nm = nalgebra::DMatrix::from_fn(k, k, |i, j| m[i][j]);
                let mut reference: Vec<f64> = nm.singular_values().iter().copied().collect();
                reference.sort_by(|a, b| b.total_cmp(a));
                for (a, b) in svd.sigma.iter().zip(&reference) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn svd_rank_deficient() {
        let m = vec![vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0], vec![1.0, 0.0, 1.0]];
        let svd = svd_small(&m).unwrap();
        assert!(svd.sigma[2].abs() < 1e-12);
        assert_orthogonal(&svd.u);
        let r = reconstruct(&svd);
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[i][j] - m[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cosines_of_orthonormal_bases_are_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let a = random_flat(&mut rng, 7, 3);
            let b = random_flat(&mut rng, 7, 3);
            let m: Vec<Vec<f64>> = (0..3)
                .map(|i| (0..3).map(|j| dot(&a.basis()[i], &b.basis()[j])).collect())
                .collect();
            let svd = svd_small(&m).unwrap();
            assert!(svd.sigma.iter().all(|s| *s <= 1.0 + 1e-10 && *s >= 0.0));
        }
    }

    #[test]
    fn parallel_lines_frame() {
        let k = Flat::from_points(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let f = Flat::from_points(&[vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 1.0]]).unwrap();
        let frame = align_flats(&k, &f).unwrap();
        assert!((frame.singular_values[0] - 1.0).abs() < 1e-12);
        assert!((frame.dist_kf - 1.0).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_lines_frame() {
        let k = Flat::from_points(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let f = Flat::from_points(&[vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]]).unwrap();
        let frame = align_flats(&k, &f).unwrap();
        assert!(frame.singular_values[0].abs() < 1e-12);
        assert!((frame.dist_kf - 1.0).abs() < 1e-12);
        assert!(frame.u_f[0].abs() < 1e-12);
        assert!(frame.v_k[0].abs() < 1e-12);
    }

    #[test]
    fn frame_distance_matches_grid_and_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let kf = random_flat(&mut rng, 8, 2);
        let ff = random_flat(&mut rng, 8, 2);
        let frame = align_flats(&kf, &ff).unwrap();

        // grid brute force on the 4-dimensional (u, v) space around the solution
        let steps = 24;
        let half = 0.6;
        let h = 2.0 * half / steps as f64;
        let mut best = f64::INFINITY;
        for a in 0..=steps {
            for b in 0..=steps {
                for c in 0..=steps {
                    for e in 0..=steps {
                        let u = [frame.u_f[0] - half + a as f64 * h, frame.u_f[1] - half + b as f64 * h];
                        let v = [frame.v_k[0] - half + c as f64 * h, frame.v_k[1] - half + e as f64 * h];
                        best = best.min(dist(&frame.point_on_k(&u), &frame.point_on_f(&v)));
                    }
                }
            }
        }
        assert!(frame.dist_kf <= best + 1e-12);
        assert!(best - frame.dist_kf <= 2.0 * h);

        for _ in 0..100 {
            let u = gaussian_vec(&mut rng, 2);
            let direct = ff.distance(&frame.point_on_k(&u));
            let formula = frame.dist_f_from_k_coords(&u);
            assert!((direct * direct - formula * formula).abs() <= 1e-9 * direct * direct);
            let v = gaussian_vec(&mut rng, 2);
            let direct = kf.distance(&frame.point_on_f(&v));
            let formula = frame.dist_k_from_f_coords(&v);
            assert!((direct * direct - formula * formula).abs() <= 1e-9 * direct * direct);
        }
    }

    #[test]
    fn residual_columns_are_orthogonal_with_expected_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let kf = random_flat(&mut rng, 9, 3);
            let ff = random_flat(&mut rng, 9, 3);
            let frame = align_flats(&kf, &ff).unwrap();
            let perp: Vec<Vec<f64>> = frame
                .basis_k
                .iter()
                .map(|a| {
                    let mut r = a.clone();
                    for b in &frame.basis_f {
                        axpy(&mut r, -dot(b, a), b);
                    }
                    r
                })
                .collect();
            for i in 0..3 {
                let s = frame.singular_values[i];
                assert!((dot(&perp[i], &perp[i]) - (1.0 - s * s)).abs() < 1e-9);
                for j in (i + 1)..3 {
                    assert!(dot(&perp[i], &perp[j]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn mismatched_flat_dimensions_are_rejected() {
        let a = Flat::point(&[0.0, 0.0]);
        let b = Flat::from_points(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(align_flats(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn subsets_enumerate_in_order() {
        let mut seen = Vec::new();
        for_each_subset(4, 2, |s| seen.push(s.to_vec()));
        assert_eq!(
            seen,
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        let mut count = 0;
        for_each_subset(6, 0, |_| count += 1);
        assert_eq!(count, 1);
        assert_eq!(binomial(50, 3), 19600.0);
    }

    #[test]
    fn discretized_flat_within_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in 1..=3 {
            for _ in 0..20 {
                let f = random_flat(&mut rng, 6, k);
                let pts: Vec<Vec<f64>> = (0..12)
                    .map(|_| {
                        let w = gaussian_vec(&mut rng, k);
                        add(&f.at(&scale(&w, 3.0)), &scale(&gaussian_vec(&mut rng, 6), 0.2))
                    })
                    .collect();
                let g = discretize_flat(&pts, &f).unwrap();
                assert!(max_distance(&pts, &g) <= (2 * k + 1) as f64 * max_distance(&pts, &f) + 1e-9);
            }
        }
    }
}
