//! Random projections into a constant dimension feeding the low-dimensional
//! reporting structure.
//!
//! Q1 queries return an `n^t`-approximate nearest neighbor of a flat; Q3
//! queries return the exact nearest neighbor among points within `alpha`
//! on a cluster-free subset. Both boost their success probability with a
//! few independent projections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ann::Neighbor;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{add, dot, orthonormalize, Flat};
use crate::lowdim::{SearchStructure, DEFAULT_BRANCHING};

pub const DEFAULT_REPEATS: usize = 3;

/// `ceil(2/t) + 2`
pub fn projected_dim(t: f64) -> usize {
    (2.0 / t).ceil() as usize + 2
}

/// A d'×d matrix with orthonormal rows scaled by `sqrt(d / (4 d'))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomProjection {
    pub matrix: Vec<Vec<f64>>,
    pub d: usize,
    pub d_prime: usize,
    pub seed: u64,
}

pub fn make_projection(d: usize, t: f64, seed: u64) -> Result<RandomProjection> {
    RandomProjection::new(d, t, seed)
}

impl RandomProjection {
    pub fn new(d: usize, t: f64, seed: u64) -> Result<Self> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::InvalidParams(format!("t = {t} outside (0, 1]")));
        }
        let d_prime = projected_dim(t);
        if d_prime >= d {
            return Err(Error::InvalidParams(format!(
                "projected dimension {d_prime} is not below d = {d}"
            )));
        }
        Ok(Self::with_dims(d, d_prime, seed))
    }

    /// Random projection with an explicit target dimension `d_prime <= d`.
    pub fn with_dims(d: usize, d_prime: usize, seed: u64) -> Self {
        assert!(d_prime <= d && d_prime > 0, "need 0 < d' <= d");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (d as f64 / (4.0 * d_prime as f64)).sqrt();
        loop {
            let rows: Vec<Vec<f64>> = (0..d_prime)
                .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let q = orthonormalize(&rows);
            if q.len() == d_prime {
                let matrix = q.into_iter().map(|r| r.into_iter().map(|x| x * s).collect()).collect();
                return RandomProjection {
                    matrix,
                    d,
                    d_prime,
                    seed,
                };
            }
        }
    }

    /// `I_d / 2`, used when the target dimension would not be smaller.
    pub fn identity(d: usize) -> Self {
        let matrix = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 0.5 } else { 0.0 }).collect())
            .collect();
        RandomProjection {
            matrix,
            d,
            d_prime: d,
            seed: 0,
        }
    }

    /// Squared row scale, `d / (4 d')`.
    pub fn scale_sq(&self) -> f64 {
        self.d as f64 / (4.0 * self.d_prime as f64)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.iter().map(|row| dot(row, x)).collect()
    }

    /// Image of a flat, built from its k+1 affine generators.
    pub fn project_flat(&self, flat: &Flat) -> Result<Flat> {
        check_dim(self.d, flat.dim())?;
        let mut gens = vec![self.apply(flat.offset())];
        for b in flat.basis() {
            gens.push(self.apply(&add(flat.offset(), b)));
        }
        Flat::from_points(&gens)
            .map_err(|_| Error::DegenerateInput(format!("projection lost rank on a {}-flat", flat.k())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionKind {
    Q1,
    Q3,
}

/// One projection and the search structure over the projected points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjectedCopy {
    pub proj: RandomProjection,
    pub search: SearchStructure,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjectionStructure {
    kind: ProjectionKind,
    k: usize,
    copies: Vec<ProjectedCopy>,
    /// Global index of each stored point.
    original: Vec<usize>,
    points: Vec<Vec<f64>>,
}

impl ProjectionStructure {
    /// Builds over `data[i]` for every `i` in `subset`. With d' >= d the
    /// projection is `I_d / 2` and a single copy is kept.
    pub fn build(
        data: &[Vec<f64>],
        subset: &[usize],
        k: usize,
        t: f64,
        repeats: usize,
        kind: ProjectionKind,
        seed: u64,
    ) -> Result<Self> {
        let first = subset.first().ok_or(Error::EmptyInput)?;
        let d = data.get(*first).ok_or(Error::EmptyInput)?.len();
        if repeats == 0 {
            return Err(Error::InvalidParams("repeats must be positive".into()));
        }
        let mut points = Vec::with_capacity(subset.len());
        for &i in subset {
            let p = data
                .get(i)
                .ok_or_else(|| Error::InvalidParams(format!("index {i} out of range")))?;
            check_dim(d, p.len())?;
            points.push(p.clone());
        }
        let projections: Vec<RandomProjection> = if projected_dim(t) >= d {
            vec![RandomProjection::identity(d)]
        } else {
            (0..repeats)
                .map(|r| RandomProjection::new(d, t, seed.wrapping_add(r as u64)))
                .collect::<Result<_>>()?
        };
        let mut copies = Vec::with_capacity(projections.len());
        for (r, proj) in projections.into_iter().enumerate() {
            let projected: Vec<Vec<f64>> = points.iter().map(|p| proj.apply(p)).collect();
            let search = SearchStructure::build(&projected, k, DEFAULT_BRANCHING, seed ^ (r as u64 + 1) << 32)?;
            copies.push(ProjectedCopy { proj, search });
        }
        Ok(ProjectionStructure {
            kind,
            k,
            copies,
            original: subset.to_vec(),
            points,
        })
    }

    pub fn kind(&self) -> ProjectionKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }

    pub fn copies(&self) -> &[ProjectedCopy] {
        &self.copies
    }

    /// Global indices of the stored points.
    pub fn original(&self) -> &[usize] {
        &self.original
    }

    fn check(&self, flat: &Flat) -> Result<()> {
        check_dim(self.points[0].len(), flat.dim())?;
        check_dim(self.k, flat.k())
    }

    fn neighbor(&self, flat: &Flat, local: usize) -> Neighbor {
        Neighbor {
            index: self.original[local],
            distance: flat.distance(&self.points[local]),
        }
    }

    /// Best over the copies of the sampled approximate neighbor in
    /// projected space, with its true distance.
    pub fn q1_query(&self, flat: &Flat, seed: u64) -> Result<Neighbor> {
        self.check(flat)?;
        let mut best: Option<Neighbor> = None;
        for (r, copy) in self.copies.iter().enumerate() {
            let image = copy.proj.project_flat(flat)?;
            let (hit, _) = copy.search.query_ann_sampled(&image, seed.wrapping_add(r as u64))?;
            best = Neighbor::best(best, Some(self.neighbor(flat, hit.index)));
            if best.is_some_and(|b| b.distance == 0.0) {
                break;
            }
        }
        Ok(best.expect("at least one copy"))
    }

    /// Nearest point by true distance among those reported within `alpha`
    /// of the projected flat in any copy, and the largest reported set.
    pub fn q3_query(&self, flat: &Flat, alpha: f64) -> Result<(Option<Neighbor>, usize)> {
        self.check(flat)?;
        let mut best: Option<Neighbor> = None;
        let mut reported = 0;
        for copy in &self.copies {
            let image = copy.proj.project_flat(flat)?;
            let ids = copy.search.query_near(&image, alpha)?;
            reported = reported.max(ids.len());
            for local in ids {
                best = Neighbor::best(best, Some(self.neighbor(flat, local)));
            }
        }
        Ok((best, reported))
    }
}

pub fn q1_query(ps: &ProjectionStructure, flat: &Flat, seed: u64) -> Result<Neighbor> {
    ps.q1_query(flat, seed)
}

pub fn q3_query(ps: &ProjectionStructure, flat: &Flat, alpha: f64) -> Result<(Option<Neighbor>, usize)> {
    ps.q3_query(flat, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gauss(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn random_flat(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Flat {
        let dirs: Vec<Vec<f64>> = (0..k).map(|_| gauss(rng, d)).collect();
        Flat::new(&dirs, &gauss(rng, d)).unwrap()
    }

    fn oracle(pts: &[Vec<f64>], f: &Flat) -> (usize, f64) {
        pts.iter()
            .enumerate()
            .map(|(i, p)| (i, f.distance(p)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
    }

    #[test]
    fn gram_is_scaled_identity() {
        let m = make_projection(64, 1.0 / 21.0, 9).unwrap();
        assert_eq!(m.d_prime, 44);
        for i in 0..44 {
            for j in 0..44 {
                let want = if i == j { 64.0 / 176.0 } else { 0.0 };
                assert!((dot(&m.matrix[i], &m.matrix[j]) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_same_matrix() {
        assert_eq!(
            make_projection(64, 1.0 / 21.0, 5).unwrap(),
            make_projection(64, 1.0 / 21.0, 5).unwrap()
        );
        assert_ne!(
            make_projection(64, 1.0 / 21.0, 5).unwrap(),
            make_projection(64, 1.0 / 21.0, 6).unwrap()
        );
    }

    #[test]
    fn target_dimension_must_be_smaller() {
        assert!(matches!(
            make_projection(44, 1.0 / 21.0, 0),
            Err(Error::InvalidParams(_))
        ));
        assert!(matches!(
            make_projection(32, 1.0 / 21.0, 0),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn squared_norm_mean_is_a_quarter() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = gauss(&mut rng, 64);
        let nx = dot(&x, &x).sqrt();
        x.iter_mut().for_each(|v| *v /= nx);
        let trials = 10_000;
        let mean: f64 = (0..trials)
            .map(|s| {
                let y = make_projection(64, 1.0 / 21.0, s).unwrap().apply(&x);
                4.0 * dot(&y, &y)
            })
            .sum::<f64>()
            / trials as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn projected_flat_contains_projected_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = make_projection(64, 1.0 / 21.0, 3).unwrap();
        let f = random_flat(&mut rng, 64, 2);
        let image = m.project_flat(&f).unwrap();
        assert_eq!(image.k(), 2);
        for _ in 0..20 {
            let w = gauss(&mut rng, 2);
            assert!(image.distance(&m.apply(&f.at(&w))) < 1e-9);
        }
    }

    #[test]
    fn non_expansion_and_bounded_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 2000;
        let (mut kept, mut not_collapsed) = (0, 0);
        for s in 0..trials {
            let m = make_projection(64, 1.0 / 21.0, 1000 + s).unwrap();
            let f = random_flat(&mut rng, 64, 1);
            let p = gauss(&mut rng, 64);
            let (orig, proj) = (f.distance(&p), m.project_flat(&f).unwrap().distance(&m.apply(&p)));
            kept += (proj <= orig) as usize;
            not_collapsed += (proj >= orig / 40.0) as usize;
        }
        assert!(kept as f64 >= 0.995 * trials as f64, "{kept}");
        assert!(not_collapsed as f64 >= 0.995 * trials as f64, "{not_collapsed}");
    }

    #[test]
    fn identity_when_target_is_not_smaller() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec<f64>> = (0..50).map(|_| gauss(&mut rng, 8)).collect();
        let ids: Vec<usize> = (0..50).collect();
        let ps = ProjectionStructure::build(&pts, &ids, 1, 1.0 / 21.0, 3, ProjectionKind::Q3, 0).unwrap();
        assert_eq!(ps.copies().len(), 1);
        assert_eq!(ps.copies()[0].proj, RandomProjection::identity(8));
    }

    #[test]
    fn single_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = vec![gauss(&mut rng, 64)];
        let ps = ProjectionStructure::build(&pts, &[0], 1, 1.0 / 21.0, 3, ProjectionKind::Q1, 0).unwrap();
        let f = random_flat(&mut rng, 64, 1);
        let hit = ps.q1_query(&f, 0).unwrap();
        assert_eq!(hit.index, 0);
        assert_eq!(hit.distance, f.distance(&pts[0]));
    }

    #[test]
    fn q1_finds_point_on_the_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<Vec<f64>> = (0..300).map(|_| gauss(&mut rng, 64)).collect();
        let ids: Vec<usize> = (0..300).collect();
        let ps = ProjectionStructure::build(&pts, &ids, 1, 1.0 / 21.0, 3, ProjectionKind::Q1, 7).unwrap();
        let mut hits = 0;
        for trial in 0..300 {
            let p = &pts[trial];
            let dir = gauss(&mut rng, 64);
            let f = Flat::new(&[dir], p).unwrap();
            hits += (ps.q1_query(&f, trial as u64).unwrap().distance < 1e-9) as usize;
        }
        assert!(hits >= 297, "{hits}");
    }

    #[test]
    fn q1_is_within_n_to_the_t() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 2000;
        let pts: Vec<Vec<f64>> = (0..n).map(|_| gauss(&mut rng, 64)).collect();
        let ids: Vec<usize> = (0..n).collect();
        let t = 1.0 / 21.0;
        let ps = ProjectionStructure::build(&pts, &ids, 1, t, 3, ProjectionKind::Q1, 8).unwrap();
        let bound = (n as f64).powf(t);
        let mut ok = 0;
        for q in 0..100 {
            let f = random_flat(&mut rng, 64, 1);
            let hit = ps.q1_query(&f, q).unwrap();
            ok += (hit.distance <= bound * oracle(&pts, &f).1) as usize;
        }
        assert!(ok >= 95, "{ok}");
    }

    #[test]
    fn q3_with_huge_alpha_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec<f64>> = (0..200).map(|_| gauss(&mut rng, 64)).collect();
        let ids: Vec<usize> = (0..200).collect();
        let ps = ProjectionStructure::build(&pts, &ids, 1, 1.0 / 21.0, 3, ProjectionKind::Q3, 9).unwrap();
        for _ in 0..10 {
            let f = random_flat(&mut rng, 64, 1);
            let (hit, reported) = ps.q3_query(&f, 1e6).unwrap();
            assert_eq!(reported, 200);
            assert_eq!(hit.unwrap().index, oracle(&pts, &f).0);
        }
    }

    #[test]
    fn q3_finds_zero_distance_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec<f64>> = (0..200).map(|_| gauss(&mut rng, 64)).collect();
        let sub: Vec<usize> = (0..200).step_by(2).collect();
        let ps = ProjectionStructure::build(&pts, &sub, 1, 1.0 / 21.0, 3, ProjectionKind::Q3, 10).unwrap();
        for &i in sub.iter().take(20) {
            let f = Flat::new(&[gauss(&mut rng, 64)], &pts[i]).unwrap();
            let (hit, _) = ps.q3_query(&f, 1e-9).unwrap();
            let hit = hit.unwrap();
            assert_eq!(hit.index, i);
            assert!(hit.distance < 1e-9);
        }
    }

    #[test]
    fn q3_exact_on_spread_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pts: Vec<Vec<f64>> = (0..500).map(|_| gauss(&mut rng, 64)).collect();
        let ids: Vec<usize> = (0..500).collect();
        let ps = ProjectionStructure::build(&pts, &ids, 1, 1.0 / 21.0, 3, ProjectionKind::Q3, 11).unwrap();
        let mut exact = 0;
        for _ in 0..100 {
            let f = random_flat(&mut rng, 64, 1);
            let (idx, dist) = oracle(&pts, &f);
            let alpha = dist * rng.random_range(1.0..1.5);
            let (hit, _) = ps.q3_query(&f, alpha).unwrap();
            exact += hit.is_some_and(|h| h.index == idx) as usize;
        }
        assert!(exact >= 90, "{exact}");
    }
}
