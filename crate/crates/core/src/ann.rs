//! Point approximate nearest-neighbor black box.
//!
//! Two implementations share one structure type: an exact linear-scan
//! oracle and a p-stable (Gaussian) Euclidean LSH. The LSH can come back
//! empty-handed; [`PointAnnStructure::query_or_scan`] turns that into a
//! linear scan so callers that need an answer always get one.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dist_sq, dot};

/// A reported neighbor: original index and Euclidean distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

impl Neighbor {
    /// Smaller distance wins; equal distances go to the smaller index.
    pub fn better_than(&self, other: &Neighbor) -> bool {
        self.distance < other.distance || (self.distance == other.distance && self.index < other.index)
    }

    pub fn best(a: Option<Neighbor>, b: Option<Neighbor>) -> Option<Neighbor> {
        match (a, b) {
            (Some(x), Some(y)) => Some(if y.better_than(&x) { y } else { x }),
            (x, None) => x,
            (None, y) => y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnKind {
    Oracle,
    Lsh,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum HashWidth {
    /// Four times the median nearest-neighbor distance of a small sample.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnConfig {
    pub kind: AnnKind,
    pub c: f64,
    /// Query exponent estimate; drives the cluster size in the main index.
    pub rho: f64,
    pub sigma_exp: f64,
    pub tables: usize,
    pub hash_width: HashWidth,
    pub hashes_per_table: usize,
    pub rng_seed: u64,
}

impl AnnConfig {
    /// Defaults for factor `c`: rho = sigma = 1/c^2, 16 tables of 4 hashes.
    pub fn new(kind: AnnKind, c: f64, rng_seed: u64) -> Self {
        let rho = 1.0 / (c * c);
        AnnConfig {
            kind,
            c,
            rho,
            sigma_exp: rho,
            tables: 16,
            hash_width: HashWidth::Auto,
            hashes_per_table: 4,
            rng_seed,
        }
    }

    pub fn oracle(c: f64) -> Self {
        Self::new(AnnKind::Oracle, c, 0)
    }

    pub fn lsh(c: f64, rng_seed: u64) -> Self {
        Self::new(AnnKind::Lsh, c, rng_seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 1.0) {
            return Err(Error::InvalidParams(format!("c must exceed 1, got {}", self.c)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParams(format!("rho must lie in (0,1), got {}", self.rho)));
        }
        if self.tables == 0 || self.hashes_per_table == 0 {
            return Err(Error::InvalidParams(
                "tables and hashes_per_table must be positive".into(),
            ));
        }
        if let HashWidth::Fixed(w) = self.hash_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidParams(format!("hash width must be positive, got {w}")));
            }
        }
        Ok(())
    }

    /// Same configuration with factor `c` (and its default exponents).
    pub fn with_c(&self, c: f64) -> Self {
        let rho = 1.0 / (c * c);
        AnnConfig {
            c,
            rho,
            sigma_exp: rho,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        AnnConfig {
            rng_seed,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct HashTable {
    /// `hashes_per_table` projection rows.
    projections: Vec<Vec<f64>>,
    shifts: Vec<f64>,
    buckets: BTreeMap<Vec<i64>, Vec<u32>>,
}

impl HashTable {
    fn key(&self, x: &[f64], width: f64) -> Vec<i64> {
        self.projections
            .iter()
            .zip(&self.shifts)
            .map(|(a, b)| ((dot(a, x) + b) / width).floor() as i64)
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LshTables {
    width: f64,
    tables: Vec<HashTable>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointAnnStructure {
    dim: usize,
    kind: AnnKind,
    ids: Vec<usize>,
    points: Vec<Vec<f64>>,
    lsh: Option<LshTables>,
}

/// Builds a structure whose reported indices are positions in `points`.
pub fn ann_build<P: AsRef<[f64]>>(points: &[P], cfg: &AnnConfig) -> Result<PointAnnStructure> {
    PointAnnStructure::build(points, (0..points.len()).collect(), cfg)
}

pub fn ann_query(s: &PointAnnStructure, q: &[f64]) -> Result<Neighbor> {
    s.query(q)
}

impl PointAnnStructure {
    /// Builds over `points`, reporting `ids[i]` for `points[i]`.
    pub fn build<P: AsRef<[f64]>>(points: &[P], ids: Vec<usize>, cfg: &AnnConfig) -> Result<Self> {
        cfg.validate()?;
        let first = points.first().ok_or(Error::EmptyInput)?;
        let dim = first.as_ref().len();
        check_dim(points.len(), ids.len())?;
        let mut stored = Vec::with_capacity(points.len());
        for p in points {
            check_dim(dim, p.as_ref().len())?;
            stored.push(p.as_ref().to_vec());
        }
        let lsh = match cfg.kind {
            AnnKind::Oracle => None,
            AnnKind::Lsh => Some(build_lsh(&stored, dim, cfg)),
        };
        Ok(PointAnnStructure {
            dim,
            kind: cfg.kind,
            ids,
            points: stored,
            lsh,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> AnnKind {
        self.kind
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Number of hash tables holding at least one bucket (0 for the oracle).
    pub fn nonempty_tables(&self) -> usize {
        self.lsh
            .as_ref()
            .map_or(0, |l| l.tables.iter().filter(|t| !t.buckets.is_empty()).count())
    }

    /// Oracle: exact nearest neighbor. LSH: best candidate among colliding
    /// points, or [`Error::NearMiss`] if no bucket matched.
    pub fn query(&self, q: &[f64]) -> Result<Neighbor> {
        check_dim(self.dim, q.len())?;
        match &self.lsh {
            None => Ok(self.scan(q)),
            Some(lsh) => {
                let mut best: Option<(f64, usize)> = None;
                for table in &lsh.tables {
                    if let Some(bucket) = table.buckets.get(&table.key(q, lsh.width)) {
                        for &slot in bucket {
                            let slot = slot as usize;
                            let d2 = dist_sq(q, &self.points[slot]);
                            let cand = (d2, self.ids[slot]);
                            if best.is_none_or(|b| cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1)) {
                                best = Some(cand);
                            }
                        }
                    }
                }
                best.map(|(d2, index)| Neighbor {
                    index,
                    distance: d2.sqrt(),
                })
                .ok_or(Error::NearMiss)
            }
        }
    }

    /// Like [`query`](Self::query) but falls back to a linear scan on a miss.
    pub fn query_or_scan(&self, q: &[f64]) -> Result<Neighbor> {
        match self.query(q) {
            Err(Error::NearMiss) => Ok(self.scan(q)),
            other => other,
        }
    }

    /// Exact nearest neighbor by linear scan, ties to the smallest index.
    pub fn scan(&self, q: &[f64]) -> Neighbor {
        let mut best = (f64::INFINITY, usize::MAX);
        for (p, &id) in self.points.iter().zip(&self.ids) {
            let d2 = dist_sq(q, p);
            if d2 < best.0 || (d2 == best.0 && id < best.1) {
                best = (d2, id);
            }
        }
        Neighbor {
            index: best.1,
            distance: best.0.sqrt(),
        }
    }
}

fn build_lsh(points: &[Vec<f64>], dim: usize, cfg: &AnnConfig) -> LshTables {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let width = match cfg.hash_width {
        HashWidth::Fixed(w) => w,
        HashWidth::Auto => auto_width(points, &mut rng),
    };
    let mut tables = Vec::with_capacity(cfg.tables);
    for _ in 0..cfg.tables {
        let projections: Vec<Vec<f64>> = (0..cfg.hashes_per_table)
            .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let shifts: Vec<f64> = (0..cfg.hashes_per_table)
            .map(|_| rng.random_range(0.0..width))
            .collect();
        let mut table = HashTable {
            projections,
            shifts,
            buckets: BTreeMap::new(),
        };
        for (slot, p) in points.iter().enumerate() {
            let key = table.key(p, width);
            table.buckets.entry(key).or_default().push(slot as u32);
        }
        tables.push(table);
    }
    LshTables { width, tables }
}

const WIDTH_SAMPLE: usize = 32;

fn auto_width(points: &[Vec<f64>], rng: &mut ChaCha8Rng) -> f64 {
    let n = points.len();
    if n < 2 {
        return 1.0;
    }
    let samples: Vec<usize> = if n <= WIDTH_SAMPLE {
        (0..n).collect()
    } else {
        (0..WIDTH_SAMPLE).map(|_| rng.random_range(0..n)).collect()
    };
    let mut nn: Vec<f64> = samples
        .iter()
        .map(|&i| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, p)| dist_sq(p, &points[i]))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .filter(|d| *d > 0.0)
        .collect();
    if nn.is_empty() {
        return 1.0;
    }
    nn.sort_by(f64::total_cmp);
    4.0 * nn[nn.len() / 2]
}
