//! Verification runs against a brute-force oracle, scaling benchmarks and
//! the `key=value` run configuration shared by the command-line tool.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ann::AnnKind;
use crate::data::{random_flat, DatasetSpec, Generator};
use crate::error::{Error, Result};
use crate::index::{FlatIndex, IndexParams};
use crate::linalg::Flat;
use crate::lowdim::{SearchStructure, DEFAULT_BRANCHING};
use crate::partition::{crossed_leaves, Hyperplane, PartitionTree};

/// Repetitions per timed query; the median is reported.
pub const TIMING_REPS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub c: f64,
    pub t: f64,
    pub ann: AnnKind,
    pub seed: u64,
    pub repeats: usize,
    pub queries: usize,
    /// Scale of the offset applied to data points when generating the
    /// near half of the queries.
    pub jitter: f64,
    pub generator: Generator,
    /// Minimum success rate for `verify`.
    pub threshold: f64,
    pub bench_sizes: Vec<usize>,
    pub index_sizes: Vec<usize>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            n: 1024,
            d: 32,
            k: 1,
            c: 2.0,
            t: 1.0 / 21.0,
            ann: AnnKind::Oracle,
            seed: 1,
            repeats: crate::projection::DEFAULT_REPEATS,
            queries: 200,
            jitter: 0.05,
            generator: Generator::Uniform,
            threshold: 0.98,
            bench_sizes: (10..=17).map(|e| 1 << e).collect(),
            index_sizes: vec![128, 256, 512],
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParams(format!("bad value `{value}` for `{key}`")))
}

pub fn parse_ann(value: &str) -> Result<AnnKind> {
    match value {
        "oracle" => Ok(AnnKind::Oracle),
        "lsh" => Ok(AnnKind::Lsh),
        _ => Err(Error::InvalidParams(format!("unknown ann kind `{value}`"))),
    }
}

impl Config {
    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidParams(format!("line {}: expected key=value", lineno + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let planted = |g: &Generator| match *g {
            Generator::Planted {
                num_clusters,
                cluster_radius,
                noise_fraction,
            } => (num_clusters, cluster_radius, noise_fraction),
            Generator::Uniform => (8, 0.05, 0.1),
        };
        match key {
            "n" => self.n = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "c" => self.c = parse(key, value)?,
            "t" => self.t = parse_fraction(value)?,
            "ann" => self.ann = parse_ann(value)?,
            "seed" => self.seed = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            "queries" => self.queries = parse(key, value)?,
            "jitter" => self.jitter = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "generator" => {
                self.generator = match value {
                    "uniform" => Generator::Uniform,
                    "planted" => {
                        let (num_clusters, cluster_radius, noise_fraction) = planted(&self.generator);
                        Generator::Planted {
                            num_clusters,
                            cluster_radius,
                            noise_fraction,
                        }
                    }
                    _ => return Err(Error::InvalidParams(format!("unknown generator `{value}`"))),
                }
            }
            "clusters" | "radius" | "noise" => {
                let (mut nc, mut r, mut nf) = planted(&self.generator);
                match key {
                    "clusters" => nc = parse(key, value)?,
                    "radius" => r = parse(key, value)?,
                    _ => nf = parse(key, value)?,
                }
                self.generator = Generator::Planted {
                    num_clusters: nc,
                    cluster_radius: r,
                    noise_fraction: nf,
                };
            }
            "bench_sizes" => self.bench_sizes = parse_list(key, value)?,
            "index_sizes" => self.index_sizes = parse_list(key, value)?,
            _ => return Err(Error::InvalidParams(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            n: self.n,
            d: self.d,
            k: self.k,
            generator: self.generator,
            seed: self.seed,
        }
    }

    pub fn index_params(&self) -> IndexParams {
        let mut p = IndexParams::new(self.k, self.c, self.t, self.ann, self.seed);
        p.repeats = self.repeats;
        p
    }
}

/// Accepts decimals and fractions such as `1/21`.
pub fn parse_fraction(value: &str) -> Result<f64> {
    match value.split_once('/') {
        Some((a, b)) => Ok(parse::<f64>("t", a.trim())? / parse::<f64>("t", b.trim())?),
        None => parse("t", value),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryRecord {
    pub oracle: f64,
    pub returned: f64,
    pub ratio: f64,
    pub micros: f64,
    pub r_tilde: f64,
    pub i_star: usize,
    pub q3_reported: usize,
    pub near_fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub c: f64,
    pub records: Vec<QueryRecord>,
    pub build_secs: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

impl RunReport {
    pub fn successes(&self) -> usize {
        self.records.iter().filter(|r| r.returned <= self.c * r.oracle).count()
    }

    pub fn success_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 1.0;
        }
        self.successes() as f64 / self.records.len() as f64
    }

    pub fn min_ratio(&self) -> f64 {
        self.records.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min)
    }

    pub fn latency_percentile(&self, q: f64) -> f64 {
        percentile(&sorted(self.records.iter().map(|r| r.micros).collect()), q)
    }

    pub fn reported_percentile(&self, q: f64) -> f64 {
        percentile(&sorted(self.records.iter().map(|r| r.q3_reported as f64).collect()), q)
    }

    /// Summary lines; timing lines only when asked, so the rest is
    /// reproducible byte for byte.
    pub fn summary(&self, timing: bool) -> String {
        let mut s = String::new();
        let q = self.records.len();
        writeln!(s, "queries {q}").unwrap();
        writeln!(
            s,
            "success@{} {}/{q} ({:.4})",
            self.c,
            self.successes(),
            self.success_rate()
        )
        .unwrap();
        let ratios = sorted(self.records.iter().map(|r| r.ratio).collect());
        writeln!(
            s,
            "ratio min {:.6} p50 {:.6} max {:.6}",
            self.min_ratio(),
            percentile(&ratios, 0.5),
            ratios.last().copied().unwrap_or(f64::NAN)
        )
        .unwrap();
        writeln!(
            s,
            "q3 reported p50 {} p95 {}",
            self.reported_percentile(0.5),
            self.reported_percentile(0.95)
        )
        .unwrap();
        let fallbacks: usize = self.records.iter().map(|r| r.near_fallbacks).sum();
        writeln!(s, "near-case budget fallbacks {fallbacks}").unwrap();
        if timing {
            writeln!(s, "build {:.3}s", self.build_secs).unwrap();
            writeln!(
                s,
                "latency p50 {:.1}us p95 {:.1}us",
                self.latency_percentile(0.5),
                self.latency_percentile(0.95)
            )
            .unwrap();
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("query,oracle,returned,ratio,r_tilde,i_star,q3_reported,near_fallbacks,micros\n");
        for (i, r) in self.records.iter().enumerate() {
            writeln!(
                s,
                "{i},{:?},{:?},{:?},{:?},{},{},{},{:.1}",
                r.oracle, r.returned, r.ratio, r.r_tilde, r.i_star, r.q3_reported, r.near_fallbacks, r.micros
            )
            .unwrap();
        }
        s
    }
}

fn ratio(returned: f64, oracle: f64) -> f64 {
    if oracle > 0.0 {
        returned / oracle
    } else if returned == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Runs every query through the index and the linear-scan oracle.
pub fn verify_index(idx: &FlatIndex, queries: &[Flat], c: f64, seed: u64) -> Result<RunReport> {
    let mut records = Vec::with_capacity(queries.len());
    for (i, f) in queries.iter().enumerate() {
        let qseed = seed.wrapping_add(i as u64);
        let oracle = idx.scan(f).distance;
        let mut times = Vec::with_capacity(TIMING_REPS);
        let mut result = None;
        for _ in 0..TIMING_REPS {
            let start = Instant::now();
            let r = idx.query_traced(f, qseed)?;
            times.push(start.elapsed().as_secs_f64() * 1e6);
            result = Some(r);
        }
        let (hit, trace) = result.expect("at least one repetition");
        records.push(QueryRecord {
            oracle,
            returned: hit.distance,
            ratio: ratio(hit.distance, oracle),
            micros: percentile(&sorted(times), 0.5),
            r_tilde: trace.r_tilde,
            i_star: trace.i_star,
            q3_reported: trace.q3_reported,
            near_fallbacks: trace.near_fallbacks,
        });
    }
    Ok(RunReport {
        c,
        records,
        build_secs: 0.0,
    })
}

/// Builds an index over `points` and verifies it on `queries`.
pub fn verify_run(points: Vec<Vec<f64>>, queries: &[Flat], params: &IndexParams) -> Result<(FlatIndex, RunReport)> {
    let start = Instant::now();
    let idx = FlatIndex::build(points, params)?;
    let build_secs = start.elapsed().as_secs_f64();
    let mut report = verify_index(&idx, queries, params.c, params.seed)?;
    report.build_secs = build_secs;
    Ok((idx, report))
}

/// Least-squares slope and intercept of `ln y` against `ln x`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x.ln(), y.max(f64::MIN_POSITIVE).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, (my - slope * mx).exp())
}

/// One measured log-log curve.
#[derive(Clone, Debug)]
pub struct SlopeLine {
    pub name: String,
    pub sizes: Vec<usize>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub constant: f64,
    /// Maximum allowed slope, if this line is gated.
    pub gate: Option<f64>,
}

impl SlopeLine {
    pub fn new(name: &str, sizes: &[usize], values: Vec<f64>, gate: Option<f64>) -> Self {
        let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
        let (slope, constant) = fit_slope(&xs, &values);
        SlopeLine {
            name: name.into(),
            sizes: sizes.to_vec(),
            values,
            slope,
            constant,
            gate,
        }
    }

    pub fn passes(&self) -> bool {
        self.gate.is_none_or(|g| self.slope <= g)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let verdict = match self.gate {
            Some(g) if self.passes() => format!("PASS (gate {g:.3})"),
            Some(g) => format!("FAIL (gate {g:.3})"),
            None => "report".into(),
        };
        writeln!(
            s,
            "{}: slope {:.3} constant {:.4e} {verdict}",
            self.name, self.slope, self.constant
        )
        .unwrap();
        for (n, v) in self.sizes.iter().zip(&self.values) {
            writeln!(s, "  n={n:<8} {v:.4e}").unwrap();
        }
        s
    }
}

fn median_micros(reps: usize, mut f: impl FnMut()) -> f64 {
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64() * 1e6
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

fn unit_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Timing of a fixed amount of work at every size; the slope should be
/// close to zero.
pub fn bench_stub(sizes: &[usize]) -> SlopeLine {
    let values = sizes
        .iter()
        .map(|_| {
            median_micros(21, || {
                let mut acc = 0u64;
                for i in 0..200_000u64 {
                    acc = black_box(acc.wrapping_mul(6364136223846793005).wrapping_add(i));
                }
                black_box(acc);
            })
        })
        .collect();
    SlopeLine::new("constant stub latency", sizes, values, None)
}

/// Median `query_near` latency on uniform points in the unit square for
/// random lines, with `alpha = 2/n` so the reported set stays small.
pub fn bench_lowdim(sizes: &[usize], queries: usize, seed: u64, k: usize) -> Result<SlopeLine> {
    let dim = k + 1;
    let mut values = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n as u64);
        let pts = unit_points(&mut rng, n, dim);
        let s = SearchStructure::build(&pts, k, DEFAULT_BRANCHING, seed)?;
        let flats: Vec<Flat> = (0..queries).map(|_| random_flat(&mut rng, dim, k)).collect();
        let alpha = 2.0 / n as f64;
        let mut lat: Vec<f64> = Vec::with_capacity(queries);
        for f in &flats {
            lat.push(median_micros(TIMING_REPS, || {
                black_box(s.query_near(f, alpha).expect("dimensions match"));
            }));
        }
        values.push(percentile(&sorted(lat), 0.5));
    }
    Ok(SlopeLine::new(
        &format!("lowdim query_near median latency (dim {dim}, k {k})"),
        sizes,
        values,
        Some(k as f64 / (k as f64 + 1.0) + 0.15),
    ))
}

/// 95th percentile of the number of partition-tree leaves crossed by a
/// random hyperplane through the unit cube in dimension k+1.
pub fn bench_crossings(sizes: &[usize], planes: usize, seed: u64, k: usize) -> SlopeLine {
    let dim = k + 1;
    let mut values = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64) << 1);
        let pts = unit_points(&mut rng, n, dim);
        let tree = PartitionTree::build(&pts, DEFAULT_BRANCHING);
        let counts: Vec<f64> = (0..planes)
            .map(|_| {
                let normal: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let through = unit_points(&mut rng, 1, dim).remove(0);
                let plane = Hyperplane::new(&normal, crate::linalg::dot(&normal, &through));
                crossed_leaves(&tree, &plane) as f64
            })
            .collect();
        values.push(percentile(&sorted(counts), 0.95));
    }
    SlopeLine::new(
        &format!("partition crossings p95 (dim {dim})"),
        sizes,
        values,
        Some(1.0 - 1.0 / (k as f64 + 1.0) + 0.15),
    )
}

/// Median end-to-end query latency over an index size ladder.
pub fn bench_index(sizes: &[usize], cfg: &Config) -> Result<SlopeLine> {
    let mut values = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ n as u64);
        let pts = unit_points(&mut rng, n, cfg.d);
        let idx = FlatIndex::build(pts, &cfg.index_params())?;
        let mut lat = Vec::new();
        for q in 0..cfg.queries.min(50) {
            let f = random_flat(&mut rng, cfg.d, cfg.k);
            lat.push(median_micros(TIMING_REPS, || {
                black_box(idx.query(&f, q as u64).expect("dimensions match"));
            }));
        }
        values.push(percentile(&sorted(lat), 0.5));
    }
    Ok(SlopeLine::new("index query median latency", sizes, values, None))
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub lines: Vec<SlopeLine>,
}

impl BenchReport {
    pub fn passes(&self) -> bool {
        self.lines.iter().all(SlopeLine::passes)
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(SlopeLine::render).collect()
    }
}

pub fn bench_run(cfg: &Config, with_index: bool) -> Result<BenchReport> {
    let mut lines = vec![
        bench_stub(&cfg.bench_sizes),
        bench_lowdim(&cfg.bench_sizes, 200, cfg.seed, 1)?,
        bench_crossings(&cfg.bench_sizes, 500, cfg.seed, 1),
    ];
    if with_index {
        lines.push(bench_index(&cfg.index_sizes, cfg)?);
    }
    Ok(BenchReport { lines })
}

/// Key-value view of a configuration, for echoing into reports.
pub fn describe(cfg: &Config) -> BTreeMap<&'static str, String> {
    let mut m = BTreeMap::new();
    m.insert("n", cfg.n.to_string());
    m.insert("d", cfg.d.to_string());
    m.insert("k", cfg.k.to_string());
    m.insert("c", cfg.c.to_string());
    m.insert("t", format!("{:.6}", cfg.t));
    m.insert("ann", format!("{:?}", cfg.ann).to_lowercase());
    m.insert("seed", cfg.seed.to_string());
    m.insert("repeats", cfg.repeats.to_string());
    m.insert("queries", cfg.queries.to_string());
    m
}
