//! Datasets, query sets and their file formats.
//!
//! Points are stored as text (`flatnn-pts v1 n d`, then one row per point)
//! or binary (magic `FNNB`, version, n, d, then little-endian f64s). Query
//! flats are stored as text (`flatnn-flats v1 q k d`, then k+1 generator
//! rows per flat).

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add, axpy, dot, Flat};

pub const POINTS_MAGIC: &[u8; 4] = b"FNNB";
pub const POINTS_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Generator {
    /// Uniform in the unit cube.
    Uniform,
    /// Points within `cluster_radius` of random k-flats, plus a fraction of
    /// uniform noise points.
    Planted {
        num_clusters: usize,
        cluster_radius: f64,
        noise_fraction: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub generator: Generator,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub points: Vec<Vec<f64>>,
    /// Flats the planted points were drawn around.
    pub planted_flats: Vec<Flat>,
    /// Planted flat of each point; `None` for noise and uniform points.
    pub labels: Vec<Option<usize>>,
}

fn gauss(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn uniform(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random::<f64>()).collect()
}

/// A k-flat through a uniform point of the unit cube with Gaussian
/// directions.
pub fn random_flat(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Flat {
    loop {
        let dirs: Vec<Vec<f64>> = (0..k).map(|_| gauss(rng, d)).collect();
        if let Ok(f) = Flat::new(&dirs, &uniform(rng, d)) {
            return f;
        }
    }
}

/// Random vector orthogonal to the flat's directions with norm at most
/// `radius`, uniform in radius.
fn orthogonal_noise(rng: &mut ChaCha8Rng, flat: &Flat, radius: f64) -> Vec<f64> {
    let mut v = gauss(rng, flat.dim());
    for b in flat.basis() {
        let c = dot(b, &v);
        axpy(&mut v, -c, b);
    }
    let nv = dot(&v, &v).sqrt();
    if nv == 0.0 || radius == 0.0 {
        return vec![0.0; flat.dim()];
    }
    let s = radius * rng.random::<f64>() / nv;
    v.iter().map(|x| x * s).collect()
}

pub fn gen_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.d == 0 {
        return Err(Error::InvalidParams("dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    let mut planted_flats = Vec::new();
    match spec.generator {
        Generator::Uniform => {
            for _ in 0..spec.n {
                points.push(uniform(&mut rng, spec.d));
                labels.push(None);
            }
        }
        Generator::Planted {
            num_clusters,
            cluster_radius,
            noise_fraction,
        } => {
            if num_clusters == 0 || !(0.0..=1.0).contains(&noise_fraction) || !(cluster_radius >= 0.0) {
                return Err(Error::InvalidParams("bad planted generator settings".into()));
            }
            if spec.k >= spec.d {
                return Err(Error::InvalidParams(format!(
                    "cannot plant {}-flats in dimension {}",
                    spec.k, spec.d
                )));
            }
            planted_flats = (0..num_clusters)
                .map(|_| random_flat(&mut rng, spec.d, spec.k))
                .collect();
            let planted = ((1.0 - noise_fraction) * spec.n as f64).ceil() as usize;
            for i in 0..spec.n {
                if i < planted {
                    let c = i % num_clusters;
                    let flat = &planted_flats[c];
                    let w: Vec<f64> = (0..spec.k).map(|_| rng.random_range(-0.5..0.5)).collect();
                    let noise = orthogonal_noise(&mut rng, flat, cluster_radius);
                    points.push(add(&flat.at(&w), &noise));
                    labels.push(Some(c));
                } else {
                    points.push(uniform(&mut rng, spec.d));
                    labels.push(None);
                }
            }
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        points,
        planted_flats,
        labels,
    })
}

/// Query flats: the first half random through the unit cube, the rest
/// through a data point displaced by Gaussian noise of scale `jitter`.
pub fn gen_queries(points: &[Vec<f64>], q: usize, k: usize, jitter: f64, seed: u64) -> Vec<Flat> {
    let d = points.first().map_or(0, |p| p.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..q)
        .map(|i| {
            if i < q / 2 || points.is_empty() {
                random_flat(&mut rng, d, k)
            } else {
                let base = &points[rng.random_range(0..points.len())];
                loop {
                    let dirs: Vec<Vec<f64>> = (0..k).map(|_| gauss(&mut rng, d)).collect();
                    let through: Vec<f64> = base
                        .iter()
                        .zip(gauss(&mut rng, d))
                        .map(|(x, g)| x + jitter * g)
                        .collect();
                    if let Ok(f) = Flat::new(&dirs, &through) {
                        break f;
                    }
                }
            }
        })
        .collect()
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

pub fn points_to_text(points: &[Vec<f64>]) -> String {
    let d = points.first().map_or(0, |p| p.len());
    let mut s = format!("flatnn-pts v1 {} {}\n", points.len(), d);
    for p in points {
        write_row(&mut s, p);
    }
    s
}

fn write_row(s: &mut String, row: &[f64]) {
    for (i, x) in row.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x:?}").expect("write to string");
    }
    s.push('\n');
}

fn parse_header<'a>(tokens: &mut impl Iterator<Item = &'a str>, tag: &str, fields: usize) -> Result<Vec<usize>> {
    match tokens.next() {
        Some(t) if t == tag => {}
        Some(t) => return Err(Error::Version(format!("expected `{tag}`, found `{t}`"))),
        None => return Err(corrupt("empty file")),
    }
    match tokens.next() {
        Some("v1") => {}
        Some(v) => return Err(Error::Version(format!("unsupported {tag} version `{v}`"))),
        None => return Err(corrupt("missing version")),
    }
    (0..fields)
        .map(|_| {
            tokens
                .next()
                .ok_or_else(|| corrupt("truncated header"))?
                .parse::<usize>()
                .map_err(|e| corrupt(format!("bad header field: {e}")))
        })
        .collect()
}

fn parse_reals<'a>(tokens: &mut impl Iterator<Item = &'a str>, count: usize) -> Result<Vec<f64>> {
    (0..count)
        .map(|_| {
            let x: f64 = tokens
                .next()
                .ok_or_else(|| corrupt("fewer values than the header declares"))?
                .parse()
                .map_err(|e| corrupt(format!("bad number: {e}")))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(corrupt("non-finite value"))
            }
        })
        .collect()
}

pub fn points_from_text(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut tokens = text.split_ascii_whitespace();
    let h = parse_header(&mut tokens, "flatnn-pts", 2)?;
    let (n, d) = (h[0], h[1]);
    let points = (0..n)
        .map(|_| parse_reals(&mut tokens, d))
        .collect::<Result<Vec<_>>>()?;
    if tokens.next().is_some() {
        return Err(corrupt("more values than the header declares"));
    }
    Ok(points)
}

pub fn points_to_binary(points: &[Vec<f64>]) -> Vec<u8> {
    let d = points.first().map_or(0, |p| p.len());
    let mut out = Vec::with_capacity(24 + 8 * points.len() * d);
    out.extend_from_slice(POINTS_MAGIC);
    out.extend_from_slice(&POINTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(points.len() as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for x in points.iter().flatten() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn points_from_binary(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    if bytes.len() < 4 || &bytes[..4] != POINTS_MAGIC {
        return Err(Error::Version("not a binary point file".into()));
    }
    if bytes.len() < 24 {
        return Err(corrupt("truncated header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != POINTS_VERSION {
        return Err(Error::Version(format!("unsupported binary point version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let d = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let body = &bytes[24..];
    if n.checked_mul(d).and_then(|x| x.checked_mul(8)) != Some(body.len()) {
        return Err(corrupt("body length does not match header"));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if values.iter().any(|x| !x.is_finite()) {
        return Err(corrupt("non-finite value"));
    }
    Ok(if d == 0 {
        vec![Vec::new(); n]
    } else {
        values.chunks(d).map(|c| c.to_vec()).collect()
    })
}

/// Reads either point format, telling them apart by the magic bytes.
pub fn read_points(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(POINTS_MAGIC) {
        points_from_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| corrupt("point file is neither text nor FNNB"))?;
        points_from_text(&text)
    }
}

pub fn write_points(path: &Path, points: &[Vec<f64>], binary: bool) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    if binary {
        w.write_all(&points_to_binary(points))?;
    } else {
        w.write_all(points_to_text(points).as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn flats_to_text(flats: &[Flat]) -> String {
    let (k, d) = flats.first().map_or((0, 0), |f| (f.k(), f.dim()));
    let mut s = format!("flatnn-flats v1 {} {} {}\n", flats.len(), k, d);
    for f in flats {
        write_row(&mut s, f.offset());
        for b in f.basis() {
            write_row(&mut s, &add(f.offset(), b));
        }
    }
    s
}

pub fn flats_from_text(text: &str) -> Result<Vec<Flat>> {
    let mut tokens = text.split_ascii_whitespace();
    let h = parse_header(&mut tokens, "flatnn-flats", 3)?;
    let (q, k, d) = (h[0], h[1], h[2]);
    let flats = (0..q)
        .map(|i| {
            let gens = (0..=k)
                .map(|_| parse_reals(&mut tokens, d))
                .collect::<Result<Vec<_>>>()?;
            Flat::from_points(&gens).map_err(|e| corrupt(format!("flat {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if tokens.next().is_some() {
        return Err(corrupt("more values than the header declares"));
    }
    Ok(flats)
}

pub fn read_flats(path: &Path) -> Result<Vec<Flat>> {
    let text = fs::read_to_string(path)?;
    flats_from_text(&text)
}

pub fn write_flats(path: &Path, flats: &[Flat]) -> Result<()> {
    fs::write(path, flats_to_text(flats))?;
    Ok(())
}
