//! Index files.
//!
//! Layout: magic `FNNI`, a little-endian u32 format version, then five
//! sections (parameters, points, cluster structures, Q3 tree, Q1 root),
//! each a u64 byte length followed by its bincode encoding, and finally a
//! u64 checksum: the first eight bytes of the SHA-256 of everything before
//! it.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::ClusterStructure;
use crate::error::{Error, Result};
use crate::index::{FlatIndex, IndexParams};
use crate::projection::ProjectionStructure;

pub const INDEX_MAGIC: &[u8; 4] = b"FNNI";
pub const INDEX_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    params: IndexParams,
    n: usize,
    d: usize,
    m: usize,
    rho: f64,
    sampled_search: bool,
    leaves: usize,
}

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn push_section<T: Serialize>(out: &mut Vec<u8>, value: &T) -> Result<()> {
    let bytes = bincode::serialize(value).map_err(|e| Error::Corrupt(format!("encoding failed: {e}")))?;
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&bytes);
    Ok(())
}

pub fn index_to_bytes(idx: &FlatIndex) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    let header = Header {
        params: idx.params.clone(),
        n: idx.n,
        d: idx.d,
        m: idx.m,
        rho: idx.rho,
        sampled_search: idx.sampled_search,
        leaves: idx.leaves,
    };
    push_section(&mut out, &header)?;
    push_section(&mut out, &idx.points)?;
    push_section(&mut out, &idx.clusters)?;
    push_section(&mut out, &idx.q3_tree)?;
    push_section(&mut out, &idx.q1_root)?;
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Sections<'a> {
    rest: &'a [u8],
}

impl Sections<'_> {
    fn next<T: DeserializeOwned>(&mut self, name: &str) -> Result<T> {
        if self.rest.len() < 8 {
            return Err(Error::Corrupt(format!("missing {name} section")));
        }
        let (len, rest) = self.rest.split_at(8);
        let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
        if rest.len() < len {
            return Err(Error::Corrupt(format!("{name} section overruns the file")));
        }
        let (body, rest) = rest.split_at(len);
        self.rest = rest;
        bincode::deserialize(body).map_err(|e| Error::Corrupt(format!("{name} section: {e}")))
    }
}

pub fn index_from_bytes(bytes: &[u8]) -> Result<FlatIndex> {
    if bytes.len() < 4 || &bytes[..4] != INDEX_MAGIC {
        return Err(Error::Version("not a flatnn index file".into()));
    }
    if bytes.len() < 16 {
        return Err(Error::Corrupt("truncated index file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != INDEX_VERSION {
        return Err(Error::Version(format!("unsupported index version {version}")));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if checksum(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    let mut sections = Sections { rest: &body[8..] };
    let header: Header = sections.next("parameter")?;
    let points: Vec<Vec<f64>> = sections.next("point")?;
    let clusters: Vec<ClusterStructure> = sections.next("cluster")?;
    let q3_tree: Vec<Option<ProjectionStructure>> = sections.next("tree")?;
    let q1_root: ProjectionStructure = sections.next("root")?;
    if !sections.rest.is_empty() {
        return Err(Error::Corrupt("trailing bytes after the last section".into()));
    }
    if points.len() != header.n || q3_tree.len() != 2 * header.leaves {
        return Err(Error::Corrupt("sections disagree with the header".into()));
    }
    Ok(FlatIndex {
        params: header.params,
        n: header.n,
        d: header.d,
        m: header.m,
        rho: header.rho,
        sampled_search: header.sampled_search,
        points,
        clusters,
        q3_tree,
        leaves: header.leaves,
        q1_root,
    })
}

pub fn save_index(idx: &FlatIndex, path: &Path) -> Result<()> {
    fs::write(path, index_to_bytes(idx)?)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<FlatIndex> {
    index_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::AnnKind;
    use crate::data::{gen_dataset, gen_queries, DatasetSpec, Generator};

    fn small_index(kind: AnnKind) -> FlatIndex {
        let ds = gen_dataset(&DatasetSpec {
            n: 120,
            d: 6,
            k: 1,
            generator: Generator::Uniform,
            seed: 2,
        })
        .unwrap();
        FlatIndex::build(ds.points, &IndexParams::new(1, 2.0, 1.0 / 21.0, kind, 4)).unwrap()
    }

    #[test]
    fn round_trip_answers_identically() {
        for kind in [AnnKind::Oracle, AnnKind::Lsh] {
            let idx = small_index(kind);
            let bytes = index_to_bytes(&idx).unwrap();
            let back = index_from_bytes(&bytes).unwrap();
            assert_eq!(index_to_bytes(&back).unwrap(), bytes);
            for (i, f) in gen_queries(idx.points(), 50, 1, 0.01, 9).iter().enumerate() {
                let (a, b) = (idx.query(f, i as u64).unwrap(), back.query(f, i as u64).unwrap());
                assert_eq!(a.index, b.index);
                assert_eq!(a.distance.to_bits(), b.distance.to_bits());
            }
        }
    }

    #[test]
    fn truncation_and_flips_are_corruption() {
        let bytes = index_to_bytes(&small_index(AnnKind::Oracle)).unwrap();
        for cut in [10, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(index_from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))),
                "cut {cut}"
            );
        }
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 3] ^= 0x10;
        assert!(matches!(index_from_bytes(&flipped), Err(Error::Corrupt(_))));
    }

    #[test]
    fn wrong_magic_or_version() {
        let mut bytes = index_to_bytes(&small_index(AnnKind::Oracle)).unwrap();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(index_from_bytes(&wrong), Err(Error::Version(_))));
        bytes[4] = 9;
        assert!(matches!(index_from_bytes(&bytes), Err(Error::Version(_))));
    }

    #[test]
    fn file_round_trip() {
        let idx = small_index(AnnKind::Oracle);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.fnni");
        save_index(&idx, &path).unwrap();
        let back = load_index(&path).unwrap();
        assert_eq!(back.clusters().len(), idx.clusters().len());
        assert!(matches!(load_index(&dir.path().join("missing")), Err(Error::Io(_))));
    }
}
