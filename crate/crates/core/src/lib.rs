//! Approximate nearest neighbors of k-flat queries among points in R^d.
//!
//! [`index::FlatIndex`] is the entry point; the other modules are its
//! building blocks and can be used on their own.

// `!(x > 0.0)` rejects NaN on purpose, and dense kernels read best indexed.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ann;
pub mod cluster;
pub mod data;
pub mod error;
pub mod harness;
pub mod index;
pub mod linalg;
pub mod lowdim;
pub mod partition;
pub mod persist;
pub mod polytope;
pub mod projection;

pub use ann::{ann_build, ann_query, AnnConfig, AnnKind, HashWidth, Neighbor, PointAnnStructure};
pub use error::{Error, Result};
pub use linalg::{align_flats, dist_point_flat, svd_small, Flat, FlatPairFrame, Point, SmallSvd};
