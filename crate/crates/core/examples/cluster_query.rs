//! Nearest neighbor of a query line inside one flat cluster.

use flatnn::cluster::{Cluster, ClusterParams, ClusterStructure};
use flatnn::linalg::max_distance;
use flatnn::{AnnConfig, Flat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> flatnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 8;
    // Points scattered around the first coordinate axis.
    let pts: Vec<Vec<f64>> = (0..400)
        .map(|_| {
            let mut p: Vec<f64> = (0..d).map(|_| rng.random_range(-0.05..0.05)).collect();
            p[0] = rng.random_range(-10.0..10.0);
            p
        })
        .collect();
    let mut axis = vec![0.0; d];
    axis[0] = 1.0;
    let flat = Flat::new(&[axis], &vec![0.0; d])?;
    let radius = max_distance(&pts, &flat);
    let cluster = Cluster {
        flat,
        radius,
        members: (0..pts.len()).collect(),
    };
    let params = ClusterParams::new(2.0, pts.len(), 1.0 / 21.0);
    let cs = ClusterStructure::build(cluster, &pts, &params, &AnnConfig::oracle(2.0))?;

    for (name, dir) in [("crossing", vec![0.0, 1.0]), ("nearly parallel", vec![1.0, 0.01])] {
        let mut v = vec![0.0; d];
        v[0] = dir[0];
        v[1] = dir[1];
        let mut through = vec![0.0; d];
        through[2] = 1.0;
        let q = Flat::new(&[v], &through)?;
        let exact = cs.scan(&q);
        let (hit, info) = cs.query_traced(&q, exact.distance)?;
        println!("{name}: got {:.4}, exact {:.4}, {info:?}", hit.distance, exact.distance);
    }
    Ok(())
}
