//! Point approximate nearest neighbors: exact oracle versus LSH.

use flatnn::linalg::dist;
use flatnn::{AnnConfig, PointAnnStructure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> flatnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 16;
    let pts: Vec<Vec<f64>> = (0..5000)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect();
    let ids: Vec<usize> = (0..pts.len()).collect();
    let oracle = PointAnnStructure::build(&pts, ids.clone(), &AnnConfig::oracle(2.0))?;
    let lsh = PointAnnStructure::build(&pts, ids, &AnnConfig::lsh(2.0, 7))?;
    println!("lsh tables in use: {}", lsh.nonempty_tables());

    let (mut within, queries) = (0, 200);
    for _ in 0..queries {
        let q: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let exact = oracle.query(&q)?;
        let approx = lsh.query_or_scan(&q)?;
        assert_eq!(approx.distance, dist(&pts[approx.index], &q));
        within += (approx.distance <= 2.0 * exact.distance) as usize;
    }
    println!("lsh within 2x of exact: {within}/{queries}");
    Ok(())
}
