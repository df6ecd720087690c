//! Reporting points near a line in three dimensions.

use flatnn::lowdim::{kappa, SearchStructure};
use flatnn::Flat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> flatnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<Vec<f64>> = (0..4000)
        .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
        .collect();
    let s = SearchStructure::build(&pts, 1, 16, 0)?;
    println!(
        "storage slots {}, recursion depth {}",
        s.total_slots(),
        s.recursion_depth()
    );

    let line = Flat::from_points(&[vec![0.1, 0.2, 0.0], vec![0.9, 0.7, 1.0]])?;
    let alpha = 0.05;
    let (reported, stats) = s.query_near_stats(&line, alpha)?;
    let exact = pts.iter().filter(|p| line.distance(p) <= alpha).count();
    let far = reported.iter().map(|&i| line.distance(&pts[i])).fold(0.0, f64::max);
    println!("{} reported, {exact} within alpha", reported.len());
    println!("farthest reported {:.4} (bound {:.4})", far, kappa(3, 1) * alpha);
    println!("{stats:?}");

    let (hit, examined) = s.query_ann_sampled(&line, 9)?;
    println!(
        "sampled answer: point {} at {:.5} after reporting {examined}",
        hit.index, hit.distance
    );
    Ok(())
}
