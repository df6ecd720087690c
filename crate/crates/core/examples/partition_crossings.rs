//! A partition tree and how many of its leaves a hyperplane crosses.

use flatnn::partition::{crossed_leaves, Hyperplane, PartitionTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for exp in [10, 12, 14, 16] {
        let n = 1usize << exp;
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let tree = PartitionTree::build(&pts, 16);
        let mut worst = 0;
        let mut total = 0;
        for _ in 0..100 {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let normal = [angle.cos(), angle.sin()];
            let plane = Hyperplane::new(
                &normal,
                normal[0] * rng.random::<f64>() + normal[1] * rng.random::<f64>(),
            );
            let c = crossed_leaves(&tree, &plane);
            worst = worst.max(c);
            total += c;
        }
        println!(
            "n = {n:6}: {} leaves, depth {}, crossed mean {:.1} max {worst} (sqrt n = {:.0})",
            tree.leaves().len(),
            tree.depth(),
            total as f64 / 100.0,
            (n as f64).sqrt()
        );
    }
}
