//! Projecting points and flats to a lower dimension.

use flatnn::data::random_flat;
use flatnn::projection::{projected_dim, RandomProjection};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> flatnn::Result<()> {
    let t = 1.0 / 21.0;
    let d = 64;
    println!("t = 1/21 projects R^{d} to R^{}", projected_dim(t));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut kept, mut smallest) = (0, f64::INFINITY);
    let trials = 500;
    for s in 0..trials {
        let m = RandomProjection::new(d, t, s)?;
        let f = random_flat(&mut rng, d, 1);
        let p: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ratio = m.project_flat(&f)?.distance(&m.apply(&p)) / f.distance(&p);
        kept += (ratio <= 1.0) as usize;
        smallest = smallest.min(ratio);
    }
    println!("distance not increased in {kept}/{trials}, smallest ratio {smallest:.4}");
    Ok(())
}
