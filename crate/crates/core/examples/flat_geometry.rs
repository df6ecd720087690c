//! Distances between points and flats, and the aligned frame of two flats.

use flatnn::linalg::{discretize_flat, max_distance};
use flatnn::{align_flats, Flat};

fn main() -> flatnn::Result<()> {
    // A line through (0,0,0) and (1,1,0), and a point above it.
    let line = Flat::from_points(&[vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]])?;
    let p = [2.0, 0.0, 3.0];
    println!("d(p, line) = {:.6}", line.distance(&p));
    println!("projection = {:?}", line.project(&p));

    // Two skew lines: the frame gives their closest pair and distance.
    let other = Flat::new(&[vec![0.0, 1.0, 1.0]], &[5.0, 0.0, 2.0])?;
    let frame = align_flats(&line, &other)?;
    println!("sigma = {:?}, d(K, F) = {:.6}", frame.singular_values, frame.dist_kf);
    for u in [-2.0, 0.0, 4.0] {
        let x = frame.point_on_k(&[u]);
        println!(
            "u = {u:5.1}: separated {:.6}, direct {:.6}",
            frame.dist_f_from_k_coords(&[u]),
            other.distance(&x)
        );
    }

    // Replace a fitted line by one through input points.
    let pts: Vec<Vec<f64>> = (0..12)
        .map(|i| {
            let t = i as f64;
            vec![t, 0.5 * t + (t * 1.7).sin() * 0.3, (t * 0.9).cos() * 0.2]
        })
        .collect();
    let fit = Flat::new(&[vec![1.0, 0.5, 0.0]], &[0.0, 0.0, 0.0])?;
    let through = discretize_flat(&pts, &fit)?;
    println!(
        "max distance: fitted {:.4}, through data points {:.4}",
        max_distance(&pts, &fit),
        max_distance(&pts, &through)
    );
    Ok(())
}
