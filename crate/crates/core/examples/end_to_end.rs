//! Build an index over planted data and check answers against a scan.

use flatnn::data::{gen_dataset, gen_queries, DatasetSpec, Generator};
use flatnn::harness::verify_run;
use flatnn::index::IndexParams;
use flatnn::AnnKind;

fn main() -> flatnn::Result<()> {
    let ds = gen_dataset(&DatasetSpec {
        n: 512,
        d: 16,
        k: 1,
        generator: Generator::Planted {
            num_clusters: 6,
            cluster_radius: 0.01,
            noise_fraction: 0.2,
        },
        seed: 1,
    })?;
    let queries = gen_queries(&ds.points, 100, 1, 0.05, 2);
    let params = IndexParams::new(1, 2.0, 1.0 / 21.0, AnnKind::Lsh, 3);
    let (idx, report) = verify_run(ds.points, &queries, &params)?;
    println!(
        "m = {}, {} clusters, tree depth {}, radii {:.3}..{:.3}",
        idx.m(),
        idx.clusters().len(),
        idx.depth(),
        idx.clusters().first().map_or(0.0, |c| c.radius()),
        idx.clusters().last().map_or(0.0, |c| c.radius())
    );
    print!("{}", report.summary(true));

    let (hit, trace) = idx.query_traced(&queries[0], 0)?;
    println!("first query: point {} at {:.4}; {trace:?}", hit.index, hit.distance);
    Ok(())
}
