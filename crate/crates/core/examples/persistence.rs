//! Saving an index to disk and loading it back.

use flatnn::data::{gen_dataset, gen_queries, DatasetSpec, Generator};
use flatnn::index::{FlatIndex, IndexParams};
use flatnn::persist::{load_index, save_index};
use flatnn::AnnKind;

fn main() -> flatnn::Result<()> {
    let ds = gen_dataset(&DatasetSpec {
        n: 300,
        d: 8,
        k: 1,
        generator: Generator::Uniform,
        seed: 4,
    })?;
    let idx = FlatIndex::build(ds.points, &IndexParams::new(1, 2.0, 1.0 / 21.0, AnnKind::Oracle, 5))?;
    let path = std::env::temp_dir().join("flatnn-example.fnni");
    save_index(&idx, &path)?;
    println!("wrote {} bytes to {}", std::fs::metadata(&path)?.len(), path.display());

    let back = load_index(&path)?;
    let same = gen_queries(idx.points(), 20, 1, 0.05, 6)
        .iter()
        .enumerate()
        .all(|(i, f)| idx.query(f, i as u64).ok().map(|h| h.index) == back.query(f, i as u64).ok().map(|h| h.index));
    println!("answers identical after reload: {same}");

    let mut bytes = std::fs::read(&path)?;
    bytes[100] ^= 1;
    std::fs::write(&path, &bytes)?;
    match load_index(&path) {
        Err(e) => println!("corrupted file rejected: {e}"),
        Ok(_) => println!("corrupted file was accepted"),
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
