use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flatnn::data::{gen_dataset, gen_queries, read_flats, read_points, write_flats, write_points};
use flatnn::harness::{bench_run, describe, parse_ann, parse_fraction, verify_index, verify_run, Config};
use flatnn::index::FlatIndex;
use flatnn::persist::{load_index, save_index, INDEX_MAGIC};
use flatnn::{Error, Flat};

#[derive(Parser)]
#[command(name = "flatnn", version, about = "Approximate nearest neighbors of k-flat queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a point set (and optionally query flats).
    Gen(Common),
    /// Build an index over a point file.
    Build(Common),
    /// Answer the flats of a query file with a saved index.
    Query(Common),
    /// Compare index answers against a linear scan.
    Verify(Common),
    /// Measure scaling slopes.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// key=value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    c: Option<f64>,
    /// Decimal or fraction, e.g. 1/21.
    #[arg(long)]
    t: Option<String>,
    /// oracle or lsh.
    #[arg(long)]
    ann: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Input file: points for build/verify, an index for query.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// A query count, or a flats file for query/verify.
    #[arg(long)]
    queries: Option<String>,
    /// Where `gen` writes generated queries.
    #[arg(long)]
    query_out: Option<PathBuf>,
    /// uniform or planted.
    #[arg(long)]
    generator: Option<String>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Write points in the binary format.
    #[arg(long)]
    binary: bool,
    /// Minimum success rate for verify.
    #[arg(long)]
    threshold: Option<f64>,
    /// Per-query CSV output for verify.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Comma-separated size ladder for bench.
    #[arg(long)]
    sizes: Option<String>,
    /// Also time end-to-end index queries in bench.
    #[arg(long)]
    with_index: bool,
}

enum Failure {
    Threshold,
    Usage(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Corrupt(_) | Error::Version(_) => Failure::Io(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

impl Common {
    fn config(&self) -> Result<Config, Failure> {
        let mut cfg = Config::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        let pairs: [(&str, Option<String>); 13] = [
            ("n", self.n.map(|v| v.to_string())),
            ("d", self.d.map(|v| v.to_string())),
            ("k", self.k.map(|v| v.to_string())),
            ("c", self.c.map(|v| v.to_string())),
            ("t", self.t.clone()),
            ("ann", self.ann.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("repeats", self.repeats.map(|v| v.to_string())),
            ("generator", self.generator.clone()),
            ("clusters", self.clusters.map(|v| v.to_string())),
            ("radius", self.radius.map(|v| v.to_string())),
            ("noise", self.noise.map(|v| v.to_string())),
            ("threshold", self.threshold.map(|v| v.to_string())),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        if let Some(s) = &self.sizes {
            cfg.set("bench_sizes", s)?;
        }
        if let Some(q) = &self.queries {
            if let Ok(count) = q.parse::<usize>() {
                cfg.queries = count;
            }
        }
        // Validate early so bad values are usage errors.
        if let Some(t) = &self.t {
            parse_fraction(t)?;
        }
        if let Some(a) = &self.ann {
            parse_ann(a)?;
        }
        Ok(cfg)
    }

    fn query_file(&self) -> Option<PathBuf> {
        self.queries
            .as_ref()
            .filter(|q| q.parse::<usize>().is_err())
            .map(PathBuf::from)
    }

    fn require_in(&self) -> Result<&PathBuf, Failure> {
        self.input
            .as_ref()
            .ok_or_else(|| Failure::Usage("--in is required".into()))
    }

    fn require_out(&self) -> Result<&PathBuf, Failure> {
        self.out
            .as_ref()
            .ok_or_else(|| Failure::Usage("--out is required".into()))
    }
}

fn gen(args: &Common) -> Outcome {
    let cfg = args.config()?;
    let ds = gen_dataset(&cfg.dataset_spec())?;
    write_points(args.require_out()?, &ds.points, args.binary)?;
    if !ds.planted_flats.is_empty() {
        let path = args.require_out()?.with_extension("planted");
        write_flats(&path, &ds.planted_flats)?;
    }
    if let Some(path) = &args.query_out {
        let qs = gen_queries(&ds.points, cfg.queries, cfg.k, cfg.jitter, cfg.seed.wrapping_add(1));
        write_flats(path, &qs)?;
    }
    println!("wrote {} points in dimension {}", ds.points.len(), cfg.d);
    Ok(())
}

fn build(args: &Common) -> Outcome {
    let cfg = args.config()?;
    let points = read_points(args.require_in()?)?;
    let idx = FlatIndex::build(points, &cfg.index_params())?;
    save_index(&idx, args.require_out()?)?;
    println!(
        "built index: n={} d={} k={} m={} clusters={} tree depth={}{}",
        idx.len(),
        idx.dim(),
        idx.k(),
        idx.m(),
        idx.clusters().len(),
        idx.depth(),
        if idx.sampled_search() {
            " (sampled cluster search)"
        } else {
            ""
        }
    );
    Ok(())
}

fn query(args: &Common) -> Outcome {
    let cfg = args.config()?;
    let idx = load_index(args.require_in()?)?;
    let path = args
        .query_file()
        .ok_or_else(|| Failure::Usage("query needs --queries <flats file>".into()))?;
    let flats = read_flats(&path)?;
    let mut out = String::from("query,index,distance\n");
    for (i, f) in flats.iter().enumerate() {
        let hit = idx.query(f, cfg.seed.wrapping_add(i as u64))?;
        out.push_str(&format!("{i},{},{:?}\n", hit.index, hit.distance));
    }
    match &args.out {
        Some(p) => fs::write(p, out).map_err(|e| Failure::Io(e.to_string()))?,
        None => print!("{out}"),
    }
    Ok(())
}

fn is_index_file(path: &Path) -> bool {
    let mut magic = [0u8; 4];
    fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .is_ok_and(|_| &magic == INDEX_MAGIC)
}

fn verify(args: &Common) -> Outcome {
    let mut cfg = args.config()?;
    let points = match &args.input {
        Some(p) if is_index_file(p) => None,
        Some(p) => Some(read_points(p)?),
        None => Some(gen_dataset(&cfg.dataset_spec())?.points),
    };
    let flats_for = |pts: &[Vec<f64>]| -> Result<Vec<Flat>, Failure> {
        Ok(match args.query_file() {
            Some(p) => read_flats(&p)?,
            None => gen_queries(pts, cfg.queries, cfg.k, cfg.jitter, cfg.seed.wrapping_add(1)),
        })
    };
    let (report, n, d) = match points {
        Some(points) => {
            let flats = flats_for(&points)?;
            let (n, d) = (points.len(), points.first().map_or(0, |p| p.len()));
            (verify_run(points, &flats, &cfg.index_params())?.1, n, d)
        }
        None => {
            let idx = load_index(args.require_in()?)?;
            let flats = flats_for(idx.points())?;
            (
                verify_index(&idx, &flats, idx.params().c, idx.params().seed)?,
                idx.len(),
                idx.dim(),
            )
        }
    };
    cfg.n = n;
    cfg.d = d;
    cfg.queries = report.records.len();
    for (key, value) in describe(&cfg) {
        println!("{key}={value}");
    }
    print!("{}", report.summary(true));
    if let Some(p) = &args.csv {
        fs::write(p, report.to_csv()).map_err(|e| Failure::Io(e.to_string()))?;
    }
    if report.min_ratio() < 1.0 - 1e-9 {
        eprintln!("ratio below 1: an answer is closer than the exact nearest point");
        return Err(Failure::Threshold);
    }
    if report.success_rate() < cfg.threshold {
        eprintln!(
            "success rate {:.4} below threshold {}",
            report.success_rate(),
            cfg.threshold
        );
        return Err(Failure::Threshold);
    }
    Ok(())
}

fn bench(args: &Common) -> Outcome {
    let cfg = args.config()?;
    let report = bench_run(&cfg, args.with_index)?;
    print!("{}", report.render());
    if !report.passes() {
        eprintln!("bench gate failed");
        return Err(Failure::Threshold);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Build(a) => build(a),
        Command::Query(a) => query(a),
        Command::Verify(a) => verify(a),
        Command::Bench(a) => bench(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Threshold) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
