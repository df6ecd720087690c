use std::path::Path;
use std::process::{Command, Output};

fn flatnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flatnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.pts"), dir.path().join("b.pts"));
    for p in [&a, &b] {
        let out = flatnn(&["gen", "--n", "50", "--d", "4", "--seed", "7", "--out", s(p)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = dir.path().join("c.pts");
    flatnn(&["gen", "--n", "50", "--d", "4", "--seed", "8", "--out", s(&c)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn build_query_verify_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("p.pts");
    let qs = dir.path().join("q.flats");
    let idx = dir.path().join("p.fnni");
    let out = flatnn(&[
        "gen",
        "--n",
        "120",
        "--d",
        "6",
        "--k",
        "1",
        "--seed",
        "3",
        "--generator",
        "planted",
        "--queries",
        "20",
        "--out",
        s(&pts),
        "--query-out",
        s(&qs),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(pts.with_extension("planted").exists());

    let out = flatnn(&["build", "--in", s(&pts), "--k", "1", "--out", s(&idx)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = flatnn(&["query", "--in", s(&idx), "--queries", s(&qs)]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 21);
    assert!(text.starts_with("query,index,distance"));

    let out = flatnn(&["verify", "--in", s(&idx), "--queries", s(&qs), "--threshold", "0.9"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8(out.stdout).unwrap().contains("success"));
}

#[test]
fn impossible_threshold_exits_one() {
    let out = flatnn(&[
        "verify",
        "--n",
        "60",
        "--d",
        "4",
        "--queries",
        "5",
        "--c",
        "1.0001",
        "--threshold",
        "1.5",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&flatnn(&["build", "--k", "1"])), 2);
    assert_eq!(code(&flatnn(&["verify", "--t", "3/2", "--n", "40"])), 2);
    assert_eq!(code(&flatnn(&["verify", "--ann", "kdtree", "--n", "40"])), 2);
    assert_eq!(code(&flatnn(&["frobnicate"])), 2);
}

#[test]
fn io_and_corruption_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.pts");
    assert_eq!(code(&flatnn(&["build", "--in", s(&missing), "--out", "x"])), 3);

    let pts = dir.path().join("p.pts");
    let idx = dir.path().join("p.fnni");
    flatnn(&["gen", "--n", "40", "--d", "3", "--out", s(&pts)]);
    flatnn(&["build", "--in", s(&pts), "--out", s(&idx)]);
    let mut bytes = std::fs::read(&idx).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&idx, &bytes).unwrap();
    let qs = dir.path().join("q.flats");
    flatnn(&[
        "gen",
        "--n",
        "40",
        "--d",
        "3",
        "--out",
        s(&pts),
        "--query-out",
        s(&qs),
        "--queries",
        "3",
    ]);
    assert_eq!(code(&flatnn(&["query", "--in", s(&idx), "--queries", s(&qs)])), 3);
}
