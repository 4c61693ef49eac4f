use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satrisk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn csv_field(text: &str, row: usize, col: &str) -> String {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let c = header.iter().position(|h| *h == col).unwrap();
    lines.nth(row).unwrap().split(',').nth(c).unwrap().to_string()
}

#[test]
fn validate_reports_the_model() {
    let o = run(&["validate", &fixture("ref2.toml")]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("ok: 2 states, 3 state-action pairs"));
}

#[test]
fn eval_ref1_closed_form() {
    let o = run(&["eval", &fixture("ref1.toml"), "--pipeline", "sat", "-k", "1", "--format", "csv"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert_eq!(csv_field(&s, 0, "mean"), "0");
    assert_eq!(csv_field(&s, 0, "variance"), "1.33333333333");
    assert_eq!(csv_field(&s, 0, "mean_variance_risk"), "-1.15470053838");

    let o = run(&["eval", &fixture("ref1.toml"), "--pipeline", "simplified", "-k", "1", "--format", "csv"]);
    let s = stdout(&o);
    assert_eq!(csv_field(&s, 0, "variance"), "0");
    assert_eq!(csv_field(&s, 0, "mean_variance_risk"), "0");
}

#[test]
fn lumped_eval_matches_sat() {
    let f = fixture("ref2.toml");
    let o = run(&["eval", &f, "--pipeline", "sat", "--pipeline", "sat-lumped", "-k", "1", "--format", "csv"]);
    let s = stdout(&o);
    for col in ["mean", "variance", "mean_variance_risk"] {
        let a: f64 = csv_field(&s, 0, col).parse().unwrap();
        let b: f64 = csv_field(&s, 1, col).parse().unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }
}

#[test]
fn transform_counts_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("aug.toml");
    let out_s = out.to_str().unwrap();
    let o = run(&["transform", &fixture("ref2.toml"), "--out", out_s]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("size_after 8"));
    let v = run(&["validate", out_s]);
    assert!(stdout(&v).starts_with("ok: 8 states"));

    let o = run(&["transform", &fixture("ref1.toml"), "--lump"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("size_before 3\nsize_after 3"));

    for strategy in ["pairwise", "sat-key"] {
        let o = run(&["transform", &fixture("ref2.toml"), "--lump", "--lump-strategy", strategy, "--out", out_s]);
        assert!(String::from_utf8_lossy(&o.stderr).contains("size_after 6"));
        // the lumped model evaluates to the same moments as the original
        let a = stdout(&run(&["eval", out_s, "--format", "csv"]));
        let b = stdout(&run(&["eval", &fixture("ref2.toml"), "--format", "csv"]));
        let (ma, mb): (f64, f64) = (csv_field(&a, 0, "mean").parse().unwrap(), csv_field(&b, 0, "mean").parse().unwrap());
        let (va, vb): (f64, f64) = (csv_field(&a, 0, "variance").parse().unwrap(), csv_field(&b, 0, "variance").parse().unwrap());
        assert!((ma - mb).abs() < 1e-9 && (va - vb).abs() < 1e-9);
    }
}

#[test]
fn lump_lists_classes() {
    let o = run(&["lump", &fixture("ref2.toml"), "--format", "csv"]);
    let s = stdout(&o);
    assert_eq!(s.lines().count(), 9);
    assert!(s.contains("null-s2"));
}

#[test]
fn sweep_is_reproducible_and_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = run(&[
            "sweep", &fixture("ref2.toml"), "--param", "k", "--from", "-3", "--to", "3", "--step", "0.25",
            "--pipeline", "sat", "--pipeline", "simplified", "--pipeline", "empirical",
            "--seed", "42", "--L", "20", "--M", "500", "--N", "200", "--out", p.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next().unwrap(), "k,sat,simplified,empirical,empirical_stderr");
    assert_eq!(text.lines().count(), 26);
}

#[test]
fn simulate_csv_has_every_sample() {
    let o = run(&["simulate", &fixture("ref1.toml"), "--L", "3", "--M", "4", "--N", "10", "--format", "csv"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 13);
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["eval", "/nonexistent/model.toml"]).status.code(), Some(1));
    assert_eq!(run(&["eval", &fixture("ref1.toml"), "--pipeline", "bogus"]).status.code(), Some(1));
    assert_eq!(run(&["eval", &fixture("ref1.toml"), "--gamma-override", "1.5"]).status.code(), Some(1));
    assert_eq!(
        run(&["sweep", &fixture("ref1.toml"), "--param", "k", "--from", "1", "--to", "0", "--step", "0.1", "--pipeline", "sat"])
            .status
            .code(),
        Some(1)
    );

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(fixture("ref2.toml")).unwrap().replacen("0.6", "0.5", 1);
    std::fs::write(&bad, text).unwrap();
    let o = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("(s1, a)"));

    assert_eq!(run(&["simulate", &fixture("ref1.toml"), "--L", "0"]).status.code(), Some(1));
}
