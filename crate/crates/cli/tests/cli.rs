use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trdre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trdre")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn indices(p: &Path) -> Vec<usize> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && *l != "index")
        .map(|l| l.parse().unwrap())
        .collect()
}

#[test]
fn fit_on_identical_files_gives_zero_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.csv");
    fs::write(&x, "a,b\n0.1,1\n-0.4,2\n0.9,-1\n1.3,0.5\n").unwrap();
    let out = dir.path().join("fit");
    let res = trdre(&["fit", "--xp", path(&x), "--xq", path(&x), "--nu", "1", "--out", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let v = json(&out.join("fit.json"));
    for d in v["fit"]["delta"].as_array().unwrap() {
        assert!(d.as_f64().unwrap().abs() < 1e-9);
    }
    assert_eq!(v["config"]["seed"], 42);
    assert!(indices(&out.join("trimmed_indices.csv")).is_empty());
}

#[test]
fn trimmed_indices_complement_kept() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(trdre(&["gen", "outlier1d", "--n", "200", "--seed", "3", "--out", path(&data)]).status.success());
    let out = dir.path().join("fit");
    let res = trdre(&[
        "fit",
        "--xp",
        path(&data.join("xp.csv")),
        "--xq",
        path(&data.join("xq.csv")),
        "--nu",
        "0.8",
        "--verify",
        "--out",
        path(&out),
    ]);
    assert!(res.status.success());
    let mut all = indices(&out.join("kept_indices.csv"));
    let trimmed = indices(&out.join("trimmed_indices.csv"));
    assert_eq!((all.len(), trimmed.len()), (160, 40));
    all.extend(trimmed);
    all.sort_unstable();
    assert_eq!(all, (0..200).collect::<Vec<_>>());
    let v = json(&out.join("fit.json"));
    assert_eq!(v["kkt"]["weights_ok"], true);
    // the trimmed rows are the uniform outliers near b = 6
    let xp: Vec<f64> = fs::read_to_string(data.join("xp.csv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.parse().unwrap())
        .collect();
    for i in indices(&out.join("trimmed_indices.csv")) {
        assert!(xp[i] > 5.0, "row {i} = {}", xp[i]);
    }
}

#[test]
fn missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let res = trdre(&["fit", "--xp", path(&missing), "--xq", path(&missing), "--out", path(dir.path())]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("nope.csv"));
}

#[test]
fn parse_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "# comment\n1.0\n2.0\nx7\n").unwrap();
    let good = dir.path().join("good.csv");
    fs::write(&good, "1.0\n2.0\n").unwrap();
    let res = trdre(&["fit", "--xp", path(&bad), "--xq", path(&good), "--out", path(dir.path())]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("bad.csv:4"), "{err}");
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "1,2\n3,4\n").unwrap();
    fs::write(&b, "1\n3\n").unwrap();
    let res = trdre(&["fit", "--xp", path(&a), "--xq", path(&b), "--out", path(dir.path())]);
    assert!(!res.status.success());
    assert!(!dir.path().join("fit.json").exists());
}

#[test]
fn divergence_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "1e300\n2\n").unwrap();
    fs::write(&b, "-1e300\n0\n").unwrap();
    let out = dir.path().join("fit");
    let res = trdre(&["fit", "--xp", path(&a), "--xq", path(&b), "--eta0", "1e10", "--out", path(&out)]);
    assert!(!res.status.success());
    assert!(!out.join("fit.json").exists());
}

#[test]
fn generated_mn_pair_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mn");
    let res = trdre(&["gen", "mnpair", "--d", "6", "--n", "50", "--outlier-count", "2", "--out", path(&out)]);
    assert!(res.status.success());
    let v = json(&out.join("pair.json"));
    assert_eq!(v["pair"]["theta_p"].as_array().unwrap().len(), 6);
    assert_eq!(v["pair"]["seed"], 42);
    let rows = fs::read_to_string(out.join("xp.csv")).unwrap();
    let data: Vec<&str> = rows.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data.len(), 52);
    assert_eq!(data[51], "10,10,10,10,10,10");
}

#[test]
fn seed_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let res = trdre(&["gen", "truncation1d", "--n", "10", "--seed", "9", "--out", path(dir.path())]);
    assert!(String::from_utf8_lossy(&res.stderr).contains("seed = 9"));
    let csv = fs::read_to_string(dir.path().join("xq.csv")).unwrap();
    assert!(csv.starts_with("# config: "));
    assert!(csv.lines().next().unwrap().contains("\"seed\":9"));
}
