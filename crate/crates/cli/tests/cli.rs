use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rayleigh"))
}

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.toml")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn files_under(root: &Path) -> Vec<String> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().strip_prefix(root).unwrap().to_string_lossy().into_owned())
        .collect()
}

#[test]
fn validate_shipped_default_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_path("configs/default.toml");
    let o = run(&["validate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("validate.json")).unwrap()).unwrap();
    assert!(report.as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn malformed_potential_exits_one_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(tiny()).unwrap();
    let bad = text.replacen("kind = \"stretched_exp\"", "kind = \"yukawa\"", 1);
    let path = dir.path().join("bad.toml");
    fs::write(&path, bad).unwrap();
    let o = run(&["validate", "--config", path.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().position(|l| l.starts_with("kind = \"stretched_exp\"")).unwrap() + 1;
    assert!(err.contains("line "), "{err}");
    assert!(err.contains(&format!("line {}", line - 1)) || err.contains(&format!("line {line}")), "{err}");
}

#[test]
fn bad_parameter_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["validate", "--config", tiny().to_str().unwrap(), "--set", "potential.gamma=-2.0"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[potential]"));
}

#[test]
fn threshold_violation_exits_three() {
    // a weak stretched exponential parses but is not admissible
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["validate", "--config", tiny().to_str().unwrap(), "--set", "potential.c=0.05"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("potential_admissible"));
}

#[test]
fn scatter_writes_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["scatter", "--config", tiny().to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("scatter.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "r,w,theta,theta_R,rho_star,tau_star,gap");
    assert_eq!(text.lines().count(), 1 + 8 * 3);
}

#[test]
fn sweep_inventory_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny();
    for d in [&a, &b] {
        let o = run(&["sweep", "--config", cfg.to_str().unwrap()], d.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let files = files_under(a.path());
    for eps in ["0.1", "0.05", "0.025"] {
        for name in ["distance.csv", "weak_gaps.csv", "divergence.csv", "excluded.csv"] {
            let f = format!("cells/eps_{eps}/{name}");
            assert!(files.contains(&f), "missing {f} in {files:?}");
        }
        assert!(files.contains(&format!("cells/eps_{eps}/md_mid_seed_11.csv")));
    }
    for f in ["summary.csv", "summary.json", "manifest.json", "timing.json"] {
        assert!(files.contains(&f.to_string()), "missing {f}");
    }
    assert_eq!(files, files_under(b.path()));
    for f in files.iter().filter(|f| *f != "timing.json") {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny();
    for (d, workers) in [(&a, "1"), (&b, "3")] {
        let o = bin()
            .args(["simulate-lbe", "--config", cfg.to_str().unwrap(), "--out"])
            .arg(d.path())
            .env("RAYLEIGH_WORKERS", workers)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
    }
    let rel = "lbe/eps_0.1_seed_11/walkers.csv";
    assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());
}

#[test]
fn manifest_reproduces_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate-md", "--config", tiny().to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let echoed = dir.path().join("echo.toml");
    fs::write(&echoed, m["config"].as_str().unwrap()).unwrap();
    let again = tempfile::tempdir().unwrap();
    let o = run(&["simulate-md", "--config", echoed.to_str().unwrap()], again.path());
    assert_eq!(o.status.code(), Some(0));
    let rel = "md/eps_0.05_seed_11/samples.csv";
    assert_eq!(fs::read(dir.path().join(rel)).unwrap(), fs::read(again.path().join(rel)).unwrap());
    assert_eq!(m["derived"].as_array().unwrap().len(), 3);
    let trees = fs::read_to_string(dir.path().join("md/eps_0.1_seed_11/trees.jsonl")).unwrap();
    assert_eq!(trees.lines().count(), 8);
}
