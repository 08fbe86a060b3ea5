use std::path::Path;

use scalemix::cli::run;

fn args<'a>(out: &'a Path, rest: &[&'a str]) -> Vec<String> {
    let mut v = vec!["scalemix".to_string()];
    v.extend(rest.iter().map(|s| s.to_string()));
    v.push("--out".into());
    v.push(out.to_str().unwrap().into());
    v
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(run(["scalemix", "simulate", "--no-such-flag"]), 1);
    assert_eq!(run(["scalemix"]), 1);
    assert_eq!(run(["scalemix", "--help"]), 0);
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"simulate": {"n_years": 2}}"#).unwrap();
    let a = args(dir.path(), &["simulate", "--config", cfg.to_str().unwrap(), "--seed", "7"]);
    assert_eq!(run(&a), 0);
    assert_eq!(run(&a), 0);
    for f in ["values.csv", "stations.csv", "config.json"] {
        let x = std::fs::read(dir.path().join("run-0001").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("run-0002").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let other = args(dir.path(), &["simulate", "--config", cfg.to_str().unwrap(), "--seed", "8"]);
    assert_eq!(run(&other), 0);
    assert_ne!(
        std::fs::read(dir.path().join("run-0001/values.csv")).unwrap(),
        std::fs::read(dir.path().join("run-0003/values.csv")).unwrap()
    );
}

#[test]
fn verify_classes_reports_first_table_row() {
    let dir = tempfile::tempdir().unwrap();
    let a = args(dir.path(), &["verify-classes", "--variant", "M1", "--delta", "0.7", "--replicates", "200000"]);
    assert_eq!(run(&a), 0);
    let text = std::fs::read_to_string(dir.path().join("run-0001/classes.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let verdicts: Vec<&str> = v.as_array().unwrap().iter().map(|r| r["verdict"].as_str().unwrap()).collect();
    assert_eq!(verdicts, ["AD", "AI", "AI"]);
}

#[test]
fn invalid_budget_is_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(args(dir.path(), &["verify-classes", "--replicates", "10"])), 1);
    assert_eq!(run(args(dir.path(), &["fit", "--k", "5"])), 1);
    assert!(!dir.path().join("run-0001").exists());
}

#[test]
fn storm_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(args(dir.path(), &["storm", "--lattice", "5", "--days", "4"])), 0);
    let text = std::fs::read_to_string(dir.path().join("run-0001/storm.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("replicate,x_km,y_km,day,value"));
    assert_eq!(text.lines().count(), 1 + 4 * (25 + 30));
    assert_eq!(run(args(dir.path(), &["storm", "--lattice", "2000"])), 1);
}

#[test]
fn fit_report_does_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["fit", "--k", "100", "--b", "10", "--seed", "4"];
    let mut one = base.to_vec();
    one.extend(["--threads", "1"]);
    let mut three = base.to_vec();
    three.extend(["--threads", "3"]);
    assert_eq!(run(args(dir.path(), &one)), 0);
    assert_eq!(run(args(dir.path(), &three)), 0);
    for f in ["report.json", "bootstrap.csv"] {
        let a = std::fs::read(dir.path().join("run-0001").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("run-0002").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}
