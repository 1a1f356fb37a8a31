use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_extremes"))
        .args(args)
        .env_remove("EXTREMES_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Data rows (header comments and column line removed), split on commas.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column_line(text: &str) -> &str {
    text.lines().find(|l| !l.starts_with('#')).unwrap()
}

#[test]
fn estimate_c_is_reproducible_and_flags_rho_one() {
    let args = [
        "--seed",
        "11",
        "estimate-c",
        "--rho-min",
        "1",
        "--rho-max",
        "2",
        "--steps",
        "3",
        "--replicas",
        "300",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.starts_with("# schema=1\n# config={"));
    assert_eq!(column_line(&text), "rho,c_estimate,stderr,n,horizon_T,accepted,warning");
    let rows = rows(&text);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "1.0");
    assert_eq!(rows[0][6], "rho_at_one");
    assert!(rows[1][6].is_empty() && rows[2][6].is_empty());
    let other = run(&[
        "--seed",
        "12",
        "estimate-c",
        "--rho-min",
        "1",
        "--rho-max",
        "2",
        "--steps",
        "3",
        "--replicas",
        "300",
    ]);
    assert_ne!(other.stdout, a.stdout);
}

#[test]
fn seed_comes_from_environment_by_default() {
    let args = ["estimate-c", "--rho-min", "2", "--rho-max", "2", "--replicas", "100"];
    let env = Command::new(env!("CARGO_BIN_EXE_extremes"))
        .args(args)
        .env("EXTREMES_SEED", "5")
        .output()
        .unwrap();
    let mut explicit = vec!["--seed", "5"];
    explicit.extend(args);
    assert_eq!(env.stdout, run(&explicit).stdout);
}

#[test]
fn header_config_reproduces_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.csv");
    let o = run(&[
        "--seed",
        "3",
        "-o",
        out.to_str().unwrap(),
        "estimate-c",
        "--rho-min",
        "1.5",
        "--rho-max",
        "2",
        "--steps",
        "2",
        "--replicas",
        "200",
        "--coupled",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read_to_string(&out).unwrap();
    let config = first.lines().nth(1).unwrap().strip_prefix("# config=").unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, config).unwrap();
    let again = run(&["--config", cfg_path.to_str().unwrap(), "estimate-c"]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(stdout(&again), first);
    // explicit flags override the file
    let overridden = run(&[
        "--config",
        cfg_path.to_str().unwrap(),
        "estimate-c",
        "--replicas",
        "100",
    ]);
    assert!(rows(&stdout(&overridden)).iter().all(|r| r[3] == "100"));
}

#[test]
fn coupled_curve_is_monotone() {
    let o = run(&[
        "estimate-c",
        "--rho-min",
        "1.5",
        "--rho-max",
        "4",
        "--steps",
        "6",
        "--replicas",
        "500",
        "--coupled",
    ]);
    assert!(o.status.success());
    let est: Vec<f64> = rows(&stdout(&o)).iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(est.windows(2).all(|w| w[0] <= w[1]), "{est:?}");
}

#[test]
fn exit_codes() {
    let usage = run(&["estimate-c", "--rho-min", "0.5", "--rho-max", "2", "--steps", "2"]);
    assert_eq!(usage.status.code(), Some(2));
    assert!(usage.stdout.is_empty());
    assert_eq!(run(&["kpp", "--rho", "0.9"]).status.code(), Some(2));
    assert_eq!(
        run(&["simulate", "--mu", "1", "--t", "3", "--emit", "martingales"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["simulate", "--mu", "-1", "--t", "3"]).status.code(), Some(2));
    assert_eq!(run(&["limit-process", "--gamma", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["--workers", "0", "verify"]).status.code(), Some(2));

    let cap = run(&[
        "estimate-c",
        "--rho-min",
        "1.1",
        "--rho-max",
        "1.1",
        "--max-horizon",
        "50",
    ]);
    assert_eq!(cap.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&cap.stderr).contains("resource limit"));
    assert_eq!(run(&["simulate", "--mu", "1", "--t", "40"]).status.code(), Some(3));

    let budget = run(&["decorate", "--rho", "1.2", "--samples", "20", "--max-attempts", "1"]);
    assert_eq!(budget.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&budget.stderr).contains("acceptance estimate"));
}

#[test]
fn kpp_rows_and_field_dump() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("field.csv");
    let o = run(&[
        "kpp",
        "--rho",
        "1.5",
        "--rho",
        "2",
        "--t-max",
        "6",
        "--field-dump",
        dump.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(
        column_line(&text),
        "rho,t,w_probe,c_of_t,c_extrapolated,uncertainty,phi"
    );
    let rows = rows(&text);
    assert_eq!(rows.len(), 10);
    for r in &rows {
        let w: f64 = r[2].parse().unwrap();
        let c: f64 = r[4].parse().unwrap();
        assert!(w < 0.0);
        assert!(c > 0.1 && c < 0.3, "{r:?}");
    }
    let field = std::fs::read_to_string(&dump).unwrap();
    assert!(field.starts_with("t,x,w\n"));
    assert!(field.lines().count() > 1000);
}

#[test]
fn simulate_outputs() {
    let max = run(&["simulate", "--mu", "1", "--t", "6", "--replicas", "20"]);
    assert!(max.status.success());
    let text = stdout(&max);
    assert_eq!(column_line(&text), "replica,max");
    assert_eq!(rows(&text).len(), 20);

    let atoms = run(&[
        "simulate",
        "--mu",
        "1",
        "--t",
        "8",
        "--replicas",
        "10",
        "--emit",
        "atoms-above",
        "--above",
        "-3",
    ]);
    assert!(atoms.status.success());
    let rows_a = rows(&stdout(&atoms));
    assert!(!rows_a.is_empty());
    for pair in rows_a.windows(2) {
        if pair[0][0] == pair[1][0] {
            assert!(pair[0][1].parse::<f64>().unwrap() <= pair[1][1].parse::<f64>().unwrap());
        }
    }
    assert!(rows_a.iter().all(|r| r[1].parse::<f64>().unwrap() >= -3.0));

    let m = run(&[
        "simulate",
        "--mu",
        "0",
        "--t",
        "5",
        "--replicas",
        "5",
        "--emit",
        "martingales",
        "--beta",
        "0.5,1",
    ]);
    assert!(m.status.success());
    let text = stdout(&m);
    assert_eq!(column_line(&text), "replica,w_beta_0.5,w_beta_1.0,z");
    for r in rows(&text) {
        assert!(r[1..].iter().all(|x| x.parse::<f64>().unwrap().is_finite()));
    }
}

#[test]
fn decorations_have_max_zero() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("s.json");
    let o = run(&[
        "decorate",
        "--rho",
        "4",
        "--window-a",
        "-1",
        "--samples",
        "200",
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let rows = rows(&stdout(&o));
    let mut last = None;
    let mut sizes = std::collections::BTreeMap::new();
    for r in &rows {
        *sizes.entry(r[0].clone()).or_insert(0) += 1;
        if last.as_ref() != Some(&r[0]) {
            // atoms are listed from the top, so the first one is the max
            assert_eq!(r[1].parse::<f64>().unwrap(), 0.0);
            last = Some(r[0].clone());
        }
    }
    assert_eq!(sizes.len(), 200);
    let singletons = sizes.values().filter(|&&n| n == 1).count();
    // a few branches near time 0 leave atoms in [-1, 0)
    assert!(singletons >= 120, "{singletons}");
    let s: Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    let rate = s["acceptance_rate"].as_f64().unwrap();
    assert!(rate > 0.8 && rate <= 1.0, "{rate}");
}

#[test]
fn limit_process_at_infinity_is_undecorated() {
    let o = run(&[
        "limit-process",
        "--gamma",
        "inf",
        "--samples",
        "2000",
        "--window-a",
        "0",
    ]);
    assert!(o.status.success());
    let rows = rows(&stdout(&o));
    // E N = E W / sqrt(4 pi) with W ~ Exp(1)
    let mean = rows.len() as f64 / 2000.0;
    assert!((mean - 0.28209).abs() < 0.05, "{mean}");
    assert!(rows.iter().all(|r| r[1].parse::<f64>().unwrap() >= 0.0));
}

fn verify(extra: &[&str], path: &Path) -> Output {
    let mut args = vec![
        "--seed",
        "2024",
        "-o",
        path.to_str().unwrap(),
        "verify",
        "--suite",
        "fast",
    ];
    args.extend(extra);
    run(&args)
}

#[test]
fn verify_fast_suite_and_corrupted_drift() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    let o = verify(&[], &good);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&good).unwrap()).unwrap();
    let names: Vec<&str> = report
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["name"].as_str().unwrap())
        .collect();
    let expected = branching_extremes::verify::suite_names(branching_extremes::verify::Suite::Fast);
    assert_eq!(names, expected.iter().map(String::as_str).collect::<Vec<_>>());
    let failed: Vec<&str> = report
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["status"] == "failed")
        .map(|r| r["name"].as_str().unwrap())
        .collect();
    assert_eq!(o.status.code(), Some(if failed.is_empty() { 0 } else { 1 }));
    // the finite-t max law is the only check allowed to miss at this scale
    assert!(failed.iter().all(|n| n.starts_with("max_limit_law")), "{failed:?}");

    let bad = dir.path().join("bad.json");
    let o = verify(&["--corrupt-drift-sign"], &bad);
    assert_eq!(o.status.code(), Some(1));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&bad).unwrap()).unwrap();
    let spine_failed = report
        .as_array()
        .unwrap()
        .iter()
        .any(|r| r["name"].as_str().unwrap().starts_with("spine_identity") && r["status"] == "failed");
    assert!(spine_failed);
}
