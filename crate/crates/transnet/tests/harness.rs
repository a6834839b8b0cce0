use std::fs;

use transnet::harness::{
    fit_rate, read_csv_points, run_convergence, run_dy_scaling, ExperimentConfig, HarnessError, Report, RunOptions,
    Status, CSV_HEADER,
};
use transnet::transport_core::{build_char_net, Direction};

fn smoke_json() -> serde_json::Value {
    serde_json::json!({
        "problem": {
            "field": {
                "omega": [0.5, 0.5],
                "components": [[{ "kind": "constant", "value": 1.0 }], [{ "kind": "constant", "value": -0.5 }]]
            },
            "t_hat": 0.5,
            "domain": { "lo": [0.0], "hi": [1.0] }
        },
        "eps": [0.2, 0.1, 0.05],
        "samples": 200,
        "lip_samples": 50,
        "seed": 7,
        "rate_band": [1.0, 3.5],
        "dy": [1, 2, 4],
        "dy_eps": 0.1
    })
}

fn smoke() -> ExperimentConfig {
    let cfg: ExperimentConfig = serde_json::from_value(smoke_json()).unwrap();
    cfg.validate().unwrap();
    cfg
}

#[test]
fn fit_rate_recovers_power_law() {
    let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025, 0.0125].iter().map(|&e: &f64| (e, 3.0 * e.powi(-2))).collect();
    let fit = fit_rate(&pts).unwrap();
    assert!((fit.slope - 2.0).abs() < 1e-9, "{fit:?}");
    assert!((fit.intercept - 3f64.log2()).abs() < 1e-9);
    assert!(fit.residual < 1e-9);
}

#[test]
fn fit_rate_rejects_degenerate_ladders() {
    assert!(matches!(fit_rate(&[(0.1, 10.0), (0.05, 40.0)]), Err(HarnessError::Degenerate(_))));
    assert!(matches!(fit_rate(&[(0.1, 10.0), (0.1, 11.0), (0.1, 12.0)]), Err(HarnessError::Degenerate(1))));
    assert!(fit_rate(&[(0.1, 10.0), (0.05, 0.0), (0.025, 5.0)]).is_err());
}

#[test]
fn config_validation() {
    let mut v = smoke_json();
    v["eps"] = serde_json::json!([0.1, 0.1]);
    let cfg: ExperimentConfig = serde_json::from_value(v.clone()).unwrap();
    assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
    v["eps"] = serde_json::json!([0.1, -0.05]);
    let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
    assert!(cfg.validate().is_err());

    let cfg = smoke();
    assert_eq!(cfg.samples, 200);
    assert_eq!(cfg.hash(7), smoke().hash(7));
    assert_ne!(cfg.hash(7), cfg.hash(8));
}

#[test]
fn config_file_resolves_problem_path() {
    let dir = tempfile::tempdir().unwrap();
    let v = smoke_json();
    fs::write(dir.path().join("p.json"), v["problem"].to_string()).unwrap();
    let mut top = v.clone();
    top["problem"] = serde_json::json!("p.json");
    let path = dir.path().join("c.json");
    fs::write(&path, top.to_string()).unwrap();
    let cfg = ExperimentConfig::from_path(&path).unwrap();
    assert_eq!(cfg.problem().unwrap(), smoke().problem().unwrap());
}

#[test]
fn smoke_convergence_passes_and_reruns_identically() {
    let cfg = smoke();
    let opts = RunOptions::default();
    let a = run_convergence(&cfg, &opts).unwrap();
    assert!(a.passed(), "{:?}", a.checks);
    assert!(a.rows.iter().all(|r| r.status == Some(Status::Pass)));

    let csv = a.csv();
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert_eq!(read_csv_points(&csv).unwrap().len(), 3);

    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let p1 = a.write(d1.path()).unwrap();
    let p2 = run_convergence(&cfg, &opts).unwrap().write(d2.path()).unwrap();
    assert_eq!(fs::read(p1).unwrap(), fs::read(p2).unwrap());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d1.path().join("convergence.json")).unwrap()).unwrap();
    assert_eq!(json["config_hash"], serde_json::json!(cfg.hash(7)));
}

#[test]
fn seed_override_changes_rows() {
    let cfg = smoke();
    let r = run_convergence(&cfg, &RunOptions { seed: Some(11), ..Default::default() }).unwrap();
    assert!(r.rows.iter().all(|row| row.seed == 11));
    assert!(r.csv().lines().skip(1).all(|l| l.ends_with(",11")));
}

#[test]
fn ceiling_gives_skip_rows() {
    let mut cfg = smoke();
    let problem = cfg.problem().unwrap().build().unwrap();
    let predicted = |eps| build_char_net(&problem, eps, Direction::Forward, &cfg.limits).unwrap().schedule.predicted_params;
    let (p1, p2) = (predicted(0.1), predicted(0.05));
    assert!(p2 > p1);
    cfg.limits.max_params = 0.5 * (p1 + p2);
    let r: Report = run_convergence(&cfg, &RunOptions::default()).unwrap();
    let status: Vec<_> = r.rows.iter().map(|row| row.status).collect();
    assert_eq!(status, vec![Some(Status::Pass), Some(Status::Pass), Some(Status::Skip)]);
    assert!(r.checks.is_empty());
    assert!(r.passed());
    let skip = r.csv().lines().nth(3).unwrap().to_string();
    assert!(skip.starts_with("5e-2,,,,") && skip.ends_with(",SKIP,7"), "{skip}");
}

#[test]
fn dy_scaling_smoke() {
    let r = run_dy_scaling(&smoke(), &RunOptions::default()).unwrap();
    assert_eq!(r.rows.len(), 3);
    assert!(r.passed(), "{:?}", r.checks);
    let sizes: Vec<u64> = r.rows.iter().map(|row| row.size.unwrap()).collect();
    assert!(sizes.windows(2).all(|w| w[1] > w[0]));
}
