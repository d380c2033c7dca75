use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use svyacd::io::{dataset_config, write_dataset_csv};
use svyacd::simulator::{draw_sample, generate_population, SimConfig};

fn svyacd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svyacd"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn sample_file(dir: &Path) -> String {
    let cfg = SimConfig {
        n_pop: 20_000,
        ..SimConfig::setting(8).unwrap()
    };
    let pop = generate_population(&cfg, &mut cfg.rng(0)).unwrap();
    let draw = draw_sample(&pop, &mut cfg.rng(1)).unwrap();
    write_dataset_csv(&draw.data, &dir.join("sample.csv")).unwrap();
    let mut c = dataset_config(&draw.data);
    c.methods = vec![svyacd::Method::Om, svyacd::Method::Ipw1, svyacd::Method::Ipw2, svyacd::Method::Slr];
    toml::to_string(&c).unwrap()
}

#[test]
fn estimate_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sample_file(dir.path());
    fs::write(dir.path().join("cfg.toml"), cfg).unwrap();
    let out = svyacd(
        &["estimate", "--data", "sample.csv", "--config", "cfg.toml", "--out", "res"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("res/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("method,description,acd,se,ci_low,ci_high"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("res/report.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dropped 0 (complete-case)"));

    // Same inputs, same bytes.
    let again = svyacd(
        &["estimate", "--data", "sample.csv", "--config", "cfg.toml", "--out", "res2"],
        dir.path(),
    );
    assert!(again.status.success());
    for f in ["report.csv", "report.json"] {
        assert_eq!(
            fs::read(dir.path().join("res").join(f)).unwrap(),
            fs::read(dir.path().join("res2").join(f)).unwrap()
        );
    }
}

#[test]
fn failed_method_gives_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    // x determines the group exactly, so only SLR can be fitted.
    let mut csv = String::from("y,a,w,x\n");
    for i in 0..20 {
        let a = i % 2;
        csv += &format!("{},{a},2,{}\n", i as f64 * 0.3, 2 * a - 1);
    }
    fs::write(dir.path().join("d.csv"), csv).unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "outcome = \"y\"\ngroup = \"a\"\nweight = \"w\"\ncovariates = [\"x\"]\nmethods = [\"SLR\", \"OM\"]\n",
    )
    .unwrap();
    let out = svyacd(&["estimate", "--data", "d.csv", "--config", "c.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let csv = fs::read_to_string(dir.path().join("o/report.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("SLR,") && l.ends_with(',')));
    assert!(csv.lines().any(|l| l.starts_with("OM,") && !l.ends_with(',')));
}

#[test]
fn validate_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sample_file(dir.path());
    fs::write(dir.path().join("cfg.toml"), &cfg).unwrap();
    let out = svyacd(&["validate", "--data", "sample.csv", "--config", "cfg.toml"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("group sizes"));

    fs::write(dir.path().join("bad.toml"), format!("{cfg}\nalpha = 2.0\n").replace("alpha = 0.05\n", "")).unwrap();
    let out = svyacd(&["validate", "--data", "sample.csv", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));
}

#[test]
fn simulate_small_sweep() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("sim.toml"),
        "n_pop = 5000\nn_reps = 4\nmethods = [\"OM\", \"IPW1\"]\ngamma_ax_sweep = [0.0, 0.5]\nper_rep = true\n",
    )
    .unwrap();
    let out = svyacd(
        &["simulate", "--config", "sim.toml", "--setting", "8", "--reps", "3", "--seed", "7", "--out", "s"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("s/report.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 2);
    let per_rep = fs::read_to_string(dir.path().join("s/per_rep.csv")).unwrap();
    assert_eq!(per_rep.lines().count(), 1 + 2 * 2 * 3);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s/report.json")).unwrap()).unwrap();
    assert_eq!(json[0]["seed"], 7);
    assert_eq!(json[1]["setting_id"], 8);

    let out = svyacd(&["simulate", "--config", "sim.toml", "--setting", "9"], dir.path());
    assert!(!out.status.success());
}
