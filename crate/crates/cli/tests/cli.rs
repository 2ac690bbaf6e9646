use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn slag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slag")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn potential_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("pot5.json");
    let out = slag(&["potential", "--n", "5", "--c", "1.0", "--t-max", "12", "--tol", "1e-12", "--out", path_str(&file)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!(doc["n"], 5);
    assert!(doc["u_prime"].as_array().unwrap().len() > 100);

    let out = slag(&["potential", "--n", "3", "--c", "2"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let line = stdout.lines().find(|l| l.starts_with("u'(1)")).unwrap();
    let value: f64 = line.split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!((value - 2f64.powf(1.0 / 3.0)).abs() < 1e-10);
}

#[test]
fn invalid_flags_exit_2() {
    let out = slag(&["potential", "--c", "-1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--c"));
    assert_eq!(code(&slag(&["verify", "--example", "u3"])), 2);
    assert_eq!(code(&slag(&["verify", "--example", "u1-l1", "--c1", "0.2"])), 2);
    assert_eq!(code(&slag(&["verify", "--bogus"])), 2);
    assert_eq!(code(&slag(&["verify", "--tol-angle", "3"])), 2);
}

#[test]
fn range_error_exit_3() {
    assert_eq!(code(&slag(&["potential", "--n", "5", "--t-max", "800"])), 3);
}

#[test]
fn verify_u1_l1_report() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("r.json");
    let out = slag(&["verify", "--example", "u1-l1", "--level", "0.3", "--samples", "400", "--report", path_str(&file)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!(r["example"], "u1-l1");
    assert_eq!(r["pass"], true);
    assert_eq!(r["config"]["levels"][0], 0.3);
    assert!(r["counts"]["swept_samples"].as_u64().unwrap() >= 400);
    for check in r["checks"].as_array().unwrap() {
        for key in ["name", "residual", "tol", "pass"] {
            assert!(check.get(key).is_some());
        }
    }
    for key in ["mean_mod_pi", "stddev", "predicted_shift", "observed_shift"] {
        assert!(r["angle"][key].is_number());
    }
}

#[test]
fn verify_so223_and_negative_level() {
    assert_eq!(code(&slag(&["verify", "--example", "so223", "--c1", "0.2", "--c2", "-0.1"])), 0);
    assert_eq!(code(&slag(&["verify", "--example", "u1-l2", "--level", "-0.5"])), 0);
}

#[test]
fn verify_pieces() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.json");
    let out = slag(&["verify", "--example", "so223", "--c1", "0", "--c2", "0", "--pieces", "--report", path_str(&file)]);
    assert_eq!(code(&out), 0);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&file).unwrap()).unwrap();
    let pieces = r["pieces"].as_array().unwrap();
    assert_eq!(pieces.len(), 5);
    assert!(pieces.iter().all(|p| p["pass"] == true));
    assert_eq!(code(&slag(&["verify", "--example", "so223", "--c1", "0.1", "--pieces"])), 2);
}

#[test]
fn empty_level_exit_4() {
    assert_eq!(code(&slag(&["verify", "--example", "u1-l1", "--level", "1e7"])), 4);
}

#[test]
fn io_error_exit_5() {
    let out = slag(&["verify", "--example", "conormal", "--report", "/nonexistent-dir/r.json"]);
    assert_eq!(code(&out), 5);
}

#[test]
fn scan_rows() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("scan.csv");
    let out = slag(&["scan", "--example", "u1-l2", "--levels", "-1:1:0.25", "--out", path_str(&file)]);
    assert_eq!(code(&out), 0);
    let rows = read_csv(&file);
    assert_eq!(rows[0][0], "level");
    assert_eq!(rows.len(), 1 + 9);
    let zero = rows.iter().find(|r| r[0] == "0").unwrap();
    assert_eq!(zero[3], "true");

    let out = slag(&["scan", "--example", "u1-l1", "--levels", "0:1000000:1000000", "--out", path_str(&file)]);
    assert_eq!(code(&out), 0);
    let rows = read_csv(&file);
    assert_eq!(rows[2][1], "false");
    assert_eq!(rows[2][2], "true");
}

#[test]
fn export_samples_and_series() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.csv");
    let out = slag(&[
        "export", "--example", "u1-l1", "--level", "0.3", "--what", "samples", "--format", "csv", "--out", path_str(&file),
    ]);
    assert_eq!(code(&out), 0);
    let rows = read_csv(&file);
    let header = &rows[0];
    assert_eq!(header[0], "example");
    assert_eq!(header.last().unwrap(), "theta");
    assert!(header.iter().any(|h| h == "re_z1") && header.iter().any(|h| h == "mu_eta"));
    assert!(rows.len() > 400);
    let thetas: Vec<f64> = rows[1..].iter().map(|r| r.last().unwrap().parse().unwrap()).collect();
    let spread = thetas.iter().fold(0.0f64, |m, t| {
        let d = (t - thetas[0]).rem_euclid(std::f64::consts::PI);
        m.max(d.min(std::f64::consts::PI - d))
    });
    assert!(spread < 1e-7);

    let out = slag(&["export", "--example", "so223", "--c1", "0.2", "--c2", "-0.1", "--what", "angle-series", "--out", path_str(&file)]);
    assert_eq!(code(&out), 0);
    let rows = read_csv(&file);
    assert_eq!(rows[0], vec!["index", "theta_mod_pi"]);
    assert!(rows[1..].iter().all(|r| r.len() == 2));
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for f in [&a, &b] {
        let out = slag(&["verify", "--example", "u1-l2", "--level", "0.3", "--seed", "11", "--report", path_str(f)]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "example = \"u1-l1\"\nlevels = [0.3]\n[ode]\nc = 2.0\n[sampling]\nh_grid = 4\nv_count = 5\nseed = 3\n",
    )
    .unwrap();
    let file = dir.path().join("r.json");
    let out = slag(&["verify", "--config", path_str(&cfg), "--level", "-0.2", "--report", path_str(&file)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!(r["config"]["levels"][0], -0.2);
    assert_eq!(r["config"]["ode"]["c"], 2.0);
    assert_eq!(r["counts"]["swept_samples"], 20);

    fs::write(&cfg, "exmple = \"u1-l1\"\n").unwrap();
    assert_eq!(code(&slag(&["verify", "--config", path_str(&cfg)])), 2);
}
