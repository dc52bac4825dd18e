use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lambdamin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lambdamin")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("sweep.toml");
    fs::write(
        &path,
        format!(
            "[distribution]\nfamily = \"heavy-radial\"\nn = 8\neta = 1.5\n\n\
             [experiment]\nbeta_grid = [0.5, 0.25, 0.125, 0.0625]\ntrials = 12\nseed = 5\n\
             rademacher_draws = 100\nsearch_budget = 8\n{extra}"
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn sweep_output_independent_of_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let mut outputs = Vec::new();
    for threads in ["1", "8", "1"] {
        let out = dir.path().join(format!("sweep-{threads}-{}.csv", outputs.len()));
        let o = lambdamin(&["--config", &cfg, "--threads", threads, "--out", out.to_str().unwrap(), "sweep"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(fs::read(out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    assert!(outputs[0].starts_with(b"family,eta,n,N,beta,trial,lambda_min,lambda_max,seed\n"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let run = |seed: &str| {
        let o = lambdamin(&["--config", &cfg, "--seed", seed, "sweep"]);
        assert!(o.status.success());
        o.stdout
    };
    assert_eq!(run("5"), lambdamin(&["--config", &cfg, "sweep"]).stdout);
    assert_ne!(run("6"), run("5"));
}

#[test]
fn summary_and_json_outputs_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("summary.csv");
    let json = dir.path().join("sweep.json");
    let cfg = write_config(
        dir.path(),
        &format!("\n[outputs]\nsummary_csv = {:?}\njson = {:?}\n", summary.to_str().unwrap(), json.to_str().unwrap()),
    );
    let sweep = dir.path().join("sweep.csv");
    let o = lambdamin(&["--config", &cfg, "--out", sweep.to_str().unwrap(), "sweep"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let parsed: serde_json::Value = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    assert_eq!(parsed["regime"], "eta-lt-2");
    assert_eq!(parsed["summaries"].as_array().unwrap().len(), 4);

    let a = lambdamin(&["--format", "json", "fit", "--input", summary.to_str().unwrap()]);
    let b = lambdamin(&["--format", "json", "fit", "--input", sweep.to_str().unwrap()]);
    assert!(a.status.success() && b.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let fa: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let fb: serde_json::Value = serde_json::from_slice(&b.stdout).unwrap();
    assert_eq!(fa["regime"], "eta-lt-2");
    let (ea, eb) = (fa["fit"]["exponent"].as_f64().unwrap(), fb["fit"]["exponent"].as_f64().unwrap());
    assert!((ea - eb).abs() < 1e-12);
}

#[test]
fn verify_exit_codes() {
    let ok = lambdamin(&["verify", "--level", "1"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let text = String::from_utf8(ok.stdout).unwrap();
    assert!(text.starts_with("check,status,detail\n"));
    assert!(text.contains("phi-sandwich-lipschitz,passed"));

    let bad = lambdamin(&["--format", "json", "verify", "--level", "1", "--mutate"]);
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert!(report["failed"].as_u64().unwrap() >= 1);
}

#[test]
fn sample_then_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    for p in [&a, &b] {
        let o = lambdamin(&[
            "--seed", "9", "--out", p.to_str().unwrap(), "sample", "--family", "gaussian-iid", "--n", "6", "--beta", "0.25",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let o = lambdamin(&["--format", "json", "spectrum", "--input", a.to_str().unwrap(), "--validate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let lmin = r["lambda_min"].as_f64().unwrap();
    let power = r["lambda_min_inverse_power"].as_f64().unwrap();
    assert!(lmin > 0.0 && lmin <= r["lambda_max"].as_f64().unwrap());
    assert!((lmin - power).abs() <= 1e-8 * lmin);
}

#[test]
fn bounds_and_rademacher() {
    let o = lambdamin(&["--format", "json", "bounds", "--eta", "5", "--beta", "0.25", "--rows", "400"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["regime"], "eta-gt-2");
    assert!((v[0]["floor"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    let o = lambdamin(&["bounds", "--regime", "eta-eq-2", "--eta", "5", "--beta", "0.1", "--rows", "10"]);
    assert_eq!(o.status.code(), Some(2));

    let o = lambdamin(&[
        "--seed", "3", "--format", "json", "rademacher", "--family", "rademacher-vec", "--n", "4", "--rows", "12",
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["exact"], true);
    assert!(v["value"].as_f64().unwrap() <= v["upper_bound"].as_f64().unwrap());
}

#[test]
fn smallball_curve_csv() {
    let o = lambdamin(&[
        "--seed", "1", "smallball", "--family", "gaussian-iid", "--n", "3", "--samples", "4000", "--analytic-ratios",
        "--u-grid", "0.1,0.2,0.4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 4);
    for r in &rows[1..] {
        let f: Vec<f64> = r.split(',').take(3).map(|x| x.parse().unwrap()).collect();
        assert!(f[2] <= f[1], "{r}");
    }
}

#[test]
fn config_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bogus = 1\n");
    let o = lambdamin(&["--config", &cfg, "sweep"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    let o = lambdamin(&["sweep"]);
    assert_eq!(o.status.code(), Some(2));
}
