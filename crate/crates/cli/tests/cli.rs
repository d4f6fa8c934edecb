use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SMALL: &str = "\
[dataset]
train_hours = 1.0
test_cases = 4
test_minutes = 2.0

[detector]
q = 2
block_window = 10

[detector.kdme]
bo_budget = 20
";

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shm-kdme"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, SMALL).unwrap();
    path(&p).to_string()
}

#[test]
fn simulate_train_detect_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("data");
    let model_dir = tmp.path().join("model");
    let det = tmp.path().join("det");
    ok(&["--config", &cfg, "simulate", "--out", path(&data)]);
    assert_eq!(std::fs::read_dir(data.join("train")).unwrap().count(), 7);
    ok(&["--config", &cfg, "train", "--data", path(&data), "--out", path(&model_dir)]);
    for f in ["model.json", "training_report.json", "training_densities.csv"] {
        assert!(model_dir.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(model_dir.join("training_report.json")).unwrap()).unwrap();
    assert_eq!(report["training_segments"], 60);
    assert_eq!(report["explained_variance_ratio"].as_array().unwrap().len(), 2);
    ok(&[
        "detect",
        "--model",
        path(&model_dir.join("model.json")),
        "--data",
        path(&data),
        "--out",
        path(&det),
        "--svg",
    ]);
    let metrics = std::fs::read_to_string(det.join("metrics.csv")).unwrap();
    assert!(metrics.contains("tn,tp,fn,fp,accuracy"));
    let verdicts = std::fs::read_to_string(det.join("verdicts.csv")).unwrap();
    assert_eq!(verdicts.lines().filter(|l| l.starts_with("test_")).count(), 4);
    assert!(std::fs::read_to_string(det.join("report.svg")).unwrap().starts_with("<svg"));
    // Every output names the configuration that produced it.
    let hash = report["config_sha256"].as_str().unwrap();
    for f in [det.join("segments.csv"), det.join("verdicts.csv"), det.join("metrics.csv")] {
        assert!(std::fs::read_to_string(&f).unwrap().contains(hash), "{}", f.display());
    }
    assert!(std::fs::read_to_string(data.join("test/manifest.csv")).unwrap().contains(hash));
}

#[test]
fn unlabelled_records_get_verdicts_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("data");
    let model_dir = tmp.path().join("model");
    ok(&["--config", &cfg, "simulate", "--out", path(&data)]);
    ok(&["--config", &cfg, "train", "--data", path(&data), "--out", path(&model_dir)]);
    let loose = tmp.path().join("loose");
    std::fs::create_dir(&loose).unwrap();
    std::fs::copy(data.join("test/test_0000.csv"), loose.join("site_a.csv")).unwrap();
    let det = tmp.path().join("det");
    ok(&[
        "detect",
        "--model",
        path(&model_dir.join("model.json")),
        "--data",
        path(&loose),
        "--out",
        path(&det),
    ]);
    assert!(!det.join("metrics.csv").exists());
    let verdicts = std::fs::read_to_string(det.join("verdicts.csv")).unwrap();
    assert!(verdicts.lines().any(|l| l.starts_with("site_a,")));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("data");
    ok(&["--config", &cfg, "simulate", "--out", path(&data)]);

    // Non-empty output directory.
    let again = bin(&["--config", &cfg, "simulate", "--out", path(&data)]);
    assert_eq!(again.status.code(), Some(2));

    // Unknown configuration key.
    let bad_cfg = tmp.path().join("bad.toml");
    std::fs::write(&bad_cfg, "[detector]\nqq = 3\n").unwrap();
    let out = bin(&["--config", path(&bad_cfg), "train", "--data", path(&data), "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));

    // Infeasible q is rejected before anything is written.
    let model_dir = tmp.path().join("model_q");
    let out = bin(&["--config", &cfg, "train", "--q", "500", "--data", path(&data), "--out", path(&model_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("q = 500"));
    assert!(!model_dir.exists());

    // Corrupted and version-bumped model files.
    let model_dir = tmp.path().join("model");
    ok(&["--config", &cfg, "train", "--data", path(&data), "--out", path(&model_dir)]);
    let text = std::fs::read_to_string(model_dir.join("model.json")).unwrap();
    for (name, doc) in [
        ("tampered.json", text.replacen("\"q\":2", "\"q\":3", 1)),
        ("future.json", text.replacen("\"format_version\":1", "\"format_version\":9", 1)),
    ] {
        let p = tmp.path().join(name);
        std::fs::write(&p, doc).unwrap();
        let out = bin(&["detect", "--model", path(&p), "--data", path(&data), "--out", path(&tmp.path().join(name).with_extension("d"))]);
        assert_eq!(out.status.code(), Some(3), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }

    // Missing input.
    let out = bin(&["detect", "--model", "nope.json", "--data", path(&data), "--out", path(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_density_outputs_a_normalised_pdf() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut csv = String::from("value\n");
    for _ in 0..1000 {
        let v: f64 = StandardNormal.sample(&mut rng);
        csv.push_str(&format!("{v}\n"));
    }
    let input = tmp.path().join("x.csv");
    std::fs::write(&input, csv).unwrap();
    let out = tmp.path().join("fit");
    ok(&["fit-density", "--input", path(&input), "--column", "value", "--out", path(&out), "--trace"]);
    let text = std::fs::read_to_string(out.join("density.csv")).unwrap();
    let points: Vec<(f64, f64)> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('x'))
        .map(|l| {
            let (x, f) = l.split_once(',').unwrap();
            (x.parse().unwrap(), f.parse().unwrap())
        })
        .collect();
    let integral: f64 = points.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    assert!((integral - 1.0).abs() < 1e-3, "{integral}");
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("run,padding,moments,gamma_max,iteration,"));
    assert!(trace.lines().count() > 10);
    assert!(out.join("density_summary.json").is_file());

    let constant = tmp.path().join("c.csv");
    std::fs::write(&constant, "v\n".to_string() + &"2.5\n".repeat(100)).unwrap();
    let r = bin(&["fit-density", "--input", path(&constant), "--out", path(&tmp.path().join("c"))]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));

    let broken = tmp.path().join("b.csv");
    std::fs::write(&broken, "v\n1\n2\nabc\n").unwrap();
    let r = bin(&["fit-density", "--input", path(&broken), "--out", path(&tmp.path().join("b"))]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("line 4"));
}

#[test]
fn evaluate_writes_a_labelled_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("eval");
    let r = ok(&["--config", &cfg, "evaluate", "--out", path(&out), "--null"]);
    assert!(String::from_utf8_lossy(&r.stdout).contains("accuracy"));
    for f in ["model.json", "metrics.csv", "verdicts.csv", "report.svg", "manifest.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let manifest = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert!(!manifest.contains(",damaged\n"));
}
