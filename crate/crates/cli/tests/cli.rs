use std::fs;
use std::path::Path;

use pluralad::run_from;
use pluralad_core::eval::DatasetMetrics;

fn run(args: &[&str]) -> Result<(), (i32, String)> {
    let mut full = vec!["pluralad"];
    full.extend_from_slice(args);
    run_from(full).map_err(|e| (e.code, e.message))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny corpus plus a config with a narrow network, so every command runs
/// in well under a second.
fn small_setup(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let corpus = dir.join("corpus");
    let config = dir.join("small.json");
    fs::write(&config, r#"{"channels":[4,8],"train":{"batch_size":2}}"#).unwrap();
    run(&["gen-data", "--out", s(&corpus), "--n-train", "3", "--n-test", "2", "--size", "128"]).unwrap();
    (corpus, config)
}

#[test]
fn missing_out_is_a_usage_error() {
    let (code, msg) = run(&["gen-data", "--n-train", "1"]).unwrap_err();
    assert_eq!(code, 2, "{msg}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let (code, _) = run(&["eval", "--bogus"]).unwrap_err();
    assert_eq!(code, 2);
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        run(&["gen-data", "--out", s(&dir.path().join(name)), "--n-train", "2", "--n-test", "2", "--size", "128"])
            .unwrap();
    }
    for f in ["manifest.json", "boxes.csv", "train/train_0001.png", "test/test_0001.png"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_flag_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 7, "n_train": 1, "n_test": 1, "data": {"texture": {"size": 128}}}"#).unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run(&["gen-data", "--config", s(&cfg), "--out", s(&a)]).unwrap();
    run(&["gen-data", "--config", s(&cfg), "--out", s(&b), "--seed", "7"]).unwrap();
    run(&["gen-data", "--config", s(&cfg), "--out", s(&c), "--seed", "8"]).unwrap();
    let m = |d: &Path| fs::read(d.join("manifest.json")).unwrap();
    assert_eq!(m(&a), m(&b));
    assert_ne!(m(&a), m(&c));
}

#[test]
fn train_refuses_anomalous_training_entries() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, config) = small_setup(dir.path());
    let path = corpus.join("manifest.json");
    let mut manifest: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    manifest["entries"][0]["n_anomalies"] = 1.into();
    assert_eq!(manifest["entries"][0]["role"], "train");
    fs::write(&path, serde_json::to_vec(&manifest).unwrap()).unwrap();
    let out = dir.path().join("m.picn");
    let (code, msg) =
        run(&["train", "--config", s(&config), "--corpus", s(&corpus), "--out", s(&out), "--quiet"]).unwrap_err();
    assert_eq!(code, 1);
    assert!(msg.contains("train_0000"), "{msg}");
    assert!(!out.exists());
}

#[test]
fn pipeline_end_to_end_on_a_tiny_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, config) = small_setup(dir.path());
    let model = dir.path().join("m.picn");
    run(&[
        "train",
        "--config",
        s(&config),
        "--corpus",
        s(&corpus),
        "--out",
        s(&model),
        "--iterations",
        "20",
        "--eval-every",
        "5",
        "--quiet",
    ])
    .unwrap();
    let history = fs::read_to_string(dir.path().join("m.loss.csv")).unwrap();
    assert!(history.starts_with("iteration,loss\n"));
    assert_eq!(history.lines().count(), 5);

    let heat = dir.path().join("heat");
    run(&[
        "heatmap",
        "--config",
        s(&config),
        "--model",
        s(&model),
        "--corpus",
        s(&corpus),
        "--out",
        s(&heat),
        "--plot-data",
    ])
    .unwrap();
    for id in ["test_0000", "test_0001"] {
        for ext in ["phmf", "png", "overlay.png"] {
            assert!(heat.join(format!("{id}.{ext}")).is_file(), "{id}.{ext}");
        }
    }
    let metrics = dir.path().join("metrics.json");
    let boxes = corpus.join("boxes.csv");
    run(&["eval", "--heatmaps", s(&heat), "--boxes", s(&boxes), "--out", s(&metrics)]).unwrap();
    let m: DatasetMetrics = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(m.images.len(), 2);
    let mean = m.images.iter().map(|i| i.auc).sum::<f64>() / 2.0;
    assert_eq!(m.mean_auc, mean);

    // boxes for an image without a heatmap
    let extra = dir.path().join("extra.csv");
    fs::write(&extra, format!("{}test_9999,1,1,2,2\n", fs::read_to_string(&boxes).unwrap())).unwrap();
    let (code, msg) = run(&["eval", "--heatmaps", s(&heat), "--boxes", s(&extra), "--out", s(&metrics)]).unwrap_err();
    assert_eq!(code, 1);
    assert!(msg.contains("test_9999"), "{msg}");
}

#[test]
fn heatmap_single_completion_ignores_dropout() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, config) = small_setup(dir.path());
    let model = dir.path().join("m.picn");
    run(&["train", "--config", s(&config), "--corpus", s(&corpus), "--out", s(&model), "--iterations", "5", "--quiet"])
        .unwrap();
    let image = corpus.join("test/test_0000.png");
    let mut outs = Vec::new();
    for (name, p) in [("a", "0.5"), ("b", "0.9")] {
        let out = dir.path().join(name);
        run(&[
            "heatmap",
            "--config",
            s(&config),
            "--model",
            s(&model),
            "--images",
            s(&image),
            "--out",
            s(&out),
            "--m",
            "1",
            "--p-drop",
            p,
        ])
        .unwrap();
        outs.push(fs::read(out.join("test_0000.phmf")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn heatmap_missing_image_fails_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("heat");
    let (code, _) = run(&[
        "heatmap",
        "--model",
        s(&dir.path().join("none.picn")),
        "--images",
        s(&dir.path().join("none.png")),
        "--out",
        s(&out),
    ])
    .unwrap_err();
    assert_eq!(code, 1);
    assert!(!out.exists());
}

#[test]
fn theory_without_separation_is_chance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    run(&["theory", "--mu-sep", "0", "--trials", "4000", "--out", s(&out)]).unwrap();
    let csv = fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "M,auc,stderr,semi_analytic_auc,semi_analytic_stderr,agree");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    let ms: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ms, ["1", "2", "5", "10", "25", "50", "100", "250"]);
    for r in &rows {
        let auc: f64 = r[1].parse().unwrap();
        assert!((auc - 0.5).abs() < 0.05, "M={} auc {auc}", r[0]);
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(summary["rows"].as_array().unwrap().len(), 8);
}

#[test]
fn theory_rejects_zero_m() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) =
        run(&["theory", "--m-list", "0,1", "--trials", "10", "--out", s(&dir.path().join("x.csv"))]).unwrap_err();
    assert_eq!(code, 2);
}
