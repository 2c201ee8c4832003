use std::path::Path;
use std::process::{Command, Output};

fn mvfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvfuse"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("MVFUSE_DATA_ROOT")
        .output()
        .expect("spawn mvfuse")
}

fn ok(args: &[&str]) -> String {
    let out = mvfuse(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) {
    ok(&["synth", "--xor", "--classes", "4", "--per-class", "2", "--test-per-class", "1", "--out", s(dir)]);
}

#[test]
fn synth_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    synth(&a);
    synth(&b);
    let manifest = |d: &Path| std::fs::read_to_string(d.join("outputs.json")).unwrap();
    assert_eq!(manifest(&a), manifest(&b));
    assert!(a.join("classInd.txt").exists());
    assert!(a.join("dataset.toml").exists());
}

#[test]
fn invalid_flags_exit_with_usage_code() {
    let t = tempfile::tempdir().unwrap();
    let out = mvfuse(&["synth", "--classes", "0", "--out", s(t.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = mvfuse(&["--workers", "0", "flops"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mvfuse(&["flops", "--views", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mvfuse(&["train-mv", "--out", s(t.path())]);
    assert_eq!(out.status.code(), Some(2), "missing data root");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let t = tempfile::tempdir().unwrap();
    let ds = t.path().join("ds");
    synth(&ds);
    let cfg = t.path().join("run.toml");
    std::fs::write(&cfg, format!("data_root = {:?}\n[train]\nbatch_size = 2\nmax_steps = 1\ncrop_size = 32\n", s(&ds)))
        .unwrap();
    let mv = t.path().join("mv");
    ok(&["train-mv", "--config", s(&cfg), "--batch-size", "4", "--stochastic-depth", "0", "--out", s(&mv)]);
    let resolved: toml::Table =
        toml::from_str(&std::fs::read_to_string(mv.join("resolved_config.toml")).unwrap()).unwrap();
    let train = resolved["train"].as_table().unwrap();
    assert_eq!(train["batch_size"].as_integer(), Some(4));
    assert_eq!(train["max_steps"].as_integer(), Some(1));
    assert_eq!(train["stage"].as_str(), Some("mv-only"));

    std::fs::write(&cfg, "[train]\nstage = \"fusion\"\n").unwrap();
    let out = mvfuse(&["train-mv", "--config", s(&cfg), "--data-root", s(&ds), "--out", s(&mv)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_produces_deterministic_outputs() {
    let t = tempfile::tempdir().unwrap();
    let p = |n: &str| t.path().join(n);
    synth(&p("ds"));
    let ds = p("ds");
    ok(&["precompute-clip", "--data-root", s(&ds), "--out", s(&p("app"))]);
    assert!(p("app/appearance-train.mclf").exists());
    assert!(p("app/appearance-test.mclf").exists());

    let mv_out = ok(&[
        "train-mv",
        "--data-root",
        s(&ds),
        "--max-steps",
        "1",
        "--batch-size",
        "4",
        "--crop-size",
        "32",
        "--stochastic-depth",
        "0",
        "--out",
        s(&p("mv")),
    ]);
    assert!(mv_out.contains("trainable params:"));
    let mv_ckpt = p("mv/mv.ckpt");
    let app_train = p("app/appearance-train.mclf");
    let app_test = p("app/appearance-test.mclf");

    let fu_out = ok(&[
        "train-fusion",
        "--data-root",
        s(&ds),
        "--mv-checkpoint",
        s(&mv_ckpt),
        "--appearance-cache",
        s(&app_train),
        "--max-steps",
        "1",
        "--batch-size",
        "4",
        "--out",
        s(&p("fu")),
    ]);
    let line = fu_out.lines().find(|l| l.starts_with("trainable params:")).expect("param line");
    // 1792*512 + 512 + 512*4 + 4
    assert_eq!(line, "trainable params: 920068");

    let fusion_ckpt = p("fu/fusion.ckpt");
    let eval = |out: &Path| {
        ok(&[
            "eval",
            "--data-root",
            s(&ds),
            "--mode",
            "fusion",
            "--fusion-checkpoint",
            s(&fusion_ckpt),
            "--appearance-cache",
            s(&app_test),
            "--views",
            "2",
            "--out",
            s(out),
        ])
    };
    eval(&p("e1"));
    eval(&p("e2"));
    let read = |d: &str, f: &str| std::fs::read_to_string(p(d).join(f)).unwrap();
    assert_eq!(read("e1", "predictions.jsonl"), read("e2", "predictions.jsonl"));
    assert_eq!(read("e1", "predictions.jsonl").lines().count(), 4);
    assert_eq!(read("e1", "per_class.csv").lines().count(), 1 + 4);
    assert_eq!(read("e1", "confusion.csv").lines().count(), 4);
    let summary: serde_json::Value = serde_json::from_str(&read("e1", "summary.json")).unwrap();
    assert_eq!(summary["views"], 2);
    assert_eq!(summary["crop_size"], 32);
    assert_eq!(summary["trainable_params"], 920068);

    // Zero-shot needs neither checkpoint.
    ok(&[
        "eval",
        "--data-root",
        s(&ds),
        "--mode",
        "clip-only",
        "--appearance-cache",
        s(&app_test),
        "--out",
        s(&p("c")),
    ]);
    ok(&[
        "eval",
        "--data-root",
        s(&ds),
        "--mode",
        "mv-only",
        "--mv-checkpoint",
        s(&mv_ckpt),
        "--views",
        "2",
        "--out",
        s(&p("m")),
    ]);
    let report = ok(&[
        "report",
        "--clip-only",
        s(&p("c")),
        "--mv-only",
        s(&p("m")),
        "--fusion",
        s(&p("e1")),
        "--out",
        s(&p("r")),
    ]);
    assert!(report.contains("clip-only"));
    for f in ["ablation.txt", "ablation.csv", "ablation.json", "qualitative.txt", "outputs.json"] {
        assert!(p("r").join(f).exists(), "{f}");
    }

    let out = mvfuse(&["eval", "--data-root", s(&ds), "--mode", "fusion", "--out", s(&p("x"))]);
    assert_eq!(out.status.code(), Some(2), "fusion without a checkpoint");
}

#[test]
fn flops_builtin_table() {
    let out = ok(&["flops"]);
    assert!(out.contains("counting policy"));
    let total = |model: &str| -> f64 {
        let line = out.lines().find(|l| l.starts_with(model) && l.contains("TOTAL")).unwrap();
        line.split_whitespace().last().unwrap().parse().unwrap()
    };
    assert!((total("clip-only") - 4.4).abs() < 0.05);
    assert!((total("mv-only") - 12.5).abs() < 0.05);
    assert!((total("fusion") - 16.9).abs() < 0.05);
}

#[test]
fn flops_custom_ledgers() {
    let t = tempfile::tempdir().unwrap();
    let ledger = t.path().join("ledger.toml");
    std::fs::write(
        &ledger,
        "[[ledger]]\nname = \"tiny\"\n[[ledger.branch]]\nname = \"a\"\nper_view_gflops = 1.5\ntemporal_views = 4\nspatial_crops = 1\n",
    )
    .unwrap();
    let out = ok(&["flops", "--ledger", s(&ledger), "--out", s(&t.path().join("o"))]);
    let line = out.lines().find(|l| l.starts_with("tiny") && l.contains("TOTAL")).unwrap();
    assert_eq!(line.split_whitespace().last(), Some("6.0000"));
    assert!(t.path().join("o/flops.csv").exists());

    let bad = t.path().join("bad.toml");
    std::fs::write(
        &bad,
        "[[ledger]]\nname = \"odd\"\n[[ledger.branch]]\nname = \"x\"\ntemporal_views = 1\nspatial_crops = 1\ninput = [3, 8, 8]\nlayers = [{ kind = \"lstm\" }]\n",
    )
    .unwrap();
    let out = mvfuse(&["flops", "--ledger", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lstm"));
}
