use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn spade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spade"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_flags() -> Vec<String> {
    [
        "data.n_series=6",
        "data.periods=48",
        "model.conv_layers=3",
        "model.conv_filters=4",
        "model.kernel_size=3",
        "model.agnostic_width=8",
        "model.future_width=4",
        "model.attention_width=8",
        "train.epochs=2",
        "train.batch_size=3",
        "train.validation_periods=12",
    ]
    .iter()
    .flat_map(|s| ["--set".to_string(), s.to_string()])
    .collect()
}

fn run_ok(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = spade(&refs);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn args(parts: &[&str], dir: &Path, extra: &[String]) -> Vec<String> {
    let mut v: Vec<String> = parts.iter().map(|s| s.to_string()).collect();
    v.push("--out".into());
    v.push(dir.to_string_lossy().into_owned());
    v.extend(small_flags());
    v.extend_from_slice(extra);
    v
}

fn generate(dir: &Path, seed: &str) -> PathBuf {
    run_ok(&args(&["generate", "--seed", seed], dir, &[]));
    dir.join("data.csv")
}

#[test]
fn generate_is_reproducible_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let a = generate(&tmp.path().join("a"), "3");
    let b = generate(&tmp.path().join("b"), "3");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    for f in ["labels.csv", "manifest.json", "config.json"] {
        assert!(tmp.path().join("a").join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    // max(1, round(0.03 · 48)) = 1 per series
    assert_eq!(manifest["injected_points"], 6);
    let labels = std::fs::read_to_string(tmp.path().join("a/labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 7);
}

#[test]
fn generate_rejects_zero_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spade(&[
        "generate",
        "--out",
        tmp.path().to_str().unwrap(),
        "--set",
        "data.contamination_rate=0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("contamination rate"));
}

#[test]
fn train_evaluate_plot_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(&tmp.path().join("data"), "1");
    let data_s = data.to_string_lossy().into_owned();
    let t1 = tmp.path().join("t1");
    let t2 = tmp.path().join("t2");
    run_ok(&args(&["train", "--data", &data_s, "--seed", "5"], &t1, &[]));
    run_ok(&args(&["train", "--data", &data_s, "--seed", "5"], &t2, &[]));
    let ckpt = t1.join("model.ckpt");
    assert_eq!(
        std::fs::read(&ckpt).unwrap(),
        std::fs::read(t2.join("model.ckpt")).unwrap()
    );
    let report = std::fs::read_to_string(t1.join("train_report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 2);
    let last: serde_json::Value = serde_json::from_str(report.lines().last().unwrap()).unwrap();
    assert_eq!(last["checksum"].as_str().unwrap().len(), 64);

    let ev = tmp.path().join("eval");
    let ckpt_s = ckpt.to_string_lossy().into_owned();
    run_ok(&args(
        &["evaluate", "--data", &data_s, "--checkpoint", &ckpt_s],
        &ev,
        &[],
    ));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    let cells = metrics["variants"][0]["metrics"].as_array().unwrap();
    assert_eq!(cells.len(), 6);
    let scopes: Vec<&str> = cells.iter().map(|c| c["scope"].as_str().unwrap()).collect();
    for s in ["Overall", "Peak", "PostPeak"] {
        assert_eq!(scopes.iter().filter(|&&x| x == s).count(), 2);
    }
    assert!(ev.join("metrics.txt").exists());
    let forecasts = ev.join("forecasts.csv");
    assert!(forecasts.exists());

    let pl = tmp.path().join("plot");
    let fc_s = forecasts.to_string_lossy().into_owned();
    run_ok(&args(
        &["plot", "--data", &data_s, "--forecasts", &fc_s, "--series", "S0"],
        &pl,
        &[],
    ));
    let svg = std::fs::read_to_string(pl.join("plot_S0.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let again = tmp.path().join("plot2");
    run_ok(&args(
        &["plot", "--data", &data_s, "--forecasts", &fc_s, "--series", "S0"],
        &again,
        &[],
    ));
    assert_eq!(svg, std::fs::read_to_string(again.join("plot_S0.svg")).unwrap());

    let bad = spade(&[
        "plot",
        "--data",
        &data_s,
        "--forecasts",
        &fc_s,
        "--series",
        "nope",
        "--out",
        pl.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn perfect_forecasts_score_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(&tmp.path().join("data"), "2");
    let records = spade::data::load_csv(&data, &spade::data::CsvSchema::default()).unwrap();
    // one row per creation time, horizon and quantile holding the true target
    let mut csv = String::from("series_id,creation_time,timestamp,lead,span,quantile,value\n");
    let horizons = [(1, 1), (2, 1), (3, 1), (1, 3)];
    for r in &records {
        for t in 0..r.len() {
            for &(lead, span) in &horizons {
                if t + lead + span > r.len() {
                    continue;
                }
                let y: f64 = r.demand[t + lead..t + lead + span].iter().sum();
                for q in [0.5, 0.9] {
                    csv.push_str(&format!("{},{t},,{lead},{span},{q},{y}\n", r.series_id));
                }
            }
        }
    }
    let fc = tmp.path().join("perfect.csv");
    std::fs::write(&fc, csv).unwrap();
    let ev = tmp.path().join("eval");
    run_ok(&args(
        &[
            "evaluate",
            "--data",
            data.to_str().unwrap(),
            "--forecasts",
            fc.to_str().unwrap(),
        ],
        &ev,
        &["--set".into(), "eval.split=all".into()],
    ));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    for cell in metrics["variants"][0]["metrics"].as_array().unwrap() {
        assert_eq!(cell["mean"].as_f64(), Some(0.0), "{cell}");
    }
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(&tmp.path().join("data"), "1");
    let missing = spade(&[
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        tmp.path().join("none.ckpt").to_str().unwrap(),
        "--out",
        tmp.path().join("e").to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("none.ckpt"));

    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "series_id,timestamp,demand,peak_indicator\n").unwrap();
    let out = spade(&[
        "train",
        "--data",
        empty.to_str().unwrap(),
        "--out",
        tmp.path().join("t").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));

    assert_eq!(spade(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(spade(&["train", "--set", "train.epochs=0"]).status.code(), Some(1));
    assert_eq!(spade(&["--help"]).status.code(), Some(0));
}

#[test]
fn ablate_counts_and_self_diff() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(&tmp.path().join("data"), "4");
    let ab = tmp.path().join("ab");
    run_ok(&args(
        &["ablate", "--data", data.to_str().unwrap(), "--jobs", "2"],
        &ab,
        &[
            "--set".into(),
            r#"ablate.variants=["original","masked-conv"]"#.into(),
            "--set".into(),
            "ablate.seeds=2".into(),
            "--set".into(),
            "train.epochs=1".into(),
        ],
    ));
    let report: spade::evaluation::MetricReport =
        serde_json::from_str(&std::fs::read_to_string(ab.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(report.seeds, vec![0, 1]);
    assert_eq!(report.variants.len(), 2);
    for m in &report.variants[0].metrics {
        assert_eq!(m.per_seed.len(), 2);
        if m.mean.is_some() {
            assert_eq!(m.diff_pct, Some(0.0));
        }
    }
    let table = std::fs::read_to_string(ab.join("ablation.txt")).unwrap();
    assert!(table.contains("masked-conv"));
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ab.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["jobs"], 2);
}
