mod common;

use std::path::Path;
use std::process::Command;

use encmac::cli::{cmd_search, cmd_simulate, cmd_table, ExperimentConfig};
use encmac::error::Error;
use encmac::quant::QuantScheme;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_encmac"))
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn small_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        operand1: QuantScheme::uniform(3).unwrap(),
        operand2: QuantScheme::uniform(3).unwrap(),
        out: out.to_path_buf(),
        ..Default::default()
    };
    c.search.max_samples = 400;
    c
}

#[test]
fn table_two_bit_values() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        operand1: common::w2(),
        operand2: common::w2(),
        out: dir.path().to_path_buf(),
        ..Default::default()
    };
    let path = cmd_table(&c).unwrap();
    let text = read(&path);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("code1,code2,value"));
    let rows: Vec<(String, String, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 16);
    let want = [
        ("10", "10", 4.0),
        ("10", "11", 2.0),
        ("10", "01", -2.0),
        ("11", "11", 1.0),
        ("11", "01", -1.0),
        ("01", "10", -2.0),
        ("01", "01", 1.0),
        ("00", "10", 0.0),
    ];
    for (a, b, v) in want {
        let row = rows.iter().find(|r| r.0 == a && r.1 == b).unwrap();
        assert_eq!(row.2, v, "row ({a},{b})");
    }
    assert!(!text.contains("-0\n"));
}

#[test]
fn unsupported_width_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["table", "--width", "9", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported operand width 9"));
    let out = bin().args(["search", "--bogus-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_output_dir_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let c = ExperimentConfig {
        out: missing.clone(),
        ..Default::default()
    };
    match cmd_table(&c) {
        Err(Error::Io { path, .. }) => assert_eq!(path, missing),
        other => panic!("expected an io error, got {other:?}"),
    }
    let out = bin().args(["table", "--out"]).arg(&missing).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(missing.to_str().unwrap()));
}

#[test]
fn search_is_byte_identical_and_writes_traces() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (c1, c2) = (small_config(d1.path()), small_config(d2.path()));
    cmd_search(&c1).unwrap();
    cmd_search(&c2).unwrap();
    for f in ["encoding.json", "rmse_vs_samples.csv", "rmse_vs_width.csv"] {
        assert_eq!(read(&d1.path().join(f)), read(&d2.path().join(f)), "{f}");
    }
    assert!(read(&d1.path().join("rmse_vs_samples.csv")).starts_with("sample_index,best_rmse\n0,"));
    assert!(read(&d1.path().join("rmse_vs_width.csv")).starts_with("width,best_rmse\n18,"));
}

#[test]
fn unreachable_target_exits_3_and_writes_best() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "search",
            "--width",
            "2",
            "--min-width",
            "1",
            "--max-width",
            "2",
            "--target-rmse",
            "1e-30",
        ])
        .args(["--samples", "30", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let enc = encmac::fit::Encoding::from_json(&read(&dir.path().join("encoding.json"))).unwrap();
    assert!(enc.output_width() <= 2);
}

#[test]
fn simulate_latencies_and_cost() {
    let dir = tempfile::tempdir().unwrap();
    let enc_path = dir.path().join("exact.json");
    std::fs::write(&enc_path, common::exact_w2_encoding().to_json()).unwrap();
    let mut c = ExperimentConfig {
        out: dir.path().to_path_buf(),
        ..Default::default()
    };
    c.simulate.encoding = Some(enc_path.clone());

    c.simulate.array_size = 1;
    let r = cmd_simulate(&c).unwrap();
    assert_eq!(
        (r.encoded.first_result_latency, r.traditional.first_result_latency),
        (1, 1)
    );

    c.simulate.array_size = 2;
    let r = cmd_simulate(&c).unwrap();
    // N² multipliers of 4 physical gates; SET is a constant.
    assert_eq!(r.encoded.cost.multiplier_gates_total, 4 * 4);
    assert_eq!(r.max_abs_error, 0.0);

    let out = bin()
        .args(["simulate", "--array-size", "256", "--matrices", "1", "--encoding"])
        .arg(&enc_path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(&dir.path().join("simulate_report.json"))).unwrap();
    assert_eq!(report["encoded"]["first_result_latency"], 511);
    assert_eq!(report["traditional"]["first_result_latency"], 766);
    assert_eq!(report["encoded"]["cost"]["multiplier_gates_total"], 256 * 256 * 4);
}

#[test]
fn config_file_round_trip_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(dir.path());
    c.seed = 77;
    c.search.target_rmse = Some(3.5);
    c.sweep.widths = vec![8, 12];
    let text = c.to_toml();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, &text).unwrap();

    let mut g = encmac::cli::GlobalArgs {
        config: Some(path),
        ..Default::default()
    };
    assert_eq!(encmac::cli::resolve_config(&g).unwrap(), c);
    g.seed = Some(5);
    g.samples = Some(9);
    let r = encmac::cli::resolve_config(&g).unwrap();
    assert_eq!((r.seed, r.search.max_samples, r.search.target_rmse), (5, 9, Some(3.5)));
    g.width = Some(9);
    assert!(matches!(
        encmac::cli::resolve_config(&g),
        Err(Error::UnsupportedWidth(9))
    ));
}

#[test]
fn finetune_and_eval_commands() {
    let dir = tempfile::tempdir().unwrap();
    let enc_path = dir.path().join("exact.json");
    std::fs::write(&enc_path, common::exact_w2_encoding().to_json()).unwrap();
    let mut c = ExperimentConfig {
        out: dir.path().to_path_buf(),
        ..Default::default()
    };
    c.train.encoding = Some(enc_path);
    c.train.blobs_per_class = 60;
    c.train.float_epochs = 5;
    c.train.finetune_epochs = 2;
    c.train.finetune_lr = 0.0;

    let r = encmac::cli::cmd_finetune(&c).unwrap();
    // Zero-error encoding: encoded and exact metrics coincide.
    assert_eq!(r.before.encoded, r.before.exact);
    assert_eq!(r.after.encoded, r.before.encoded);
    let loss = read(&dir.path().join("loss.csv"));
    let values: Vec<&str> = loss.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values.len(), 3);
    assert!(values.iter().all(|v| *v == values[0]), "{loss}");
    assert!(dir.path().join("encoding_finetuned.json").exists());

    c.train.network = Some(dir.path().join("network.json"));
    let e = encmac::cli::cmd_eval(&c).unwrap();
    assert_eq!(e.encoded, r.before.encoded);
    assert!(read(&dir.path().join("metrics.json")).contains("\"exact\""));
}

#[test]
fn sweep_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(dir.path());
    c.search.max_samples = 100;
    c.sweep.widths = vec![6, 12, 18];
    c.sweep.array_sizes = vec![1, 4, 256];
    let probes = encmac::cli::cmd_sweep(&c).unwrap();
    assert_eq!(probes.iter().map(|p| p.width).collect::<Vec<_>>(), vec![6, 12, 18]);
    let arr = read(&dir.path().join("array_sweep.csv"));
    assert!(arr.lines().any(|l| l.starts_with("256,1,511,766,511,766,")), "{arr}");
    assert!(arr.lines().any(|l| l.starts_with("1,1,1,1,1,1,")), "{arr}");
    assert_eq!(read(&dir.path().join("rmse_vs_width.csv")).lines().count(), 4);
}
