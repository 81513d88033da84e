//! End-to-end checks on the `renscen` binary: the synth -> train ->
//! forecast -> evaluate -> uc pipeline on a tiny configuration, exit
//! codes, and byte-identical reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn renscen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_renscen"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (status {:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

/// Tiny run configuration: small enough that two epochs train in
/// moments, complete enough to exercise validation and best-model
/// tracking.
const TINY_CONFIG: &str = r#"{
    "model": {
        "n_t": 8, "n_lag": 4, "n_m": 8, "n_e": 2, "dec_layers": 1,
        "heads": 2, "d_z": 4, "ffn_mult": 2, "sparse_c": 1.0,
        "p_dropout": 0.2, "n_sites": 1, "spatial_kernel": 3,
        "disc_channels": 4, "disc_kernel": 3, "disc_stride": 2,
        "disc_layers": 2, "style_hidden": 8
    },
    "train": {
        "n_ep": 2, "batch": 2, "n_d": 1, "n_f": 2, "n_n": 1,
        "checkpoint_every": 1, "validate_every": 1, "seed": 5
    }
}"#;

const TINY_SYSTEM: &str = r#"{
    "units": [
        {"p_min": 10.0, "p_max": 60.0, "marginal_cost": 20.0,
         "no_load_cost": 5.0, "startup_cost": 30.0},
        {"p_min": 5.0, "p_max": 40.0, "marginal_cost": 35.0,
         "no_load_cost": 3.0, "startup_cost": 20.0}
    ],
    "load_mw": [50.0, 70.0, 90.0, 60.0],
    "site_capacity_mw": {"site00": 100.0}
}"#;

struct Pipeline {
    #[allow(dead_code)] // owns the directory lifetime
    dir: tempfile::TempDir,
    data: PathBuf,
    schema: PathBuf,
    config: PathBuf,
    model: PathBuf,
}

/// Synthesize a week of hourly wind data and train the tiny model on it.
fn synth_and_train() -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let synth_dir = dir.path().join("data");
    let out = renscen(&[
        "synth",
        "--profile",
        "wind",
        "--days",
        "7",
        "--seed",
        "3",
        "--out",
        synth_dir.to_str().unwrap(),
    ]);
    assert_ok(&out, "synth");

    let config = dir.path().join("config.json");
    fs::write(&config, TINY_CONFIG).unwrap();
    let model = dir.path().join("model");
    let data = synth_dir.join("synthetic.csv");
    let schema = synth_dir.join("schema.json");
    let out = renscen(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--schema",
        schema.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    assert_ok(&out, "train");
    Pipeline { dir, data, schema, config, model }
}

#[test]
fn pipeline_runs_end_to_end() {
    let p = synth_and_train();

    for artifact in [
        "model_config.json",
        "run_config.json",
        "forecaster.json",
        "discriminator.json",
        "forecaster_best.json",
        "validation.json",
        "trainlog.csv",
        "manifest.json",
    ] {
        assert!(p.model.join(artifact).exists(), "train must write {artifact}");
    }
    let log = String::from_utf8(read(&p.model.join("trainlog.csv"))).unwrap();
    // 2 epochs x (1 critic + 1 forecaster step) + header
    assert_eq!(log.lines().count(), 5, "unexpected training log:\n{log}");

    // --- forecast from the trained model, two windows -------------------
    let fdir = p.dir.path().join("forecast");
    let out = renscen(&[
        "forecast",
        "--model",
        p.model.to_str().unwrap(),
        "--best",
        "--data",
        p.data.to_str().unwrap(),
        "--schema",
        p.schema.to_str().unwrap(),
        "--nf",
        "2",
        "--nn",
        "2",
        "--count",
        "2",
        "--seed",
        "9",
        "--out",
        fdir.to_str().unwrap(),
    ]);
    assert_ok(&out, "forecast");
    for k in 0..2 {
        for stem in ["scenarios", "actual", "persistence"] {
            assert!(fdir.join(format!("{stem}_{k:03}.csv")).exists());
        }
        let summary: serde_json::Value =
            serde_json::from_slice(&read(&fdir.join(format!("summary_{k:03}.json")))).unwrap();
        assert_eq!(summary["n_f"], 2);
        assert_eq!(summary["n_n"], 2);
        assert_eq!(summary["lead"], 4);
        assert!(summary["var_hat"].as_f64().unwrap() >= 0.0);
    }

    let scen0 = fdir.join("scenarios_000.csv");
    let scen1 = fdir.join("scenarios_001.csv");
    let act0 = fdir.join("actual_000.csv");
    let act1 = fdir.join("actual_001.csv");
    // distinct windows were emitted (scenario values themselves may
    // saturate at the clip bounds on a barely-trained model)
    assert_ne!(read(&act0), read(&act1), "distinct windows must differ");

    // --- evaluate the two days ------------------------------------------
    let edir = p.dir.path().join("eval");
    let out = renscen(&[
        "evaluate",
        "--scenarios",
        scen0.to_str().unwrap(),
        scen1.to_str().unwrap(),
        "--actual",
        act0.to_str().unwrap(),
        act1.to_str().unwrap(),
        "--out",
        edir.to_str().unwrap(),
    ]);
    assert_ok(&out, "evaluate");
    let metrics: serde_json::Value =
        serde_json::from_slice(&read(&edir.join("metrics.json"))).unwrap();
    for key in ["rmse_avg", "crps_avg", "ss_crps", "pinball_avg", "energy"] {
        assert!(metrics[key].is_number(), "metrics.json must report {key}");
    }
    let per_day = String::from_utf8(read(&edir.join("per_day.csv"))).unwrap();
    assert_eq!(per_day.lines().count(), 3, "header + one row per day");
    assert!(edir.join("fan_000.csv").exists());
    assert!(edir.join("fan_001.csv").exists());

    // --- unit commitment over the same scenario files -------------------
    let system = p.dir.path().join("system.json");
    fs::write(&system, TINY_SYSTEM).unwrap();
    let udir = p.dir.path().join("uc");
    let out = renscen(&[
        "uc",
        "--system",
        system.to_str().unwrap(),
        "--scenarios",
        scen0.to_str().unwrap(),
        scen1.to_str().unwrap(),
        "--observed",
        act0.to_str().unwrap(),
        act1.to_str().unwrap(),
        "--out",
        udir.to_str().unwrap(),
    ]);
    assert_ok(&out, "uc");
    let report: serde_json::Value =
        serde_json::from_slice(&read(&udir.join("uc_report.json"))).unwrap();
    assert_eq!(report["days"].as_array().unwrap().len(), 2);
    assert!(report["total_actual"].as_f64().unwrap() > 0.0);
    let days_csv = String::from_utf8(read(&udir.join("uc_days.csv"))).unwrap();
    assert_eq!(days_csv.lines().count(), 3);
}

#[test]
fn forecast_rerun_is_byte_identical() {
    let p = synth_and_train();
    let fdir = p.dir.path().join("forecast");
    let args = [
        "forecast",
        "--model",
        p.model.to_str().unwrap(),
        "--data",
        p.data.to_str().unwrap(),
        "--schema",
        p.schema.to_str().unwrap(),
        "--nf",
        "2",
        "--nn",
        "1",
        "--seed",
        "21",
        "--out",
        fdir.to_str().unwrap(),
    ];
    assert_ok(&renscen(&args), "first forecast");
    let scen = read(&fdir.join("scenarios_000.csv"));
    let manifest = read(&fdir.join("manifest.json"));
    assert_ok(&renscen(&args), "second forecast");
    assert_eq!(read(&fdir.join("scenarios_000.csv")), scen, "scenario CSV must not drift");
    assert_eq!(read(&fdir.join("manifest.json")), manifest, "manifest must not drift");

    // a different seed must actually change the draw
    let mut reseeded: Vec<&str> = args.to_vec();
    let seed_at = reseeded.iter().position(|a| *a == "--seed").unwrap() + 1;
    reseeded[seed_at] = "22";
    assert_ok(&renscen(&reseeded), "reseeded forecast");
    assert_ne!(read(&fdir.join("scenarios_000.csv")), scen, "seed must matter");
}

#[test]
fn synth_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("d");
    let args = [
        "synth",
        "--profile",
        "pv",
        "--days",
        "2",
        "--sites",
        "2",
        "--seed",
        "11",
        "--out",
        out_dir.to_str().unwrap(),
    ];
    assert_ok(&renscen(&args), "first synth");
    let csv = read(&out_dir.join("synthetic.csv"));
    let schema = read(&out_dir.join("schema.json"));
    let manifest = read(&out_dir.join("manifest.json"));
    assert_ok(&renscen(&args), "second synth");
    assert_eq!(read(&out_dir.join("synthetic.csv")), csv);
    assert_eq!(read(&out_dir.join("schema.json")), schema);
    assert_eq!(read(&out_dir.join("manifest.json")), manifest);
}

#[test]
fn tune_writes_best_config_and_trials() {
    let dir = tempfile::tempdir().unwrap();
    let synth_dir = dir.path().join("data");
    assert_ok(
        &renscen(&["synth", "--days", "7", "--seed", "3", "--out", synth_dir.to_str().unwrap()]),
        "synth",
    );
    // degenerate one-point space so a single short trial decides
    let mut cfg: serde_json::Value = serde_json::from_str(TINY_CONFIG).unwrap();
    cfg["tuning"] = serde_json::json!({
        "alpha": {"lo": 8e-4, "hi": 8e-4},
        "batch": [2],
        "n_d": [1, 1],
        "n_f": [2, 2],
        "n_n": [1, 1],
        "p_dropout": {"lo": 0.2, "hi": 0.2},
        "lambda_gp": {"lo": 3.0, "hi": 3.0},
        "trials": 2,
        "epochs_per_trial": 1
    });
    let config = dir.path().join("config.json");
    fs::write(&config, serde_json::to_string(&cfg).unwrap()).unwrap();

    let tdir = dir.path().join("tune");
    let out = renscen(&[
        "tune",
        "--config",
        config.to_str().unwrap(),
        "--data",
        synth_dir.join("synthetic.csv").to_str().unwrap(),
        "--schema",
        synth_dir.join("schema.json").to_str().unwrap(),
        "--seed",
        "13",
        "--out",
        tdir.to_str().unwrap(),
    ]);
    assert_ok(&out, "tune");
    let trials = String::from_utf8(read(&tdir.join("trials.csv"))).unwrap();
    assert_eq!(trials.lines().count(), 3, "header + 2 trials:\n{trials}");
    let best = read(&tdir.join("best_config.json"));
    let best: serde_json::Value = serde_json::from_slice(&best).unwrap();
    assert_eq!(best["train"]["alpha"].as_f64().unwrap(), 8e-4);
    assert_eq!(best["train"]["batch"].as_u64().unwrap(), 2);
}

#[test]
fn exit_codes_separate_usage_data_and_numeric_failures() {
    // unknown flag: clap usage error
    let out = renscen(&["synth", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));

    // bad resolution: our own usage validation
    let dir = tempfile::tempdir().unwrap();
    let out = renscen(&[
        "synth",
        "--resolution-minutes",
        "7",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("divide a day"));

    // missing input file: data error
    let out = renscen(&[
        "train",
        "--data",
        "/nonexistent/data.csv",
        "--schema",
        "/nonexistent/schema.json",
        "--out",
        dir.path().join("y").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));

    // malformed scenario CSV: data error with the offending path named
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "wrong,header\n1,2\n").unwrap();
    let out = renscen(&[
        "evaluate",
        "--scenarios",
        bad.to_str().unwrap(),
        "--actual",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("z").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv"));
}

#[test]
fn train_rejects_channel_mismatch_as_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let synth_dir = dir.path().join("data");
    assert_ok(
        &renscen(&["synth", "--days", "7", "--out", synth_dir.to_str().unwrap()]),
        "synth",
    );
    let mut cfg: serde_json::Value = serde_json::from_str(TINY_CONFIG).unwrap();
    cfg["model"]["enc_channels"] = serde_json::json!(["site00:bogus"]);
    let config = dir.path().join("config.json");
    fs::write(&config, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = renscen(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        synth_dir.join("synthetic.csv").to_str().unwrap(),
        "--schema",
        synth_dir.join("schema.json").to_str().unwrap(),
        "--out",
        dir.path().join("m").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("channels"));
}
