//! Command-line wiring: `synth`, `train`, `forecast`, `evaluate`, `uc`,
//! and `tune` subcommands over the library modules.
//!
//! Every run writes its artifacts atomically (temp file + rename) and
//! drops a `manifest.json` naming the command, the effective seed, a
//! hash of the effective configuration, and the input/output paths.
//! Nothing in any artifact depends on wall-clock time, so a rerun with
//! the same inputs and seed is byte-identical.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error
//! (files, shapes, infeasible instances), 4 numeric failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{CasePreset, ModelConfig, RunConfig, TuningSpace};
use crate::data::csvio::{ingest_csv_path, write_csv_path};
use crate::data::synth::{synth_profile, ProfileKind, SynthSpec};
use crate::data::window::{build_windows, split_411, SplitIndices, WindowSet};
use crate::data::{Dataset, SchemaConfig};
use crate::embed::discriminator_input;
use crate::metrics::{metrics_report, quantile_sorted, ScenarioDay, ScoreOptions};
use crate::params::ParamStore;
use crate::scenario::{sample_scenarios, scenario_csv, ScenarioSummary};
use crate::seedstream::subseed;
use crate::trainer::{random_search, train, ModelState, TrainError};
use crate::uc::{rolling_evaluation, Penalties, ThermalUnit, UcInstance};

/// Scenario forecasting for renewable generation: train an
/// uncertainty-aware forecaster, sample scenario sets, score them, and
/// feed them to a toy unit-commitment study.
#[derive(Debug, Parser)]
#[command(name = "renscen", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-channel generation dataset.
    Synth(SynthArgs),
    /// Train the forecaster/critic pair on a windowed dataset.
    Train(TrainArgs),
    /// Sample scenario sets from a trained model.
    Forecast(ForecastArgs),
    /// Score scenario sets against realized power.
    Evaluate(EvaluateArgs),
    /// Solve the two-stage unit commitment over scenario sets.
    Uc(UcArgs),
    /// Random-search the training hyperparameters.
    Tune(TuneArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generation profile to synthesize.
    #[arg(long, value_enum, default_value_t = ProfileKind::Wind)]
    pub profile: ProfileKind,
    #[arg(long, default_value_t = 120)]
    pub days: usize,
    #[arg(long, default_value_t = 1)]
    pub sites: usize,
    /// Node spacing in minutes; must divide a day.
    #[arg(long, default_value_t = 60)]
    pub resolution_minutes: u32,
    #[arg(long, default_value_t = 100.0)]
    pub capacity_mw: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output directory; receives synthetic.csv + schema.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration JSON; defaults to the desk-scale preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input data CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Schema sidecar JSON for the data CSV.
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the config's epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the config's dropout probability.
    #[arg(long)]
    pub pdropout: Option<f64>,
    /// Channel preset: A = point + weather forecasts, B = power history,
    /// C = weather forecasts only.
    #[arg(long, value_enum, default_value_t = CasePreset::B)]
    pub case: CasePreset,
    /// Node spacing between consecutive training windows.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    /// Model directory produced by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Load the best-validation parameters instead of the final ones.
    #[arg(long)]
    pub best: bool,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Dropout-pattern draws per set.
    #[arg(long, default_value_t = 8)]
    pub nf: usize,
    /// Latent draws per pattern.
    #[arg(long, default_value_t = 2)]
    pub nn: usize,
    /// Override the stored dropout probability.
    #[arg(long)]
    pub pdropout: Option<f64>,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = CasePreset::B)]
    pub case: CasePreset,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// First forecast-origin window (sample index); defaults to the
    /// latest window that leaves room for `count` sets.
    #[arg(long)]
    pub window: Option<usize>,
    /// Number of consecutive windows to forecast.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Sample spacing between emitted windows; defaults to one lead
    /// length (non-overlapping day-ahead sets at stride 1).
    #[arg(long)]
    pub every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Scenario CSVs, one per day.
    #[arg(long, num_args = 1.., required = true)]
    pub scenarios: Vec<PathBuf>,
    /// Realized-power CSVs, aligned with --scenarios.
    #[arg(long, num_args = 1.., required = true)]
    pub actual: Vec<PathBuf>,
    /// Point-forecast CSVs for the skill score, aligned with
    /// --scenarios; the scenario mean is used when omitted.
    #[arg(long, num_args = 0..)]
    pub point: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct UcArgs {
    /// System description JSON: thermal units, penalties, hourly load,
    /// per-site capacities.
    #[arg(long)]
    pub system: PathBuf,
    /// Scenario CSVs, one per day.
    #[arg(long, num_args = 1.., required = true)]
    pub scenarios: Vec<PathBuf>,
    /// Realized-power CSVs, aligned with --scenarios.
    #[arg(long, num_args = 1.., required = true)]
    pub observed: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Run configuration JSON; its `tuning` block declares the space.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 29)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = CasePreset::B)]
    pub case: CasePreset,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

/// CLI failure, mapped onto the documented exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn data_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

/// FNV-1a over the effective configuration text, recorded in manifests
/// so reruns can be matched to their exact setup.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1_0000_01b3);
    }
    h
}

/// Write bytes to `path` atomically: a sibling temp file is renamed
/// over the target, so a crash never leaves a half-written artifact.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::Data(format!("cannot finalize {}: {e}", path.display())))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

/// Per-run provenance record; deliberately timestamp-free so reruns are
/// byte-identical.
#[derive(Debug, Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    seed: u64,
    config_fnv1a: String,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    seed: u64,
    config_text: &str,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<(), CliError> {
    let m = RunManifest {
        tool: "renscen",
        version: env!("CARGO_PKG_VERSION"),
        command: command.into(),
        seed,
        config_fnv1a: format!("{:016x}", fnv1a(config_text.as_bytes())),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    write_atomic(&out_dir.join("manifest.json"), text.as_bytes())
}

/// Ingest a CSV + schema pair and cut its windows, adopting the data's
/// channel layout into a config that has not pinned one yet and
/// rejecting a config whose pinned layout disagrees with the data.
fn prepare_windows(
    model: &mut ModelConfig,
    data: &Path,
    schema: &Path,
    stride: usize,
    case: CasePreset,
) -> Result<(WindowSet, SplitIndices), CliError> {
    let sc = SchemaConfig::from_json(&read_text(schema)?).map_err(data_err)?;
    let series = ingest_csv_path(data, &sc).map_err(data_err)?;
    let ds = Dataset::build(series, &sc).map_err(data_err)?;
    let ws = build_windows(&ds, model.n_t, model.n_lag, stride, case).map_err(data_err)?;
    let split = split_411(&ws).map_err(data_err)?;

    if model.enc_channels.is_empty() {
        model.enc_channels = ws.enc_channels.clone();
    } else if model.enc_channels != ws.enc_channels {
        return Err(usage(format!(
            "encoder channels {:?} do not match the data's {:?}",
            model.enc_channels, ws.enc_channels
        )));
    }
    if model.dec_channels.is_empty() {
        model.dec_channels = ws.dec_channels.clone();
    } else if model.dec_channels != ws.dec_channels {
        return Err(usage(format!(
            "decoder channels {:?} do not match the data's {:?}",
            model.dec_channels, ws.dec_channels
        )));
    }
    if model.n_sites != ws.sites.len() {
        if model.n_sites == 1 {
            model.n_sites = ws.sites.len();
        } else {
            return Err(usage(format!(
                "config expects {} sites, data has {}",
                model.n_sites,
                ws.sites.len()
            )));
        }
    }
    model.validate().map_err(usage)?;
    Ok((ws, split))
}

/// `node_idx,site_id,value` rows for one trajectory (time-major).
fn track_csv(track: &[f64], site_ids: &[String]) -> String {
    let n_sites = site_ids.len();
    let mut out = String::from("node_idx,site_id,value\n");
    for (t, row) in track.chunks(n_sites).enumerate() {
        for (s, id) in site_ids.iter().enumerate() {
            out.push_str(&format!("{t},{id},{}\n", row[s]));
        }
    }
    out
}

/// Parse a `node_idx,site_id,value` CSV back into a time-major track.
fn parse_track_csv(text: &str, path: &Path) -> Result<(Vec<f64>, Vec<String>), CliError> {
    let bad = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    match lines.next() {
        Some("node_idx,site_id,value") => {}
        other => return Err(bad(format!("expected a track CSV header, got {other:?}"))),
    }
    let mut sites: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (ln, line) in lines.enumerate() {
        let mut f = line.split(',');
        let (t, id, v) = (f.next(), f.next(), f.next());
        let (Some(t), Some(id), Some(v), None) = (t, id, v, f.next()) else {
            return Err(bad(format!("row {} needs exactly 3 fields", ln + 2)));
        };
        let t: usize = t.parse().map_err(|e| bad(format!("row {}: {e}", ln + 2)))?;
        let v: f64 = v.parse().map_err(|e| bad(format!("row {}: {e}", ln + 2)))?;
        let s = match sites.iter().position(|x| x == id) {
            Some(s) => s,
            None => {
                sites.push(id.to_string());
                sites.len() - 1
            }
        };
        if cells.insert((t, s), v).is_some() {
            return Err(bad(format!("duplicate cell at node {t}, site {id}")));
        }
    }
    if sites.is_empty() {
        return Err(bad("no data rows".into()));
    }
    let lead = cells.keys().map(|&(t, _)| t + 1).max().unwrap();
    let mut track = vec![0.0; lead * sites.len()];
    let mut filled = 0usize;
    for ((t, s), v) in cells {
        track[t * sites.len() + s] = v;
        filled += 1;
    }
    if filled != track.len() {
        return Err(bad(format!("expected {} cells, found {filled}", track.len())));
    }
    Ok((track, sites))
}

/// Parse a scenario CSV into `(tracks, site order)`, tracks ordered by
/// `(pattern_idx, noise_idx)`.
fn parse_scenario_csv(text: &str, path: &Path) -> Result<(Vec<Vec<f64>>, Vec<String>), CliError> {
    let bad = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    match lines.next() {
        Some("pattern_idx,noise_idx,node_idx,site_id,value") => {}
        other => return Err(bad(format!("expected a scenario CSV header, got {other:?}"))),
    }
    let mut sites: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize, usize, usize), f64> = BTreeMap::new();
    for (ln, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(bad(format!("row {} needs exactly 5 fields", ln + 2)));
        }
        let parse = |x: &str| x.parse::<usize>().map_err(|e| bad(format!("row {}: {e}", ln + 2)));
        let (p, n, t) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        let v: f64 = parts[4].parse().map_err(|e| bad(format!("row {}: {e}", ln + 2)))?;
        let s = match sites.iter().position(|x| x == parts[3]) {
            Some(s) => s,
            None => {
                sites.push(parts[3].to_string());
                sites.len() - 1
            }
        };
        if cells.insert((p, n, t, s), v).is_some() {
            return Err(bad(format!("duplicate cell at row {}", ln + 2)));
        }
    }
    if cells.is_empty() {
        return Err(bad("no data rows".into()));
    }
    let n_sites = sites.len();
    let lead = cells.keys().map(|&(_, _, t, _)| t + 1).max().unwrap();
    let mut tracks: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for ((p, n, t, s), v) in cells {
        tracks.entry((p, n)).or_insert_with(|| vec![f64::NAN; lead * n_sites])[t * n_sites + s] = v;
    }
    let tracks: Vec<Vec<f64>> = tracks.into_values().collect();
    if tracks.iter().any(|t| t.iter().any(|v| v.is_nan())) {
        return Err(bad("ragged scenario grid: some cells missing".into()));
    }
    Ok((tracks, sites))
}

fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        profile: a.profile,
        days: a.days,
        resolution_minutes: a.resolution_minutes,
        sites: a.sites,
        capacity_mw: a.capacity_mw,
        seed: a.seed,
    };
    if a.days == 0 || a.sites == 0 {
        return Err(usage("synth needs positive --days and --sites".to_string()));
    }
    if a.resolution_minutes == 0 || 1440 % a.resolution_minutes != 0 {
        return Err(usage("--resolution-minutes must divide a day".to_string()));
    }
    let (series, schema) = synth_profile(&spec);
    let csv_path = a.out.join("synthetic.csv");
    let schema_path = a.out.join("schema.json");
    fs::create_dir_all(&a.out).map_err(data_err)?;
    write_csv_path(&csv_path, &series).map_err(data_err)?;
    write_atomic(&schema_path, schema.to_json().as_bytes())?;
    let spec_text = serde_json::to_string(&spec).expect("spec serializes");
    write_manifest(&a.out, "synth", a.seed, &spec_text, &[], &[&csv_path, &schema_path])
}

/// Load a run config (or the desk preset) and apply the flag overrides.
fn effective_config(
    path: Option<&PathBuf>,
    seed: Option<u64>,
    epochs: Option<usize>,
    pdropout: Option<f64>,
) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_json(&read_text(p)?).map_err(usage)?,
        None => RunConfig { model: ModelConfig::desk(), ..RunConfig::default() },
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(e) = epochs {
        cfg.train.n_ep = e;
    }
    if let Some(p) = pdropout {
        cfg.model.p_dropout = p;
    }
    cfg.train.validate().map_err(usage)?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = effective_config(a.config.as_ref(), a.seed, a.epochs, a.pdropout)?;
    let (ws, split) = prepare_windows(&mut cfg.model, &a.data, &a.schema, a.stride, a.case)?;
    let init = ModelState::init(&cfg.model, cfg.train.seed);

    let cfg_text = cfg.to_json();
    let write_state = |state: &ModelState, tag: &str| -> Result<(PathBuf, PathBuf), CliError> {
        let f = a.out.join(format!("forecaster{tag}.json"));
        let d = a.out.join(format!("discriminator{tag}.json"));
        write_atomic(&f, state.forecaster.to_json().as_bytes())?;
        write_atomic(&d, state.discriminator.to_json().as_bytes())?;
        Ok((f, d))
    };

    match train(&cfg.model, &cfg.train, &ws, &split, init) {
        Ok(outcome) => {
            let cfg_path = a.out.join("model_config.json");
            write_atomic(&cfg_path, serde_json::to_string_pretty(&cfg.model).unwrap().as_bytes())?;
            let run_path = a.out.join("run_config.json");
            write_atomic(&run_path, cfg_text.as_bytes())?;
            let (f, d) = write_state(&outcome.state, "")?;
            let log_path = a.out.join("trainlog.csv");
            write_atomic(&log_path, outcome.log.to_csv().as_bytes())?;
            let mut outputs = vec![cfg_path, run_path, f, d, log_path];
            if let Some((rec, best_state)) = &outcome.best {
                let bf = a.out.join("forecaster_best.json");
                write_atomic(&bf, best_state.forecaster.to_json().as_bytes())?;
                let vp = a.out.join("validation.json");
                let scores: Vec<_> = outcome
                    .log
                    .validations
                    .iter()
                    .map(|v| serde_json::json!({"epoch": v.epoch, "score": v.score}))
                    .collect();
                let v = serde_json::json!({
                    "best_epoch": rec.epoch,
                    "best_score": rec.score,
                    "scores": scores,
                });
                write_atomic(&vp, serde_json::to_string_pretty(&v).unwrap().as_bytes())?;
                outputs.push(bf);
                outputs.push(vp);
            }
            let out_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
            write_manifest(
                &a.out,
                "train",
                cfg.train.seed,
                &cfg_text,
                &[&a.data, &a.schema],
                &out_refs,
            )
        }
        Err(e) => match *e {
            TrainError::Invalid { msg } => Err(usage(msg)),
            TrainError::Aborted { epoch, source, last_good, log } => {
                // persist what we can before reporting the failure
                write_state(&last_good, "_lastgood")?;
                write_atomic(&a.out.join("trainlog.csv"), log.to_csv().as_bytes())?;
                Err(CliError::Numeric(format!("training aborted at epoch {epoch}: {source}")))
            }
        },
    }
}

fn cmd_forecast(a: &ForecastArgs) -> Result<(), CliError> {
    let mut model: ModelConfig =
        serde_json::from_str(&read_text(&a.model.join("model_config.json"))?).map_err(data_err)?;
    if let Some(p) = a.pdropout {
        model.p_dropout = p;
        model.validate().map_err(usage)?;
    }
    let params_name = if a.best { "forecaster_best.json" } else { "forecaster.json" };
    let params_path = a.model.join(params_name);
    let store = ParamStore::from_json(&read_text(&params_path)?).map_err(data_err)?;

    let (ws, _) = prepare_windows(&mut model, &a.data, &a.schema, a.stride, a.case)?;
    if a.count == 0 {
        return Err(usage("--count must be at least 1".to_string()));
    }
    let every = a.every.unwrap_or_else(|| (model.lead() / a.stride).max(1));
    let span = (a.count - 1) * every;
    let start = match a.window {
        Some(wdw) => wdw,
        None => ws
            .samples
            .len()
            .checked_sub(1 + span)
            .ok_or_else(|| usage(format!("{} windows cannot hold {} sets", ws.samples.len(), a.count)))?,
    };
    if start + span >= ws.samples.len() {
        return Err(usage(format!(
            "window {} + {} sets x {every} spacing exceeds the {} available windows",
            start,
            a.count,
            ws.samples.len()
        )));
    }

    let mut outputs = Vec::new();
    for k in 0..a.count {
        let idx = start + k * every;
        let sample = &ws.samples[idx];
        let set = sample_scenarios(
            &model,
            &store,
            sample,
            a.nf,
            a.nn,
            subseed(a.seed, "fcwin", &[idx as u64]),
        )
        .map_err(|e| CliError::Numeric(e.to_string()))?;

        let lead = model.lead();
        let actual = discriminator_input(&sample.target, model.n_sites, lead);
        let pers_site_major = sample.persistence(model.n_sites, model.n_lag, lead);
        let persistence = discriminator_input(&pers_site_major, model.n_sites, lead);

        let tag = format!("{k:03}");
        let files = [
            (format!("scenarios_{tag}.csv"), scenario_csv(&set, &ws.sites)),
            (format!("actual_{tag}.csv"), track_csv(&actual, &ws.sites)),
            (format!("persistence_{tag}.csv"), track_csv(&persistence, &ws.sites)),
            (
                format!("summary_{tag}.json"),
                serde_json::to_string_pretty(&ScenarioSummary::of(&set)).unwrap(),
            ),
        ];
        for (name, text) in files {
            let p = a.out.join(name);
            write_atomic(&p, text.as_bytes())?;
            outputs.push(p);
        }
    }

    let cfg_text = serde_json::to_string(&model).unwrap();
    let out_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(
        &a.out,
        "forecast",
        a.seed,
        &cfg_text,
        &[&a.data, &a.schema, &params_path],
        &out_refs,
    )
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    if a.scenarios.len() != a.actual.len() {
        return Err(usage(format!(
            "{} scenario files vs {} actual files",
            a.scenarios.len(),
            a.actual.len()
        )));
    }
    if !a.point.is_empty() && a.point.len() != a.scenarios.len() {
        return Err(usage("--point must align with --scenarios".to_string()));
    }

    let mut days = Vec::with_capacity(a.scenarios.len());
    let mut points = Vec::with_capacity(a.scenarios.len());
    for (d, (spath, apath)) in a.scenarios.iter().zip(&a.actual).enumerate() {
        let (tracks, sites) = parse_scenario_csv(&read_text(spath)?, spath)?;
        let (actual, asites) = parse_track_csv(&read_text(apath)?, apath)?;
        if sites != asites {
            return Err(CliError::Data(format!(
                "day {d}: scenario sites {sites:?} vs actual sites {asites:?}"
            )));
        }
        let day = ScenarioDay::new(tracks, actual, sites.len()).map_err(data_err)?;
        points.push(match a.point.get(d) {
            Some(ppath) => parse_track_csv(&read_text(ppath)?, ppath)?.0,
            None => day.mean_track(),
        });
        days.push(day);
    }

    let opts = ScoreOptions::default();
    let (report, per_day) = metrics_report(&days, &points, &opts).map_err(data_err)?;

    let metrics_path = a.out.join("metrics.json");
    write_atomic(&metrics_path, serde_json::to_string_pretty(&report).unwrap().as_bytes())?;

    let mut day_csv = String::from(
        "day,rmse,mae,s_score,crps,pinball,brier,energy,winkler,variogram_k1,variogram_k2\n",
    );
    for (d, m) in per_day.iter().enumerate() {
        day_csv.push_str(&format!(
            "{d},{},{},{},{},{},{},{},{},{},{}\n",
            m.rmse,
            m.mae,
            m.s_score,
            m.crps,
            m.pinball,
            m.brier,
            m.energy,
            m.winkler,
            m.variogram_k1,
            m.variogram_k2,
        ));
    }
    let day_path = a.out.join("per_day.csv");
    write_atomic(&day_path, day_csv.as_bytes())?;

    // fan-chart plot data: per cell, ensemble deciles plus the actual
    let mut outputs = vec![metrics_path, day_path];
    for (d, day) in days.iter().enumerate() {
        let mut fan = String::from("node_idx,site_idx,q10,q25,q50,q75,q90,actual\n");
        for c in 0..day.cells() {
            let mut vals = day.cell_values(c);
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = |p: f64| quantile_sorted(&vals, p);
            fan.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c / day.n_sites,
                c % day.n_sites,
                q(0.1),
                q(0.25),
                q(0.5),
                q(0.75),
                q(0.9),
                day.actual[c],
            ));
        }
        let p = a.out.join(format!("fan_{d:03}.csv"));
        write_atomic(&p, fan.as_bytes())?;
        outputs.push(p);
    }

    let inputs: Vec<&Path> = a
        .scenarios
        .iter()
        .chain(&a.actual)
        .chain(&a.point)
        .map(PathBuf::as_path)
        .collect();
    let out_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&a.out, "evaluate", 0, "evaluate", &inputs, &out_refs)
}

/// System description consumed by `uc`: the thermal fleet plus the
/// day-ahead load and the per-site capacities that convert normalized
/// scenario tracks into MW.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub units: Vec<ThermalUnit>,
    #[serde(default)]
    pub penalties: Penalties,
    #[serde(default = "one")]
    pub block_hours: usize,
    /// Hourly MW over one day horizon.
    pub load_mw: Vec<f64>,
    /// Installed MW per site id.
    pub site_capacity_mw: BTreeMap<String, f64>,
}

fn one() -> usize {
    1
}

/// Convert a normalized time-major track into a total renewable MW path.
fn renewable_mw(track: &[f64], sites: &[String], caps: &BTreeMap<String, f64>) -> Result<Vec<f64>, CliError> {
    let cap: Vec<f64> = sites
        .iter()
        .map(|s| {
            caps.get(s)
                .copied()
                .ok_or_else(|| CliError::Data(format!("no capacity listed for site {s}")))
        })
        .collect::<Result<_, _>>()?;
    Ok(track
        .chunks(sites.len())
        .map(|row| row.iter().zip(&cap).map(|(v, c)| v * c).sum())
        .collect())
}

fn cmd_uc(a: &UcArgs) -> Result<(), CliError> {
    if a.scenarios.len() != a.observed.len() {
        return Err(usage(format!(
            "{} scenario files vs {} observed files",
            a.scenarios.len(),
            a.observed.len()
        )));
    }
    let sys_text = read_text(&a.system)?;
    let sys: SystemSpec = serde_json::from_str(&sys_text).map_err(data_err)?;

    let mut instances = Vec::with_capacity(a.scenarios.len());
    let mut observations = Vec::with_capacity(a.scenarios.len());
    for (spath, opath) in a.scenarios.iter().zip(&a.observed) {
        let (tracks, sites) = parse_scenario_csv(&read_text(spath)?, spath)?;
        let horizon = tracks[0].len() / sites.len();
        if sys.load_mw.len() != horizon {
            return Err(CliError::Data(format!(
                "{}: scenario horizon {horizon} vs load of {} hours",
                spath.display(),
                sys.load_mw.len()
            )));
        }
        let paths: Vec<Vec<f64>> = tracks
            .iter()
            .map(|t| renewable_mw(t, &sites, &sys.site_capacity_mw))
            .collect::<Result<_, _>>()?;
        let (otrack, osites) = parse_track_csv(&read_text(opath)?, opath)?;
        if osites != sites {
            return Err(CliError::Data(format!(
                "{}: observed sites {osites:?} vs scenario sites {sites:?}",
                opath.display()
            )));
        }
        observations.push(renewable_mw(&otrack, &sites, &sys.site_capacity_mw)?);
        instances.push(UcInstance {
            units: sys.units.clone(),
            horizon,
            load: sys.load_mw.clone(),
            scenarios: paths,
            penalties: sys.penalties,
            block_hours: sys.block_hours,
        });
    }

    let report = rolling_evaluation(&instances, &observations).map_err(data_err)?;
    let report_path = a.out.join("uc_report.json");
    write_atomic(&report_path, serde_json::to_string_pretty(&report).unwrap().as_bytes())?;

    let mut csv = String::from("day,expected_cost,actual_cost,deviation,shed_mwh,curtail_mwh\n");
    for (d, day) in report.days.iter().enumerate() {
        csv.push_str(&format!(
            "{d},{},{},{},{},{}\n",
            day.expected_cost, day.actual_cost, day.deviation, day.shed_mwh, day.curtail_mwh,
        ));
    }
    let day_path = a.out.join("uc_days.csv");
    write_atomic(&day_path, csv.as_bytes())?;

    let inputs: Vec<&Path> = std::iter::once(a.system.as_path())
        .chain(a.scenarios.iter().map(PathBuf::as_path))
        .chain(a.observed.iter().map(PathBuf::as_path))
        .collect();
    write_manifest(&a.out, "uc", 0, &sys_text, &inputs, &[&report_path, &day_path])
}

fn cmd_tune(a: &TuneArgs) -> Result<(), CliError> {
    let mut cfg = effective_config(a.config.as_ref(), Some(a.seed), None, None)?;
    let space: TuningSpace = cfg.tuning.clone().unwrap_or_default();
    let (ws, split) = prepare_windows(&mut cfg.model, &a.data, &a.schema, a.stride, a.case)?;

    let (best, trials) = random_search(&cfg.model, &cfg.train, &space, &ws, &split, a.seed)
        .map_err(|e| match *e {
            TrainError::Invalid { msg } => usage(msg),
            TrainError::Aborted { epoch, source, .. } => {
                CliError::Numeric(format!("trial aborted at epoch {epoch}: {source}"))
            }
        })?;

    let best_path = a.out.join("best_config.json");
    write_atomic(&best_path, best.to_json().as_bytes())?;

    let mut csv =
        String::from("trial,score,alpha,batch,n_d,n_f,n_n,p_dropout,lambda_gp,seed\n");
    for t in &trials {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            t.trial,
            t.score,
            t.run.train.alpha,
            t.run.train.batch,
            t.run.train.n_d,
            t.run.train.n_f,
            t.run.train.n_n,
            t.run.model.p_dropout,
            t.run.train.lambda_gp,
            t.run.train.seed,
        ));
    }
    let trials_path = a.out.join("trials.csv");
    write_atomic(&trials_path, csv.as_bytes())?;

    let space_text = serde_json::to_string(&space).unwrap();
    write_manifest(
        &a.out,
        "tune",
        a.seed,
        &space_text,
        &[&a.data, &a.schema],
        &[&best_path, &trials_path],
    )
}

/// Dispatch one parsed invocation.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Uc(a) => cmd_uc(a),
        Command::Tune(a) => cmd_tune(a),
    }
}
