//! Batch entry points behind the CLI: dataset synthesis, training,
//! forecast + correction, and evaluation. Every command writes a run
//! manifest; JSON artifacts reference the manifest file by name.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{BaselineKind, RunConfig};
use crate::graph::{build_transitions, TransitionSet, WatershedGraph};
use crate::ingest::{load_and_resample, make_windows, HourlyFrame, SplitIndices, WindowSample};
use crate::metrics::{extract_flood_events, full_report, MetricsReport, ScalarMetrics};
use crate::model::train::{
    train_base_model, train_plain_gru, write_training_log, TrainOptions,
};
use crate::model::{
    baselines, load_checkpoint, save_checkpoint, BaseModelParams, CheckpointModel, TargetSpace,
};
use crate::rating_curve::RatingCurveSet;
use crate::residual::{run_pipeline, write_audit_csv, PipelineInput, PipelineOutput};
use crate::synth::{generate, write_ground_truth_csv};
use crate::{derive_seed, Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize)]
struct RunManifest {
    manifest_version: u32,
    crate_version: String,
    command: String,
    config_sha256: String,
    seed: u64,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    timings_ms: BTreeMap<String, u128>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn config_digest(config: &RunConfig) -> String {
    let text = toml::to_string(config).unwrap_or_default();
    sha256_hex(text.as_bytes())
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

struct ManifestBuilder {
    command: &'static str,
    config_sha256: String,
    seed: u64,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    timings_ms: BTreeMap<String, u128>,
    started: Instant,
}

impl ManifestBuilder {
    fn new(command: &'static str, config: &RunConfig) -> Self {
        ManifestBuilder {
            command,
            config_sha256: config_digest(config),
            seed: config.seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
            started: Instant::now(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(
            path.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
        );
    }

    fn timing(&mut self, label: &str, ms: u128) {
        self.timings_ms.insert(label.to_string(), ms);
    }

    fn write(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.timings_ms
            .insert("total".into(), self.started.elapsed().as_millis());
        let name = format!("manifest_{}.json", self.command);
        let path = out_dir.join(&name);
        let manifest = RunManifest {
            manifest_version: MANIFEST_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            config_sha256: self.config_sha256,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            timings_ms: self.timings_ms,
        };
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}

fn manifest_name(command: &str) -> String {
    format!("manifest_{command}.json")
}

// ---------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------

/// Generate the synthetic dataset: series/graph/rating-curve files in the
/// formats `ingest` consumes, plus ground truth and flood events.
pub fn cmd_synth(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = ManifestBuilder::new("synth", config);
    let t0 = Instant::now();
    let mut scenario = config.synth.scenario.clone();
    scenario.seed = derive_seed(config.seed, "synth");
    let out = generate(&scenario, config.synth.n_hours)?;
    manifest.timing("generate", t0.elapsed().as_millis());
    if out.widen_rounds > 0 {
        log::warn!("storm depths widened {} rounds to guarantee floods", out.widen_rounds);
    }

    let series = out_dir.join("series.csv");
    out.frame.write_csv(&series)?;
    let graph_path = out_dir.join("graph.json");
    out.graph.save(&graph_path)?;
    let curve_path = out_dir.join("rating_curve.json");
    out.target_curve.save(&curve_path)?;
    let truth_path = out_dir.join("ground_truth.csv");
    write_ground_truth_csv(&truth_path, &out)?;

    let stage: Vec<f64> = (0..out.frame.len())
        .map(|i| out.frame.target_stage(i).expect("dense synth stage"))
        .collect();
    let events = extract_flood_events(&stage, scenario.action_level_ft);
    let events_path = out_dir.join("events.csv");
    write_events_csv(&events_path, &out.frame, &events, &stage)?;

    let outputs = vec![series, graph_path, curve_path, truth_path, events_path];
    for p in &outputs {
        manifest.output(p);
    }
    let m = manifest.write(out_dir)?;
    let mut all = outputs;
    all.push(m);
    Ok(all)
}

fn write_events_csv(
    path: &Path,
    frame: &HourlyFrame,
    events: &[(usize, usize)],
    stage: &[f64],
) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "start,end,duration_hours,peak_stage_ft")?;
    for &(s, e) in events {
        let peak = stage[s..e].iter().copied().fold(f64::MIN, f64::max);
        writeln!(
            w,
            "{},{},{},{}",
            frame.timestamp(s).to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            frame
                .timestamp(e - 1)
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            e - s,
            peak
        )?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// shared data loading
// ---------------------------------------------------------------------

pub struct LoadedData {
    pub frame: HourlyFrame,
    pub graph: WatershedGraph,
    pub curves: RatingCurveSet,
    pub split: SplitIndices,
}

pub fn load_data(config: &RunConfig) -> Result<LoadedData> {
    let graph = WatershedGraph::load(&config.io.graph)?;
    if graph.node_ids() != config.data.stations.as_slice() {
        return Err(Error::Config(format!(
            "config stations {:?} must match graph node order {:?}",
            config.data.stations,
            graph.node_ids()
        )));
    }
    if graph.target_id() != config.data.target {
        return Err(Error::Config(format!(
            "config target {} does not match the graph's target {}",
            config.data.target,
            graph.target_id()
        )));
    }
    let curves = RatingCurveSet::load(&config.io.rating_curve)?;
    let frame = load_and_resample(&config.io.series, &config.data.stations, &config.data.target)?;
    let split = frame.split_indices(config.split_fractions(), config.data.t_window)?;
    Ok(LoadedData {
        frame,
        graph,
        curves,
        split,
    })
}

fn train_options(config: &RunConfig, label: &str) -> TrainOptions {
    TrainOptions {
        max_epochs: config.train.max_epochs,
        patience: config.train.patience,
        seed: derive_seed(config.seed, label),
        k_steps: config.train.k_diffusion,
        optimizer: config.train.optimizer,
    }
}

fn horizons(config: &RunConfig, only: Option<usize>) -> Result<Vec<usize>> {
    match only {
        None => Ok(config.data.horizons.clone()),
        Some(h) => {
            if config.data.horizons.contains(&h) {
                Ok(vec![h])
            } else {
                Err(Error::Config(format!(
                    "horizon {h} is not in the configured set {:?}",
                    config.data.horizons
                )))
            }
        }
    }
}

fn checkpoint_path(out_dir: &Path, h: usize) -> PathBuf {
    out_dir.join(format!("checkpoint_h{h}.json"))
}

// ---------------------------------------------------------------------
// train
// ---------------------------------------------------------------------

/// Train the base stage forecaster for each requested horizon; write a
/// checkpoint and training log per horizon.
pub fn cmd_train(config: &RunConfig, out_dir: &Path, only: Option<usize>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = ManifestBuilder::new("train", config);
    manifest.input(&config.io.graph)?;
    for s in &config.io.series {
        manifest.input(s)?;
    }
    let data = load_data(config)?;
    let transitions = build_transitions(&data.graph, config.train.k_diffusion)?;
    let mut outputs = Vec::new();
    for h in horizons(config, only)? {
        let t0 = Instant::now();
        let windows = make_windows(&data.frame, config.data.t_window, h)?;
        let train_w = windows.in_range(0, data.split.train_end);
        let val_w = windows.in_range(data.split.train_end, data.split.val_end);
        if train_w.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no training windows at horizon {h}"
            )));
        }
        let opts = train_options(config, &format!("train base h{h}"));
        let out = train_base_model(
            &transitions,
            data.graph.target(),
            data.graph.n_nodes(),
            &train_w,
            &val_w,
            &config.train.grid(),
            &opts,
            TargetSpace::Stage,
            config.data.t_window,
            h,
        )?;
        log::info!(
            "h={h}: chose {:?} with validation loss {:.6}",
            out.chosen,
            out.best_val_loss
        );
        for (point, reason) in &out.aborted {
            log::warn!("h={h}: grid point {point:?} aborted: {reason}");
        }
        let ckpt = checkpoint_path(out_dir, h);
        save_checkpoint(&CheckpointModel::Base(out.model.params.clone()), &ckpt)?;
        let log_path = out_dir.join(format!("training_log_h{h}.csv"));
        write_training_log(&out.log, &log_path)?;
        manifest.timing(&format!("train_h{h}"), t0.elapsed().as_millis());
        manifest.output(&ckpt);
        manifest.output(&log_path);
        outputs.push(ckpt);
        outputs.push(log_path);
    }
    outputs.push(manifest.write(out_dir)?);
    Ok(outputs)
}

// ---------------------------------------------------------------------
// forecast + correct
// ---------------------------------------------------------------------

/// Full-grid forecast artifacts for one horizon.
pub struct HorizonForecast {
    pub input: PipelineInput,
    pub output: PipelineOutput,
    pub extrapolated: Vec<bool>,
    pub windows: Vec<usize>,
}

/// Run the base model over every window of the frame, convert stage to
/// discharge through the rating curve, and run the residual cascade.
pub fn forecast_horizon(
    config: &RunConfig,
    data: &LoadedData,
    transitions: &TransitionSet,
    params: &BaseModelParams,
    h: usize,
) -> Result<HorizonForecast> {
    let n = data.frame.len();
    let windows = make_windows(&data.frame, config.data.t_window, h)?;
    let refs: Vec<&WindowSample> = windows.windows.iter().collect();
    let bound = crate::model::train::BoundBase {
        params: params.clone(),
        transitions,
        target_node: data.graph.target(),
    };
    let stage_preds = crate::model::train::predict_all(&bound, &refs)?;

    let mut stage_fc = vec![None; n];
    let mut base_q = vec![None; n];
    let mut extrapolated = vec![false; n];
    let mut clamped_below = 0usize;
    for (w, &raw_stage) in refs.iter().zip(&stage_preds) {
        let ts = data.frame.timestamp(w.target_idx);
        // Stages at or below the curve offset cannot convert; clamp just
        // above the offset and count it.
        let (stage, was_clamped) = clamp_stage_for_curve(&data.curves, raw_stage, ts)?;
        if was_clamped {
            clamped_below += 1;
        }
        let flow = data.curves.to_flow(stage, ts)?;
        stage_fc[w.target_idx] = Some(stage);
        base_q[w.target_idx] = Some(flow.discharge_cfs);
        extrapolated[w.target_idx] = flow.extrapolated;
    }
    if clamped_below > 0 {
        log::warn!("h={h}: {clamped_below} forecast stages clamped above the curve offset");
    }

    let input = PipelineInput {
        base: base_q,
        stage_fc,
        reported: data.frame.reported_series().to_vec(),
        measured: data.frame.measured_series().to_vec(),
        fit_end: data.split.val_end,
        horizon: h,
    };
    let pipeline_config = config
        .residual
        .pipeline(config.data.action_level_ft, derive_seed(config.seed, "residual"));
    let output = run_pipeline(&input, &pipeline_config)?;
    Ok(HorizonForecast {
        input,
        output,
        extrapolated,
        windows: refs.iter().map(|w| w.target_idx).collect(),
    })
}

fn clamp_stage_for_curve(
    curves: &RatingCurveSet,
    stage: f64,
    ts: chrono::DateTime<chrono::Utc>,
) -> Result<(f64, bool)> {
    match curves.to_flow(stage, ts) {
        Ok(_) => Ok((stage, false)),
        Err(Error::BelowOffset { offset, .. }) => Ok((offset + 1e-3, true)),
        Err(e) => Err(e),
    }
}

pub fn cmd_forecast(
    config: &RunConfig,
    out_dir: &Path,
    only: Option<usize>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = ManifestBuilder::new("forecast", config);
    manifest.input(&config.io.graph)?;
    manifest.input(&config.io.rating_curve)?;
    for s in &config.io.series {
        manifest.input(s)?;
    }
    let data = load_data(config)?;
    let transitions = build_transitions(&data.graph, config.train.k_diffusion)?;
    let mut outputs = Vec::new();
    for h in horizons(config, only)? {
        let t0 = Instant::now();
        let ckpt_path = checkpoint_path(out_dir, h);
        let CheckpointModel::Base(params) = load_checkpoint(&ckpt_path)? else {
            return Err(Error::Config(format!(
                "{} is not a base-model checkpoint",
                ckpt_path.display()
            )));
        };
        manifest.input(&ckpt_path)?;
        let fc = forecast_horizon(config, &data, &transitions, &params, h)?;
        let timestamps: Vec<_> = (0..data.frame.len()).map(|i| data.frame.timestamp(i)).collect();
        let audit = out_dir.join(format!("audit_h{h}.csv"));
        write_audit_csv(&audit, &timestamps, &fc.input, &fc.output, &fc.extrapolated)?;
        manifest.timing(&format!("forecast_h{h}"), t0.elapsed().as_millis());
        manifest.output(&audit);
        outputs.push(audit);
    }
    outputs.push(manifest.write(out_dir)?);
    Ok(outputs)
}

// ---------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------

#[derive(Serialize)]
struct HorizonReport {
    n_test_windows: usize,
    /// Metrics against reported discharge over test-window targets.
    models: BTreeMap<String, MetricsReport>,
    /// Metrics against measured discharge at test measured points, for
    /// the base model and the correction cascade.
    vs_measured: BTreeMap<String, ScalarMetrics>,
    residual_state: ResidualSummary,
}

#[derive(Serialize)]
struct ResidualSummary {
    ar_rho: Option<f64>,
    ar_intercept: Option<f64>,
    stage1_rho: f64,
    stage1_intercept: f64,
    stage1_e_action_pct: f64,
    stage1_delta_threshold: f64,
    c1: f64,
    c2: f64,
    stage1_enabled: bool,
    stage2_enabled: bool,
    stage3_enabled: bool,
    clamp_count: usize,
}

#[derive(Serialize)]
struct MetricsFile {
    manifest: String,
    split: SplitSummary,
    horizons: BTreeMap<String, HorizonReport>,
}

#[derive(Serialize)]
struct SplitSummary {
    train_end: usize,
    val_end: usize,
    n_hours: usize,
}

pub fn cmd_evaluate(
    config: &RunConfig,
    out_dir: &Path,
    only: Option<usize>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = ManifestBuilder::new("evaluate", config);
    manifest.input(&config.io.graph)?;
    manifest.input(&config.io.rating_curve)?;
    for s in &config.io.series {
        manifest.input(s)?;
    }
    let data = load_data(config)?;
    let transitions = build_transitions(&data.graph, config.train.k_diffusion)?;
    let mut horizon_reports = BTreeMap::new();
    for h in horizons(config, only)? {
        let t0 = Instant::now();
        let report = evaluate_horizon(config, &data, &transitions, out_dir, h, &mut manifest)?;
        manifest.timing(&format!("evaluate_h{h}"), t0.elapsed().as_millis());
        horizon_reports.insert(h.to_string(), report);
    }

    let metrics_path = out_dir.join("metrics.json");
    let file = MetricsFile {
        manifest: manifest_name("evaluate"),
        split: SplitSummary {
            train_end: data.split.train_end,
            val_end: data.split.val_end,
            n_hours: data.split.n,
        },
        horizons: horizon_reports,
    };
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&file)?)?;

    let comparison_path = out_dir.join("comparison.csv");
    write_comparison_csv(&comparison_path, &file)?;

    // Flood events over the test period.
    let stage: Vec<f64> = (data.split.val_end..data.split.n)
        .map(|i| data.frame.target_stage(i).unwrap_or(f64::NEG_INFINITY))
        .collect();
    let events = extract_flood_events(&stage, config.data.action_level_ft);
    let shifted: Vec<(usize, usize)> = events
        .iter()
        .map(|&(s, e)| (s + data.split.val_end, e + data.split.val_end))
        .collect();
    let events_path = out_dir.join("events.csv");
    let full_stage: Vec<f64> = (0..data.split.n)
        .map(|i| data.frame.target_stage(i).unwrap_or(f64::NEG_INFINITY))
        .collect();
    write_events_csv(&events_path, &data.frame, &shifted, &full_stage)?;

    manifest.output(&metrics_path);
    manifest.output(&comparison_path);
    manifest.output(&events_path);
    let m = manifest.write(out_dir)?;
    Ok(vec![metrics_path, comparison_path, events_path, m])
}

fn evaluate_horizon(
    config: &RunConfig,
    data: &LoadedData,
    transitions: &TransitionSet,
    out_dir: &Path,
    h: usize,
    manifest: &mut ManifestBuilder,
) -> Result<HorizonReport> {
    let windows = make_windows(&data.frame, config.data.t_window, h)?;
    let train_w = windows.in_range(0, data.split.train_end);
    let val_w = windows.in_range(data.split.train_end, data.split.val_end);
    let test_w = windows.in_range(data.split.val_end, data.split.n);
    if test_w.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no test windows at horizon {h}"
        )));
    }
    let y: Vec<f64> = test_w.iter().map(|w| w.target_reported).collect();
    let test_stage: Vec<f64> = test_w.iter().map(|w| w.target_stage).collect();
    let action = config.data.action_level_ft;

    let mut models: BTreeMap<String, MetricsReport> = BTreeMap::new();
    let add = |name: &str,
               preds: &[f64],
               models: &mut BTreeMap<String, MetricsReport>|
     -> Result<()> {
        models.insert(
            name.to_string(),
            full_report(&y, preds, &test_stage, action)?,
        );
        Ok(())
    };

    for kind in &config.baselines {
        match kind {
            BaselineKind::Persistence => {
                let preds: Vec<f64> = baselines::persistence_forecast(&data.frame, &test_w)
                    .into_iter()
                    .map(|p| p.unwrap_or(f64::NAN))
                    .collect();
                add("persistence", &preds, &mut models)?;
            }
            BaselineKind::Linear => {
                let model = baselines::LinearBaseline::fit(&train_w)?;
                let preds: Vec<f64> = test_w.iter().map(|w| model.predict(w)).collect();
                add("linear", &preds, &mut models)?;
            }
            BaselineKind::Gbt => {
                let model = baselines::GbtBaseline::fit(
                    &train_w,
                    &config.residual.pipeline(action, 0).gbt,
                )?;
                let preds: Vec<f64> = test_w.iter().map(|w| model.predict(w)).collect();
                add("gbt", &preds, &mut models)?;
            }
            BaselineKind::Mlp => {
                let opts = train_options(config, &format!("baseline mlp h{h}"));
                let model = baselines::train_mlp_baseline(&train_w, &val_w, &opts)?;
                let preds = baselines::mlp_predict(&model, &test_w)?;
                add("mlp", &preds, &mut models)?;
            }
            BaselineKind::PlainGru => {
                let opts = train_options(config, &format!("baseline plain_gru h{h}"));
                let out = train_plain_gru(
                    data.graph.n_nodes(),
                    &train_w,
                    &val_w,
                    &config.train.grid(),
                    &opts,
                    config.data.t_window,
                    h,
                )?;
                let preds = crate::model::train::predict_all(&out.model, &test_w)?;
                add("plain_gru", &preds, &mut models)?;
            }
            BaselineKind::DcrnnDirect => {
                let opts = train_options(config, &format!("baseline dcrnn_direct h{h}"));
                let out = train_base_model(
                    transitions,
                    data.graph.target(),
                    data.graph.n_nodes(),
                    &train_w,
                    &val_w,
                    &config.train.grid(),
                    &opts,
                    TargetSpace::Discharge,
                    config.data.t_window,
                    h,
                )?;
                let preds = crate::model::train::predict_all(&out.model, &test_w)?;
                add("dcrnn_direct", &preds, &mut models)?;
            }
        }
    }

    // Base model and the correction cascade from its checkpoint.
    let ckpt_path = checkpoint_path(out_dir, h);
    let CheckpointModel::Base(params) = load_checkpoint(&ckpt_path)? else {
        return Err(Error::Config(format!(
            "{} is not a base-model checkpoint",
            ckpt_path.display()
        )));
    };
    manifest.input(&ckpt_path)?;
    let fc = forecast_horizon(config, data, transitions, &params, h)?;
    let series_of = |v: &[Option<f64>]| -> Vec<f64> {
        test_w
            .iter()
            .map(|w| v[w.target_idx].unwrap_or(f64::NAN))
            .collect()
    };
    add("dcrnn_rc", &series_of(&fc.input.base), &mut models)?;
    add("dcrnn_rc_ar", &series_of(&fc.output.updated), &mut models)?;
    add("dcrnn_rc_stage1", &series_of(&fc.output.stage1), &mut models)?;
    add("dcrnn_rc_stage2", &series_of(&fc.output.stage2), &mut models)?;
    add("dcrnn_rc_stage3", &series_of(&fc.output.stage3), &mut models)?;

    // Against measured discharge at test measured points.
    let mut vs_measured = BTreeMap::new();
    let measured_idx: Vec<usize> = (data.split.val_end..data.split.n)
        .filter(|&i| data.frame.measured(i).is_some() && fc.input.base[i].is_some())
        .collect();
    if !measured_idx.is_empty() {
        let m: Vec<f64> = measured_idx
            .iter()
            .map(|&i| data.frame.measured(i).expect("filtered"))
            .collect();
        let mut add_m = |name: &str, series: &[Option<f64>]| -> Result<()> {
            let preds: Vec<f64> = measured_idx
                .iter()
                .map(|&i| series[i].unwrap_or(f64::NAN))
                .collect();
            vs_measured.insert(
                name.to_string(),
                crate::metrics::compute_scalar_metrics(&m, &preds)?,
            );
            Ok(())
        };
        add_m("reported", data.frame.reported_series())?;
        add_m("dcrnn_rc", &fc.input.base)?;
        add_m("dcrnn_rc_ar", &fc.output.updated)?;
        add_m("dcrnn_rc_stage1", &fc.output.stage1)?;
        add_m("dcrnn_rc_stage2", &fc.output.stage2)?;
        add_m("dcrnn_rc_stage3", &fc.output.stage3)?;
    }

    let st = &fc.output.state;
    Ok(HorizonReport {
        n_test_windows: test_w.len(),
        models,
        vs_measured,
        residual_state: ResidualSummary {
            ar_rho: st.ar.map(|a| a.rho),
            ar_intercept: st.ar.map(|a| a.intercept),
            stage1_rho: st.stage1.rho,
            stage1_intercept: st.stage1.intercept,
            stage1_e_action_pct: st.stage1.e_action_pct,
            stage1_delta_threshold: st.stage1.delta_threshold,
            c1: st.stage1.c1,
            c2: st.stage2.c2,
            stage1_enabled: st.stage1.enabled,
            stage2_enabled: st.stage2.enabled,
            stage3_enabled: st.stage3.enabled,
            clamp_count: fc.output.clamp_count,
        },
    })
}

fn write_comparison_csv(path: &Path, file: &MetricsFile) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "horizon,model,n_points,mae,mape_pct,rmse,bias,nse,cc,n_flood_events,peak_bias,peak_pct_bias,peak_time_bias_hours"
    )?;
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (h, report) in &file.horizons {
        for (model, m) in &report.models {
            let (pb, ppb, ptb) = match m.peaks.as_ref().and_then(|p| p.aggregate.as_ref()) {
                Some(agg) => (
                    agg.peak_bias.to_string(),
                    fmt_opt(agg.peak_pct_bias),
                    agg.peak_time_bias_hours.to_string(),
                ),
                None => (String::new(), String::new(), String::new()),
            };
            writeln!(
                w,
                "{h},{model},{},{},{},{},{},{},{},{},{pb},{ppb},{ptb}",
                m.scalar.n_points,
                m.scalar.mae,
                fmt_opt(m.scalar.mape_pct),
                m.scalar.rmse,
                m.scalar.bias,
                fmt_opt(m.scalar.nse),
                fmt_opt(m.scalar.cc),
                m.n_flood_events,
            )?;
        }
    }
    w.flush()?;
    Ok(())
}
