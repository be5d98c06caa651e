//! The four-step correction cascade. An autoregressive correction in
//! reported space runs first; Stages 1–3 then fit against sparse field
//! measurements (hysteresis regression on Δ stage, LOWESS over stage,
//! bootstrapped gradient-boosted trees) and each stage revises the
//! forecast the previous one produced.

mod ar;
mod gbt;
mod lowess;
mod stage1;

pub use ar::{ar_correct, ArState};
pub use gbt::{BootstrapGbt, GbtParams, GbtRegressor};
pub use lowess::Lowess;
pub use stage1::{stage1_apply, stage1_fit, MeasuredPoint, Stage1State};

use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};

use crate::{Error, Result};

use stage1::{confidence, mape};

/// Residual-cascade configuration; every constant the stages use is
/// exposed here.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub ar_enabled: bool,
    pub stage1_enabled: bool,
    pub stage2_enabled: bool,
    pub stage3_enabled: bool,
    /// Action stage (feet) delimiting flood conditions.
    pub w_action: f64,
    pub lowess_fraction: f64,
    pub n_bootstrap: usize,
    pub gbt: GbtParams,
    /// Floor for the multiplicative factors `1 − c·r̂`.
    pub clamp_floor: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            ar_enabled: true,
            stage1_enabled: true,
            stage2_enabled: true,
            stage3_enabled: true,
            w_action: 6.0,
            lowess_fraction: 0.5,
            n_bootstrap: 20,
            gbt: GbtParams::default(),
            clamp_floor: 0.01,
            seed: 0,
        }
    }
}

/// Hourly-aligned pipeline inputs. Index i is `start + i` hours; cells are
/// `None` where a forecast or observation is unavailable.
#[derive(Clone, Debug)]
pub struct PipelineInput {
    /// Base-model forecast discharge (cfs), reported space.
    pub base: Vec<Option<f64>>,
    /// Forecast stage x_W* (feet) from the same windows.
    pub stage_fc: Vec<Option<f64>>,
    pub reported: Vec<Option<f64>>,
    pub measured: Vec<Option<f64>>,
    /// Indices `< fit_end` (the train+validation period) supply the
    /// measured points Stages 1–3 fit on.
    pub fit_end: usize,
    pub horizon: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Stage2State {
    pub smoother: Option<Lowess>,
    pub c2: f64,
    pub enabled: bool,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct Stage3State {
    pub ensemble: Option<BootstrapGbt>,
    pub n_train: usize,
    pub enabled: bool,
    pub warning: Option<String>,
}

/// Fitted parameters of every step, kept for audit and reuse.
#[derive(Clone, Debug)]
pub struct ResidualPipelineState {
    pub ar: Option<ArState>,
    pub stage1: Stage1State,
    pub stage2: Stage2State,
    pub stage3: Stage3State,
}

/// Per-point audit flags.
#[derive(Clone, Copy, Debug, Default)]
pub struct PointFlags {
    /// Passed the Stage-1 flood/rise filter.
    pub filter_pass: bool,
    /// Any stage's multiplicative factor hit the clamp floor here.
    pub clamped: bool,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// After the reported-space AR correction (x_updated).
    pub updated: Vec<Option<f64>>,
    pub stage1: Vec<Option<f64>>,
    pub stage2: Vec<Option<f64>>,
    pub stage3: Vec<Option<f64>>,
    pub state: ResidualPipelineState,
    pub flags: Vec<PointFlags>,
    pub clamp_count: usize,
}

/// Forecast stage change over the previous hour, per index.
fn delta_series(stage_fc: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut out = vec![None; stage_fc.len()];
    for i in 1..stage_fc.len() {
        if let (Some(a), Some(b)) = (stage_fc[i], stage_fc[i - 1]) {
            out[i] = Some(a - b);
        }
    }
    out
}

/// Measured points in the fit region with everything a stage needs.
fn fit_points(
    input: &PipelineInput,
    current: &[Option<f64>],
    deltas: &[Option<f64>],
) -> Vec<MeasuredPoint> {
    let mut pts = Vec::new();
    for i in 0..input.fit_end.min(current.len()) {
        let (Some(m), Some(r), Some(c), Some(s)) = (
            input.measured[i],
            input.reported[i],
            current[i],
            input.stage_fc[i],
        ) else {
            continue;
        };
        pts.push(MeasuredPoint {
            idx: i,
            measured: m,
            reported: r,
            current: c,
            stage_fc: s,
            delta_stage: deltas[i],
        });
    }
    pts
}

/// Run the full cascade: AR correction everywhere, Stages 1–3 fitted on
/// the fit-region measured points and applied to the entire series.
pub fn run_pipeline(input: &PipelineInput, config: &PipelineConfig) -> Result<PipelineOutput> {
    let n = input.base.len();
    if input.stage_fc.len() != n || input.reported.len() != n || input.measured.len() != n {
        return Err(Error::Contract(
            "pipeline inputs must share one hourly grid".into(),
        ));
    }
    let deltas = delta_series(&input.stage_fc);
    let mut flags = vec![PointFlags::default(); n];
    let mut clamp_count = 0usize;

    // Step 0: reported-space AR correction.
    let (updated, ar_state) = if config.ar_enabled {
        let (u, st) = ar_correct(&input.base, &input.reported, input.horizon)?;
        (u, Some(st))
    } else {
        (input.base.clone(), None)
    };

    // Stage 1: hysteresis regression on flood-filtered measured points.
    let s1_points = fit_points(input, &updated, &deltas);
    let stage1_state = if !config.stage1_enabled {
        Stage1State::disabled(config.w_action, "stage 1 disabled by config")
    } else if s1_points.is_empty() {
        Stage1State::disabled(config.w_action, "no measured points in fit region")
    } else {
        stage1_fit(&s1_points, config.w_action)?
    };
    let mut stage1_series = vec![None; n];
    for i in 0..n {
        if let Some(u) = updated[i] {
            let (v, passed, clamped) = if let Some(s) = input.stage_fc[i] {
                stage1_apply(u, s, deltas[i], &stage1_state, config.clamp_floor)
            } else {
                (u, false, false)
            };
            flags[i].filter_pass = passed;
            if clamped {
                flags[i].clamped = true;
                clamp_count += 1;
            }
            stage1_series[i] = Some(v);
        }
    }

    // Stage 2: LOWESS of the leftover percentage residual against stage.
    let s2_points = fit_points(input, &stage1_series, &deltas);
    let stage2_state = fit_stage2(input, &updated, &s2_points, &stage1_state, config);
    let mut stage2_series = vec![None; n];
    for i in 0..n {
        if let Some(x1) = stage1_series[i] {
            let v = match (&stage2_state.smoother, input.stage_fc[i]) {
                (Some(sm), Some(s)) if stage2_state.enabled => {
                    let r_hat = sm.predict(s);
                    let factor = 1.0 - stage2_state.c2 * r_hat;
                    if factor < config.clamp_floor {
                        flags[i].clamped = true;
                        clamp_count += 1;
                    }
                    x1 * factor.max(config.clamp_floor)
                }
                _ => x1,
            };
            stage2_series[i] = Some(v);
        }
    }

    // Stage 3: bootstrapped boosted trees on the absolute residual
    // r₃ = measured − x₂. Adding the predicted shortfall moves the
    // forecast toward the measurements.
    let s3_points = fit_points(input, &stage2_series, &deltas);
    let stage3_state = fit_stage3(&s3_points, config)?;
    let mut stage3_series = vec![None; n];
    for i in 0..n {
        if let Some(x2) = stage2_series[i] {
            let v = match (&stage3_state.ensemble, input.stage_fc[i]) {
                (Some(ens), Some(s)) if stage3_state.enabled => {
                    let feat = [s, deltas[i].unwrap_or(0.0)];
                    x2 + ens.predict(&feat)
                }
                _ => x2,
            };
            stage3_series[i] = Some(v);
        }
    }

    Ok(PipelineOutput {
        updated,
        stage1: stage1_series,
        stage2: stage2_series,
        stage3: stage3_series,
        state: ResidualPipelineState {
            ar: ar_state,
            stage1: stage1_state,
            stage2: stage2_state,
            stage3: stage3_state,
        },
        flags,
        clamp_count,
    })
}

/// r₂ = r₁ − c₁·r̂₁ at the measured points, smoothed against stage.
/// `s2_points.current` already holds x₁; r₁ and r̂₁ are reconstructed
/// from the Stage-1 inputs so the target matches the paper's definition.
fn fit_stage2(
    input: &PipelineInput,
    updated: &[Option<f64>],
    s2_points: &[MeasuredPoint],
    stage1_state: &Stage1State,
    config: &PipelineConfig,
) -> Stage2State {
    if !config.stage2_enabled {
        return Stage2State {
            warning: Some("stage 2 disabled by config".into()),
            ..Default::default()
        };
    }
    let deltas = delta_series(&input.stage_fc);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for p in s2_points {
        let Some(u) = updated[p.idx] else { continue };
        if u == 0.0 {
            continue;
        }
        let r1 = (u - p.measured) / u;
        let r1_hat = stage1_state.predict(p.stage_fc, deltas[p.idx]);
        xs.push(p.stage_fc);
        ys.push(r1 - stage1_state.c1 * r1_hat);
    }
    if xs.len() < 3 {
        return Stage2State {
            warning: Some(format!(
                "only {} measured points; stage 2 disabled",
                xs.len()
            )),
            ..Default::default()
        };
    }
    let smoother = match Lowess::fit(&xs, &ys, config.lowess_fraction) {
        Ok(s) => s,
        Err(e) => {
            return Stage2State {
                warning: Some(format!("lowess fit failed: {e}")),
                ..Default::default()
            }
        }
    };
    let c2 = confidence(
        mape(s2_points.iter().map(|p| (p.reported, p.current))),
        mape(s2_points.iter().map(|p| (p.measured, p.reported))),
    );
    Stage2State {
        smoother: Some(smoother),
        c2,
        enabled: true,
        warning: None,
    }
}

/// r₃ = measured − x₂ (absolute, not percentage) on the fit points.
fn fit_stage3(s3_points: &[MeasuredPoint], config: &PipelineConfig) -> Result<Stage3State> {
    if !config.stage3_enabled {
        return Ok(Stage3State {
            warning: Some("stage 3 disabled by config".into()),
            ..Default::default()
        });
    }
    if s3_points.len() < 5 {
        return Ok(Stage3State {
            warning: Some(format!(
                "only {} measured points; stage 3 disabled",
                s3_points.len()
            )),
            ..Default::default()
        });
    }
    let features: Vec<Vec<f64>> = s3_points
        .iter()
        .map(|p| vec![p.stage_fc, p.delta_stage.unwrap_or(0.0)])
        .collect();
    let r3: Vec<f64> = s3_points.iter().map(|p| p.measured - p.current).collect();
    let ensemble = BootstrapGbt::fit(&features, &r3, &config.gbt, config.n_bootstrap, config.seed)?;
    Ok(Stage3State {
        ensemble: Some(ensemble),
        n_train: s3_points.len(),
        enabled: true,
        warning: None,
    })
}

/// Write the audit CSV: per-stage series, observations, and flags.
/// `extrapolated` marks forecasts converted above the rating curve's
/// fitted range.
pub fn write_audit_csv(
    path: &Path,
    timestamps: &[DateTime<Utc>],
    input: &PipelineInput,
    output: &PipelineOutput,
    extrapolated: &[bool],
) -> Result<()> {
    let n = timestamps.len();
    if input.base.len() != n || extrapolated.len() != n {
        return Err(Error::Contract("audit inputs must share one grid".into()));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "timestamp,base,ar_corrected,stage1,stage2,stage3,reported,measured,filter_pass,clamped,extrapolated"
    )?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for i in 0..n {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            timestamps[i].to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            fmt(input.base[i]),
            fmt(output.updated[i]),
            fmt(output.stage1[i]),
            fmt(output.stage2[i]),
            fmt(output.stage3[i]),
            fmt(input.reported[i]),
            fmt(input.measured[i]),
            output.flags[i].filter_pass,
            output.flags[i].clamped,
            extrapolated[i],
        )?;
    }
    out.flush()?;
    Ok(())
}
