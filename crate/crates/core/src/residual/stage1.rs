//! Stage 1: learn the hysteresis-driven percentage residual as a linear
//! function of the forecast water-level change, on flood-filtered
//! measured points, and apply it scaled by the confidence index c₁.

use crate::{Error, Result};

/// One measured-discharge point assembled by the pipeline for fitting.
#[derive(Clone, Copy, Debug)]
pub struct MeasuredPoint {
    /// Index into the pipeline's hourly series.
    pub idx: usize,
    pub measured: f64,
    pub reported: f64,
    /// Forecast discharge entering this stage (x_updated for Stage 1).
    pub current: f64,
    /// Forecast stage x_W* (feet).
    pub stage_fc: f64,
    /// Forecast stage change over the previous hour, when defined.
    pub delta_stage: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Stage1State {
    pub rho: f64,
    pub intercept: f64,
    pub w_action: f64,
    /// Share of measured points at or above the action stage, percent.
    pub e_action_pct: f64,
    /// Stage-change filter threshold: the (100 − e_action)-th percentile
    /// of Δ stage over all measured points.
    pub delta_threshold: f64,
    pub c1: f64,
    pub n_train: usize,
    pub enabled: bool,
    pub warning: Option<String>,
}

impl Stage1State {
    pub fn disabled(w_action: f64, warning: impl Into<String>) -> Self {
        Stage1State {
            w_action,
            warning: Some(warning.into()),
            ..Default::default()
        }
    }

    /// Does a point pass the same filter the training set used?
    pub fn passes_filter(&self, stage_fc: f64, delta_stage: Option<f64>) -> bool {
        self.enabled
            && stage_fc >= self.w_action
            && delta_stage.is_some_and(|d| d >= self.delta_threshold)
    }

    /// Predicted percentage residual r̂₁ (0 outside the filter).
    pub fn predict(&self, stage_fc: f64, delta_stage: Option<f64>) -> f64 {
        if self.passes_filter(stage_fc, delta_stage) {
            self.rho * delta_stage.expect("filter checked") + self.intercept
        } else {
            0.0
        }
    }
}

/// Mean absolute percentage error of `estimate` against `truth`, percent,
/// over points with nonzero truth.
pub(crate) fn mape(pairs: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (truth, estimate) in pairs {
        if truth.abs() > 0.0 {
            sum += ((truth - estimate) / truth).abs();
            n += 1;
        }
    }
    (n > 0).then(|| 100.0 * sum / n as f64)
}

/// Confidence index `mape_a / (mape_a + mape_b)`, defined as 0.5 when
/// both errors vanish and clamped to [0, 1].
pub(crate) fn confidence(mape_a: Option<f64>, mape_b: Option<f64>) -> f64 {
    match (mape_a, mape_b) {
        (Some(a), Some(b)) if a + b > 0.0 => (a / (a + b)).clamp(0.0, 1.0),
        _ => 0.5,
    }
}

/// Linear-interpolated percentile (`p` in [0, 100]) of sorted-able data.
pub(crate) fn percentile(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let pos = (p / 100.0).clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < values.len() {
        values[lo] * (1.0 - frac) + values[lo + 1] * frac
    } else {
        values[lo]
    }
}

/// Fit Stage 1 on the fit-region measured points.
pub fn stage1_fit(points: &[MeasuredPoint], w_action: f64) -> Result<Stage1State> {
    if points.is_empty() {
        return Err(Error::Contract(
            "stage 1 needs at least one measured point".into(),
        ));
    }
    let n_total = points.len();
    let n_action = points.iter().filter(|p| p.stage_fc >= w_action).count();
    let e_action_pct = 100.0 * n_action as f64 / n_total as f64;

    let mut deltas: Vec<f64> = points.iter().filter_map(|p| p.delta_stage).collect();
    if deltas.is_empty() {
        return Ok(Stage1State::disabled(
            w_action,
            "no stage-change values among measured points",
        ));
    }
    let delta_threshold = percentile(&mut deltas, 100.0 - e_action_pct);

    let train: Vec<&MeasuredPoint> = points
        .iter()
        .filter(|p| {
            p.stage_fc >= w_action && p.delta_stage.is_some_and(|d| d >= delta_threshold)
        })
        .collect();
    let c1 = confidence(
        mape(points.iter().map(|p| (p.reported, p.current))),
        mape(points.iter().map(|p| (p.measured, p.reported))),
    );
    if train.len() < 2 {
        let mut st = Stage1State::disabled(
            w_action,
            format!("only {} filtered points; stage 1 disabled", train.len()),
        );
        st.e_action_pct = e_action_pct;
        st.delta_threshold = delta_threshold;
        return Ok(st);
    }

    // Least squares of r1 = (current - measured)/current on Δ stage.
    let xy: Vec<(f64, f64)> = train
        .iter()
        .map(|p| {
            let r1 = (p.current - p.measured) / p.current;
            (p.delta_stage.expect("filtered"), r1)
        })
        .collect();
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let var: f64 = xy.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if var <= 0.0 {
        let mut st = Stage1State::disabled(
            w_action,
            "degenerate stage-change variance; stage 1 disabled",
        );
        st.e_action_pct = e_action_pct;
        st.delta_threshold = delta_threshold;
        return Ok(st);
    }
    let cov: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let rho = cov / var;
    Ok(Stage1State {
        rho,
        intercept: my - rho * mx,
        w_action,
        e_action_pct,
        delta_threshold,
        c1,
        n_train: xy.len(),
        enabled: true,
        warning: None,
    })
}

/// Apply Eq.-8-style correction `(1 − c₁·r̂₁)·x` with the multiplicative
/// factor clamped at `clamp_floor`. Returns the corrected value, whether
/// the point passed the filter, and whether clamping occurred.
pub fn stage1_apply(
    current: f64,
    stage_fc: f64,
    delta_stage: Option<f64>,
    state: &Stage1State,
    clamp_floor: f64,
) -> (f64, bool, bool) {
    if !state.passes_filter(stage_fc, delta_stage) {
        return (current, false, false);
    }
    let r_hat = state.predict(stage_fc, delta_stage);
    let factor = 1.0 - state.c1 * r_hat;
    let clamped = factor < clamp_floor;
    (current * factor.max(clamp_floor), true, clamped)
}
