//! Evaluation metrics: MAE, MAPE, RMSE, bias, NSE, CC, plus flood-peak
//! bias metrics computed over action-stage exceedance events.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Scalar metrics over one (observed, forecast) series pair.
///
/// `nse` is `None` when the observed series is constant (zero variance);
/// `mape_pct` averages only targets with `|y| > 0` and
/// `mape_excluded` counts the zero targets left out.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub mae: f64,
    pub mape_pct: Option<f64>,
    pub mape_excluded: usize,
    pub rmse: f64,
    pub bias: f64,
    pub nse: Option<f64>,
    pub cc: Option<f64>,
    pub n_points: usize,
}

/// Per-event peak metrics; `aggregate` pools bias over all event points
/// and averages the per-event time bias.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeakMetrics {
    pub events: Vec<EventPeakMetrics>,
    pub aggregate: Option<EventPeakMetrics>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EventPeakMetrics {
    pub start: usize,
    pub end: usize,
    pub peak_bias: f64,
    pub peak_pct_bias: Option<f64>,
    pub peak_time_bias_hours: f64,
}

/// Full report for one model/horizon/split combination.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scalar: ScalarMetrics,
    pub peaks: Option<PeakMetrics>,
    pub n_flood_events: usize,
}

/// Contiguous flood periods as half-open index ranges `[start, end)`.
pub type FloodEvent = (usize, usize);

pub fn compute_scalar_metrics(observed: &[f64], forecast: &[f64]) -> Result<ScalarMetrics> {
    if observed.len() != forecast.len() {
        return Err(Error::Contract(format!(
            "series length mismatch: {} vs {}",
            observed.len(),
            forecast.len()
        )));
    }
    let n = observed.len();
    if n == 0 {
        return Err(Error::Contract("empty series".into()));
    }
    let nf = n as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut bias_sum = 0.0;
    let mut ape_sum = 0.0;
    let mut ape_n = 0usize;
    for (&y, &yh) in observed.iter().zip(forecast) {
        let d = y - yh;
        abs_sum += d.abs();
        sq_sum += d * d;
        bias_sum += yh - y;
        if y.abs() > 0.0 {
            ape_sum += (d / y).abs();
            ape_n += 1;
        }
    }
    let mean_y = observed.iter().sum::<f64>() / nf;
    let var_sum: f64 = observed.iter().map(|&y| (y - mean_y) * (y - mean_y)).sum();

    let nse = if n >= 2 && var_sum > 0.0 {
        Some(1.0 - sq_sum / var_sum)
    } else {
        None
    };
    let cc = if n >= 2 { pearson(observed, forecast) } else { None };
    Ok(ScalarMetrics {
        mae: abs_sum / nf,
        mape_pct: if ape_n > 0 {
            Some(100.0 * ape_sum / ape_n as f64)
        } else {
            None
        },
        mape_excluded: n - ape_n,
        rmse: (sq_sum / nf).sqrt(),
        bias: bias_sum / nf,
        nse,
        cc,
        n_points: n,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

/// Gap (in hours) under which consecutive exceedance runs merge into one
/// flood event.
pub const EVENT_MERGE_GAP_HOURS: usize = 6;

/// Maximal runs of `stage > action_level`, with runs separated by fewer
/// than [`EVENT_MERGE_GAP_HOURS`] hours merged. Returns half-open ranges.
pub fn extract_flood_events(stage: &[f64], action_level: f64) -> Vec<FloodEvent> {
    let mut raw: Vec<FloodEvent> = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &s) in stage.iter().enumerate() {
        if s > action_level {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s0) = start.take() {
            raw.push((s0, i));
        }
    }
    if let Some(s0) = start {
        raw.push((s0, stage.len()));
    }
    let mut merged: Vec<FloodEvent> = Vec::new();
    for (s, e) in raw {
        match merged.last_mut() {
            Some((_, pe)) if s - *pe < EVENT_MERGE_GAP_HOURS => *pe = e,
            _ => merged.push((s, e)),
        }
    }
    merged
}

/// Peak metrics per event. `peak_bias` is the mean forecast-minus-observed
/// over event points; `peak_pct_bias` divides that by the mean observed
/// discharge during the event (percent); `peak_time_bias_hours` is the
/// signed offset of the forecast peak from the observed peak, ties
/// resolved to the earliest index.
pub fn peak_metrics(
    observed: &[f64],
    forecast: &[f64],
    events: &[FloodEvent],
) -> Result<PeakMetrics> {
    if observed.len() != forecast.len() {
        return Err(Error::Contract(format!(
            "series length mismatch: {} vs {}",
            observed.len(),
            forecast.len()
        )));
    }
    let mut out = Vec::with_capacity(events.len());
    let mut all_bias = 0.0;
    let mut all_obs = 0.0;
    let mut all_n = 0usize;
    let mut time_bias_sum = 0.0;
    for &(s, e) in events {
        if s >= e || e > observed.len() {
            return Err(Error::Contract(format!("bad event range [{s}, {e})")));
        }
        let n = (e - s) as f64;
        let bias: f64 = (s..e).map(|i| forecast[i] - observed[i]).sum::<f64>() / n;
        let mean_obs: f64 = observed[s..e].iter().sum::<f64>() / n;
        let t_obs = argmax(&observed[s..e]);
        let t_fc = argmax(&forecast[s..e]);
        let time_bias = t_fc as f64 - t_obs as f64;
        all_bias += bias * n;
        all_obs += mean_obs * n;
        all_n += e - s;
        time_bias_sum += time_bias;
        out.push(EventPeakMetrics {
            start: s,
            end: e,
            peak_bias: bias,
            peak_pct_bias: pct(bias, mean_obs),
            peak_time_bias_hours: time_bias,
        });
    }
    let aggregate = if all_n > 0 {
        let bias = all_bias / all_n as f64;
        let mean_obs = all_obs / all_n as f64;
        Some(EventPeakMetrics {
            start: 0,
            end: 0,
            peak_bias: bias,
            peak_pct_bias: pct(bias, mean_obs),
            peak_time_bias_hours: time_bias_sum / events.len() as f64,
        })
    } else {
        None
    };
    Ok(PeakMetrics {
        events: out,
        aggregate,
    })
}

fn pct(bias: f64, mean_obs: f64) -> Option<f64> {
    if mean_obs.abs() > 0.0 {
        Some(100.0 * bias / mean_obs)
    } else {
        None
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Full report: scalar metrics plus peak metrics over the events found in
/// the observed stage series.
pub fn full_report(
    observed: &[f64],
    forecast: &[f64],
    stage: &[f64],
    action_level: f64,
) -> Result<MetricsReport> {
    let scalar = compute_scalar_metrics(observed, forecast)?;
    let events = extract_flood_events(stage, action_level);
    let peaks = if events.is_empty() {
        None
    } else {
        Some(peak_metrics(observed, forecast, &events)?)
    };
    Ok(MetricsReport {
        scalar,
        n_flood_events: events.len(),
        peaks,
    })
}
