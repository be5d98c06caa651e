//! Synthetic watershed generator. Rainfall drives per-node linear
//! reservoirs routed down a small station tree; stage comes from
//! inverting each station's static rating curve, so the routed flow *is*
//! the reported discharge. The true discharge deviates from it by a
//! first-order hysteresis factor `(1 + κ·dh/dt)`, and sparse field
//! measurements observe the truth with optional relative noise. Every
//! injected error is therefore known exactly.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::graph::{Edge, WatershedGraph};
use crate::ingest::HourlyFrame;
use crate::rating_curve::{CurvePiece, CurveSegment, RatingCurveSet};
use crate::{Error, Result};

/// Everything that defines one synthetic watershed draw.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthScenario {
    pub n_stations: usize,
    pub seed: u64,
    /// Poisson storm arrival rate per hour.
    pub storm_rate_per_hour: f64,
    /// Mean of the exponential storm depth (mm).
    pub storm_depth_mean_mm: f64,
    /// Uniform storm duration range (hours).
    pub storm_duration_hours: [usize; 2],
    /// Linear-reservoir time constant of each node's runoff response (h).
    pub runoff_k_hours: f64,
    /// Flow velocity used to turn reach distance into a routing constant.
    pub reach_velocity_kmh: f64,
    /// Per-node rainfall-to-inflow coefficients (cfs per mm/h),
    /// target node first. Length must equal `n_stations`.
    pub area_coeff_cfs: Vec<f64>,
    /// Per-node constant groundwater inflow (cfs), target node first.
    pub baseflow_cfs: Vec<f64>,
    /// Hysteresis gain κ in `Q_true = Q_rc(h)·(1 + κ·dh/dt)`.
    pub hysteresis_kappa: f64,
    /// Relative white noise on field measurements, in [0, 0.05].
    pub sigma_meas: f64,
    /// Field-measurement cadence (hours) and uniform jitter (± hours).
    pub measurement_interval_hours: usize,
    pub measurement_jitter_hours: usize,
    /// Action stage at the target station (feet).
    pub action_level_ft: f64,
    pub start: DateTime<Utc>,
}

impl Default for SynthScenario {
    fn default() -> Self {
        SynthScenario {
            n_stations: 3,
            seed: 0,
            storm_rate_per_hour: 0.01,
            storm_depth_mean_mm: 22.0,
            storm_duration_hours: [4, 16],
            runoff_k_hours: 10.0,
            reach_velocity_kmh: 5.0,
            area_coeff_cfs: vec![180.0, 260.0, 140.0],
            baseflow_cfs: vec![60.0, 70.0, 40.0],
            hysteresis_kappa: 0.2,
            sigma_meas: 0.01,
            measurement_interval_hours: 96,
            measurement_jitter_hours: 12,
            action_level_ft: 8.0,
            start: Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap(),
        }
    }
}

impl SynthScenario {
    fn validate(&self) -> Result<()> {
        if !(2..=5).contains(&self.n_stations) {
            return Err(Error::Contract(format!(
                "n_stations {} outside 2..=5",
                self.n_stations
            )));
        }
        if self.hysteresis_kappa < 0.0 {
            return Err(Error::Contract("hysteresis kappa must be >= 0".into()));
        }
        if !(0.0..=0.05).contains(&self.sigma_meas) {
            return Err(Error::Contract(format!(
                "sigma_meas {} outside [0, 0.05]",
                self.sigma_meas
            )));
        }
        if self.area_coeff_cfs.len() != self.n_stations
            || self.baseflow_cfs.len() != self.n_stations
        {
            return Err(Error::Contract(
                "area_coeff_cfs and baseflow_cfs must have one entry per station".into(),
            ));
        }
        if self.storm_duration_hours[0] == 0
            || self.storm_duration_hours[0] > self.storm_duration_hours[1]
        {
            return Err(Error::Contract("bad storm duration range".into()));
        }
        if self.measurement_interval_hours == 0 {
            return Err(Error::Contract(
                "measurement interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Known truth behind a generated frame.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    /// Routed (steady) flow at the target = reported discharge (cfs).
    pub reported: Vec<f64>,
    /// True discharge with the hysteresis factor applied (cfs).
    pub true_discharge: Vec<f64>,
    /// Hourly stage change at the target (feet), 0 at index 0.
    pub dh: Vec<f64>,
    pub kappa: f64,
    pub sigma_meas: f64,
}

#[derive(Debug)]
pub struct SynthOutput {
    pub frame: HourlyFrame,
    pub graph: WatershedGraph,
    /// Rating curve of the target station (the reported curve).
    pub target_curve: RatingCurveSet,
    pub truth: GroundTruth,
    /// Storm-depth widening rounds applied to guarantee a flood.
    pub widen_rounds: usize,
}

/// Station layout: the target S0 drains a chain of upstream stations
/// S1..S{n-1}, with distances stretching upstream.
fn build_graph(n_stations: usize) -> Result<WatershedGraph> {
    let node_ids = (0..n_stations).map(|i| format!("S{i}")).collect();
    let edges = (1..n_stations)
        .map(|i| Edge {
            from: i,
            to: i - 1,
            distance_km: 8.0 + 7.0 * i as f64,
        })
        .collect();
    WatershedGraph::new(node_ids, 0, edges)
}

/// Two-piece power-law curve scaled to a node's flow magnitude.
fn station_curve(
    station_id: &str,
    scale: f64,
    span: (DateTime<Utc>, DateTime<Utc>),
) -> RatingCurveSet {
    let a1 = 18.0 * scale;
    let break_stage = 9.0;
    let q_break = a1 * (break_stage - 0.5f64).powf(1.9);
    let a2 = q_break / (break_stage - 0.5f64).powf(1.5);
    RatingCurveSet::new(
        station_id.to_string(),
        vec![CurveSegment {
            valid_from: span.0,
            valid_to: span.1,
            pieces: vec![
                CurvePiece {
                    h_min: 1.0,
                    h_max: break_stage,
                    offset: 0.5,
                    coefficient: a1,
                    exponent: 1.9,
                },
                CurvePiece {
                    h_min: break_stage,
                    h_max: 30.0,
                    offset: 0.5,
                    coefficient: a2,
                    exponent: 1.5,
                },
            ],
        }],
    )
    .expect("curve constants are valid by construction")
}

/// Hourly watershed rainfall from compound-Poisson storms.
fn rainfall_series(
    scenario: &SynthScenario,
    n_hours: usize,
    depth_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut rain = vec![0.0; n_hours];
    let arrivals = Poisson::new(scenario.storm_rate_per_hour).expect("positive rate");
    let depth = Exp::new(1.0 / (scenario.storm_depth_mean_mm * depth_scale)).expect("positive");
    let [dur_lo, dur_hi] = scenario.storm_duration_hours;
    for t in 0..n_hours {
        let k = arrivals.sample(rng) as usize;
        for _ in 0..k {
            let total: f64 = depth.sample(rng);
            let dur = rng.gen_range(dur_lo..=dur_hi);
            // Triangular in time: ramp up then down.
            let peak = (dur / 2).max(1);
            let weights: Vec<f64> = (0..dur)
                .map(|i| {
                    if i < peak {
                        (i + 1) as f64
                    } else {
                        (dur - i) as f64
                    }
                })
                .collect();
            let wsum: f64 = weights.iter().sum();
            for (i, w) in weights.iter().enumerate() {
                if t + i < n_hours {
                    rain[t + i] += total * w / wsum;
                }
            }
        }
    }
    rain
}

/// One linear reservoir: `Q = S/k`, `S ← S + I − Q`, started at the
/// steady state of its initial inflow.
fn route_reservoir(inflow: &[f64], k_hours: f64) -> Vec<f64> {
    let mut storage = inflow.first().copied().unwrap_or(0.0) * k_hours;
    let mut out = Vec::with_capacity(inflow.len());
    for &i in inflow {
        let q = storage / k_hours;
        out.push(q);
        storage += i - q;
    }
    out
}

pub fn generate(scenario: &SynthScenario, n_hours: usize) -> Result<SynthOutput> {
    scenario.validate()?;
    if n_hours < 720 {
        return Err(Error::Contract(format!(
            "n_hours {n_hours} is under the 30-day minimum (720)"
        )));
    }
    let graph = build_graph(scenario.n_stations)?;
    let span = (
        scenario.start - Duration::days(30),
        scenario.start + Duration::hours(n_hours as i64) + Duration::days(30),
    );

    // Widen storm depths until the target sees at least one flood event
    // per 90 generated days.
    let required_events = (n_hours as f64 / (90.0 * 24.0)).floor().max(1.0) as usize;
    let mut depth_scale = 1.0;
    for round in 0..8 {
        let out = generate_once(scenario, n_hours, depth_scale, round, &graph, span)?;
        let stage: Vec<f64> = (0..out.frame.len())
            .map(|i| out.frame.target_stage(i).expect("dense synth stage"))
            .collect();
        let events = crate::metrics::extract_flood_events(&stage, scenario.action_level_ft);
        if events.len() >= required_events {
            return Ok(SynthOutput {
                widen_rounds: round,
                ..out
            });
        }
        log::warn!(
            "synthetic round {round}: {} flood events < {required_events}; widening storm depths",
            events.len()
        );
        depth_scale *= 1.4;
    }
    Err(Error::Contract(
        "could not produce the required flood events after 8 widening rounds".into(),
    ))
}

fn generate_once(
    scenario: &SynthScenario,
    n_hours: usize,
    depth_scale: f64,
    round: usize,
    graph: &WatershedGraph,
    span: (DateTime<Utc>, DateTime<Utc>),
) -> Result<SynthOutput> {
    let n = scenario.n_stations;
    let mut rain_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        scenario.seed,
        &format!("rainfall round {round}"),
    ));
    let rain = rainfall_series(scenario, n_hours, depth_scale, &mut rain_rng);

    // Local runoff per node.
    let local: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let inflow: Vec<f64> = rain
                .iter()
                .map(|&r| scenario.baseflow_cfs[i] + scenario.area_coeff_cfs[i] * r)
                .collect();
            route_reservoir(&inflow, scenario.runoff_k_hours)
        })
        .collect();

    // Total flow per node: process upstream-to-downstream (the chain is
    // S{n-1} -> ... -> S0), routing each node's total through its reach.
    let mut total: Vec<Vec<f64>> = vec![Vec::new(); n];
    for i in (0..n).rev() {
        let mut q = local[i].clone();
        if i + 1 < n {
            let distance = graph
                .edges()
                .iter()
                .find(|e| e.from == i + 1 && e.to == i)
                .expect("chain edge")
                .distance_km;
            let k_reach = (distance / scenario.reach_velocity_kmh).max(1.0);
            let routed = route_reservoir(&total[i + 1], k_reach);
            for (qv, rv) in q.iter_mut().zip(&routed) {
                *qv += rv;
            }
        }
        total[i] = q;
    }

    // Stage per node through each node's static curve; flow share scales
    // the curve so stages land in comparable ranges.
    let total_base: f64 = scenario.baseflow_cfs.iter().sum();
    let curves: Vec<RatingCurveSet> = (0..n)
        .map(|i| {
            let upstream_base: f64 = (i..n).map(|j| scenario.baseflow_cfs[j]).sum();
            let scale = (upstream_base / total_base).max(0.2);
            station_curve(&graph.node_ids()[i], scale, span)
        })
        .collect();
    let mut stage: Vec<Vec<Option<f64>>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut col = Vec::with_capacity(n_hours);
        for t in 0..n_hours {
            let h =
                curves[i].to_stage(total[i][t], scenario.start + Duration::hours(t as i64))?;
            col.push(Some(h));
        }
        stage.push(col);
    }

    // Target-node truth: reported is the curve flow, true applies the
    // hysteresis factor to the stage trajectory.
    let target_stage: Vec<f64> = stage[0].iter().map(|s| s.expect("dense")).collect();
    let mut dh = vec![0.0; n_hours];
    for t in 1..n_hours {
        dh[t] = target_stage[t] - target_stage[t - 1];
    }
    let reported: Vec<f64> = total[0].clone();
    let kappa = scenario.hysteresis_kappa;
    let true_discharge: Vec<f64> = (0..n_hours)
        .map(|t| reported[t] * (1.0 + kappa * dh[t]).max(0.05))
        .collect();

    // Field measurements on a jittered schedule.
    let mut meas_rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, "measurements"));
    let noise = Normal::new(0.0, scenario.sigma_meas.max(f64::MIN_POSITIVE)).expect("sigma >= 0");
    let mut measured: Vec<Option<f64>> = vec![None; n_hours];
    let jitter = scenario.measurement_jitter_hours as i64;
    let mut t = scenario.measurement_interval_hours as i64 / 2;
    while (t as usize) < n_hours {
        let j = if jitter > 0 {
            meas_rng.gen_range(-jitter..=jitter)
        } else {
            0
        };
        let idx = (t + j).clamp(0, n_hours as i64 - 1) as usize;
        let eps = if scenario.sigma_meas > 0.0 {
            noise.sample(&mut meas_rng)
        } else {
            0.0
        };
        measured[idx] = Some(true_discharge[idx] * (1.0 + eps).max(0.05));
        t += scenario.measurement_interval_hours as i64;
    }

    let frame = HourlyFrame::new(
        scenario.start,
        graph.node_ids().to_vec(),
        0,
        stage,
        rain.iter().map(|&r| Some(r)).collect(),
        reported.iter().map(|&q| Some(q)).collect(),
        measured,
    )?;
    Ok(SynthOutput {
        frame,
        graph: graph.clone(),
        target_curve: curves.into_iter().next().expect("at least two stations"),
        truth: GroundTruth {
            reported,
            true_discharge,
            dh,
            kappa,
            sigma_meas: scenario.sigma_meas,
        },
        widen_rounds: 0,
    })
}

/// Write the known truth beside the dataset for audit.
pub fn write_ground_truth_csv(path: &std::path::Path, out: &SynthOutput) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "timestamp,reported_cfs,true_cfs,stage_ft,dh_ft,kappa,sigma_meas"
    )?;
    for i in 0..out.truth.reported.len() {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            out.frame
                .timestamp(i)
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            out.truth.reported[i],
            out.truth.true_discharge[i],
            out.frame.target_stage(i).expect("dense synth stage"),
            out.truth.dh[i],
            out.truth.kappa,
            out.truth.sigma_meas,
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_scenario(kappa: f64, sigma: f64, seed: u64) -> SynthScenario {
        SynthScenario {
            hysteresis_kappa: kappa,
            sigma_meas: sigma,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn no_injected_error_means_reported_equals_measured() {
        let sc = quick_scenario(0.0, 0.0, 1);
        let out = generate(&sc, 1440).unwrap();
        for i in 0..1440 {
            if let Some(m) = out.frame.measured(i) {
                let r = out.frame.reported(i).unwrap();
                assert!(
                    (m - r).abs() < 1e-9,
                    "index {i}: measured {m} vs reported {r}"
                );
                assert!((m - out.truth.true_discharge[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hysteresis_sign_follows_stage_change() {
        let sc = quick_scenario(0.3, 0.0, 2);
        let out = generate(&sc, 2160).unwrap();
        for i in 1..2160 {
            let t = out.truth.true_discharge[i];
            let r = out.truth.reported[i];
            if out.truth.dh[i] > 1e-9 {
                assert!(t > r, "rising limb at {i}: true {t} <= reported {r}");
            } else if out.truth.dh[i] < -1e-9 {
                assert!(t < r, "recession at {i}: true {t} >= reported {r}");
            }
        }
    }

    #[test]
    fn percentage_error_regresses_on_stage_change() {
        // (reported − true)/reported = −κ·Δh exactly, so a least-squares
        // fit over flood-filtered measured points recovers κ with R² ≈ 1.
        let sc = SynthScenario {
            measurement_interval_hours: 24,
            measurement_jitter_hours: 4,
            ..quick_scenario(0.3, 0.0, 3)
        };
        let out = generate(&sc, 24 * 360).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 1..out.truth.reported.len() {
            if out.frame.measured(i).is_none() {
                continue;
            }
            let stage = out.frame.target_stage(i).unwrap();
            if stage < sc.action_level_ft * 0.5 {
                continue;
            }
            let r = out.truth.reported[i];
            let t = out.truth.true_discharge[i];
            xs.push(out.truth.dh[i]);
            ys.push((r - t) / r);
        }
        assert!(xs.len() >= 10, "need measured points, got {}", xs.len());
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
        let slope = sxy / sxx;
        let r2 = (sxy * sxy) / (sxx * syy);
        assert!(r2 > 0.9, "R² = {r2}");
        assert!((slope + 0.3).abs() < 0.02, "slope {slope} should be ≈ −κ");
    }

    #[test]
    fn long_run_mass_balance_holds() {
        let sc = quick_scenario(0.1, 0.01, 4);
        let n_hours = 24 * 400;
        let out = generate(&sc, n_hours).unwrap();
        // Mean routed outflow at the target vs mean total inflow.
        let mean_out: f64 = out.truth.reported.iter().sum::<f64>() / n_hours as f64;
        let mut mean_in = 0.0;
        for i in 0..n_hours {
            let rain = out.frame.rainfall(i).unwrap();
            mean_in += sc.baseflow_cfs.iter().sum::<f64>()
                + rain * sc.area_coeff_cfs.iter().sum::<f64>();
        }
        mean_in /= n_hours as f64;
        let rel = (mean_out - mean_in).abs() / mean_in;
        assert!(rel < 0.05, "mass balance off by {rel}");
    }

    #[test]
    fn at_least_one_flood_per_90_days() {
        let sc = quick_scenario(0.2, 0.01, 5);
        let out = generate(&sc, 24 * 90).unwrap();
        let stage: Vec<f64> = (0..out.frame.len())
            .map(|i| out.frame.target_stage(i).unwrap())
            .collect();
        let events = crate::metrics::extract_flood_events(&stage, sc.action_level_ft);
        assert!(!events.is_empty());
    }

    #[test]
    fn determinism_per_seed() {
        let sc = quick_scenario(0.25, 0.02, 7);
        let a = generate(&sc, 1000).unwrap();
        let b = generate(&sc, 1000).unwrap();
        assert_eq!(a.frame, b.frame);
        assert_eq!(a.truth.true_discharge, b.truth.true_discharge);
        let c = generate(&quick_scenario(0.25, 0.02, 8), 1000).unwrap();
        assert_ne!(a.frame, c.frame);
    }

    #[test]
    fn parameter_ranges_enforced() {
        assert!(generate(&quick_scenario(-0.1, 0.0, 0), 1000).is_err());
        assert!(generate(&quick_scenario(0.2, 0.2, 0), 1000).is_err());
        assert!(generate(&quick_scenario(0.2, 0.0, 0), 100).is_err());
        let bad = SynthScenario {
            n_stations: 9,
            ..Default::default()
        };
        assert!(generate(&bad, 1000).is_err());
    }

    #[test]
    fn generated_values_strictly_positive() {
        let sc = quick_scenario(0.3, 0.05, 9);
        let out = generate(&sc, 2000).unwrap();
        for i in 0..2000 {
            assert!(out.truth.reported[i] > 0.0);
            assert!(out.truth.true_discharge[i] > 0.0);
            for s in 0..sc.n_stations {
                assert!(out.frame.stage(s, i).unwrap() > 0.0);
            }
        }
    }
}
