//! Shared helpers for integration tests: an independent straight-line
//! reimplementation of the diffusion convolution and gated step (the
//! oracle the tape-based model is checked against), and a driver that
//! runs the full synthetic-train-correct experiment used by several
//! acceptance criteria.

use flowcast::config::RunConfig;
use flowcast::graph::{build_transitions, WatershedGraph};
use flowcast::ingest::make_windows;
use flowcast::model::train::{train_base_model, BoundBase, HyperGrid, OptimizerKind, TrainOptions};
use flowcast::model::{GateWeights, GruWeights, TargetSpace};
use flowcast::numerics::Tensor;
use flowcast::run::{forecast_horizon, LoadedData};
use flowcast::synth::{generate, SynthScenario};

// ---------------------------------------------------------------------
// Naive oracle (independent of the tape implementation)
// ---------------------------------------------------------------------

pub fn naive_transition_powers(prox: &Tensor, k_steps: usize) -> Vec<Vec<Vec<f64>>> {
    let n = prox.rows();
    let mut transition = vec![vec![0.0; n]; n];
    for i in 0..n {
        let indeg: f64 = (0..n).map(|j| prox.get(j, i)).sum();
        if indeg > 0.0 {
            for j in 0..n {
                transition[i][j] = prox.get(j, i) / indeg;
            }
        }
    }
    let mut powers = Vec::with_capacity(k_steps);
    let mut ident = vec![vec![0.0; n]; n];
    for (i, row) in ident.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    powers.push(ident);
    for k in 1..k_steps {
        let prev = &powers[k - 1];
        let mut next = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for (l, trow) in transition.iter().enumerate() {
                    s += prev[i][l] * trow[j];
                }
                next[i][j] = s;
            }
        }
        powers.push(next);
    }
    powers
}

/// Definition-level evaluation of the convolution layer: per output
/// feature, sum over input features and walk steps, then activate.
pub fn naive_dconv(
    x: &[Vec<f64>],
    theta: &[Vec<Vec<f64>>],
    powers: &[Vec<Vec<f64>>],
    activation: impl Fn(f64) -> f64,
) -> Vec<Vec<f64>> {
    let n = x.len();
    let d_out = theta.len();
    let mut out = vec![vec![0.0; d_out]; n];
    for (o, theta_o) in theta.iter().enumerate() {
        for (di, theta_oi) in theta_o.iter().enumerate() {
            for (k, &coef) in theta_oi.iter().enumerate() {
                for i in 0..n {
                    let mut walked = 0.0;
                    for (j, xj) in x.iter().enumerate() {
                        walked += powers[k][i][j] * xj[di];
                    }
                    out[i][o] += coef * walked;
                }
            }
        }
    }
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v = activation(*v);
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn repack(gate: &GateWeights) -> Vec<Vec<Vec<f64>>> {
    let k_steps = gate.theta.len();
    let d_in = gate.theta[0].rows();
    let d_out = gate.theta[0].cols();
    let mut theta = vec![vec![vec![0.0; k_steps]; d_in]; d_out];
    for (k, m) in gate.theta.iter().enumerate() {
        for i in 0..d_in {
            for (o, row) in theta.iter_mut().enumerate() {
                row[i][k] = m.get(i, o);
            }
        }
    }
    theta
}

fn naive_gate(
    concat: &[Vec<f64>],
    gate: &GateWeights,
    powers: &[Vec<Vec<f64>>],
    act: impl Fn(f64) -> f64,
) -> Vec<Vec<f64>> {
    let theta = repack(gate);
    let mut pre = naive_dconv(concat, &theta, powers, |v| v);
    for row in pre.iter_mut() {
        for (o, v) in row.iter_mut().enumerate() {
            *v = act(*v + gate.bias.get(0, o));
        }
    }
    pre
}

/// One gated step per the standard GRU equations with convolutional maps.
pub fn naive_gru_step(
    x: &[Vec<f64>],
    h: &[Vec<f64>],
    w: &GruWeights,
    powers: &[Vec<Vec<f64>>],
) -> Vec<Vec<f64>> {
    let n = x.len();
    let concat: Vec<Vec<f64>> = (0..n)
        .map(|i| x[i].iter().chain(h[i].iter()).copied().collect())
        .collect();
    let r = naive_gate(&concat, &w.reset, powers, sigmoid);
    let u = naive_gate(&concat, &w.update, powers, sigmoid);
    let rh: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            x[i].iter()
                .copied()
                .chain(h[i].iter().zip(&r[i]).map(|(hv, rv)| hv * rv))
                .collect()
        })
        .collect();
    let c = naive_gate(&rh, &w.candidate, powers, f64::tanh);
    (0..n)
        .map(|i| {
            (0..w.hidden)
                .map(|j| u[i][j] * h[i][j] + (1.0 - u[i][j]) * c[i][j])
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------
// Synthetic residual experiment shared by several criteria
// ---------------------------------------------------------------------

/// Per-run summary of the correction cascade on one scenario seed.
#[derive(Clone, Debug)]
pub struct ResidualRun {
    pub seed: u64,
    pub horizon: usize,
    pub c1: f64,
    pub c2: f64,
    pub rho1: f64,
    pub stage1_enabled: bool,
    /// Test measured points passing the Stage-1 flood filter.
    pub n_flood_points: usize,
    pub mape_updated_flood: f64,
    pub mape_stage1_flood: f64,
    /// Overall test measured-point MAPEs per cascade stage.
    pub mape_updated: f64,
    pub mape_stage1: f64,
    pub mape_stage2: f64,
    pub mape_stage3: f64,
}

impl ResidualRun {
    pub fn flood_improvement(&self) -> f64 {
        (self.mape_updated_flood - self.mape_stage1_flood) / self.mape_updated_flood
    }
}

/// Scenario for the residual-recovery criteria: strong hysteresis, no
/// measurement noise, measurements frequent enough to populate floods.
pub fn residual_scenario(seed: u64) -> SynthScenario {
    SynthScenario {
        seed,
        hysteresis_kappa: 0.3,
        sigma_meas: 0.0,
        measurement_interval_hours: 24,
        measurement_jitter_hours: 4,
        ..SynthScenario::default()
    }
}

/// Training budget shared by the experiment runs: one grid point, small
/// but sufficient to give the AR step a well-behaved base forecast.
pub fn experiment_grid() -> HyperGrid {
    HyperGrid {
        batch_sizes: vec![64],
        learning_rates: vec![3e-3],
        hidden_sizes: vec![16],
        decoder_layers: vec![1],
    }
}

pub fn experiment_train_options(seed: u64) -> TrainOptions {
    TrainOptions {
        max_epochs: 12,
        patience: 5,
        seed,
        k_steps: 2,
        optimizer: OptimizerKind::Adam,
    }
}

/// Generate, train at the given horizon, forecast, correct, and summarize.
pub fn run_residual_experiment(seed: u64, horizon: usize, n_hours: usize) -> ResidualRun {
    let scenario = residual_scenario(seed);
    let out = generate(&scenario, n_hours).expect("scenario generates");
    let mut config = RunConfig::default();
    config.seed = seed;
    config.data.t_window = 24;
    config.data.action_level_ft = scenario.action_level_ft;
    config.train.k_diffusion = 2;

    let frame = out.frame;
    let graph = out.graph;
    let split = frame
        .split_indices(config.split_fractions(), config.data.t_window)
        .expect("long enough");
    let transitions = build_transitions(&graph, 2).expect("transitions");
    let windows = make_windows(&frame, config.data.t_window, horizon).expect("windows");
    let train_w = windows.in_range(0, split.train_end);
    let val_w = windows.in_range(split.train_end, split.val_end);
    let trained = train_base_model(
        &transitions,
        graph.target(),
        graph.n_nodes(),
        &train_w,
        &val_w,
        &experiment_grid(),
        &experiment_train_options(seed),
        TargetSpace::Stage,
        config.data.t_window,
        horizon,
    )
    .expect("training succeeds");

    let data = LoadedData {
        frame,
        graph,
        curves: out.target_curve,
        split,
    };
    let fc = forecast_horizon(&config, &data, &transitions, &trained.model.params, horizon)
        .expect("forecast succeeds");

    let mape = |series: &[Option<f64>], only_flood: bool| -> (f64, usize) {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in split.val_end..split.n {
            let (Some(m), Some(v)) = (data.frame.measured(i), series[i]) else {
                continue;
            };
            if only_flood && !fc.output.flags[i].filter_pass {
                continue;
            }
            sum += ((m - v) / m).abs();
            n += 1;
        }
        (if n > 0 { 100.0 * sum / n as f64 } else { f64::NAN }, n)
    };
    let (mape_updated_flood, n_flood_points) = mape(&fc.output.updated, true);
    let (mape_stage1_flood, _) = mape(&fc.output.stage1, true);
    let (mape_updated, _) = mape(&fc.output.updated, false);
    let (mape_stage1, _) = mape(&fc.output.stage1, false);
    let (mape_stage2, _) = mape(&fc.output.stage2, false);
    let (mape_stage3, _) = mape(&fc.output.stage3, false);
    let st = &fc.output.state;
    ResidualRun {
        seed,
        horizon,
        c1: st.stage1.c1,
        c2: st.stage2.c2,
        rho1: st.stage1.rho,
        stage1_enabled: st.stage1.enabled,
        n_flood_points,
        mape_updated_flood,
        mape_stage1_flood,
        mape_updated,
        mape_stage1,
        mape_stage2,
        mape_stage3,
    }
}

/// Build a `BoundBase`-style random model with a small parameter count
/// for gradient checks.
pub fn small_bound_model<'a>(
    transitions: &'a flowcast::graph::TransitionSet,
    n_stations: usize,
    hidden: usize,
    k: usize,
    seed: u64,
) -> BoundBase<'a> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let norm = flowcast::model::NormStats {
        stage_mean: vec![5.0; n_stations],
        stage_std: vec![2.0; n_stations],
        rain_mean: 1.0,
        rain_std: 1.5,
        target_mean: 5.0,
        target_std: 2.0,
    };
    BoundBase {
        params: flowcast::model::BaseModelParams::init(
            hidden,
            k,
            2,
            6,
            1,
            norm,
            TargetSpace::Stage,
            &mut rng,
        ),
        transitions,
        target_node: 0,
    }
}

pub fn chain_graph(n: usize) -> WatershedGraph {
    WatershedGraph::new(
        (0..n).map(|i| format!("S{i}")).collect(),
        0,
        (1..n)
            .map(|i| flowcast::graph::Edge {
                from: i,
                to: i - 1,
                distance_km: 5.0 + 3.0 * i as f64,
            })
            .collect(),
    )
    .unwrap()
}
