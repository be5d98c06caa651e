//! Deterministic gradient-descent training: Adam (or SGD) with early
//! stopping on validation weighted MSE, over a fixed hyperparameter grid.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::graph::TransitionSet;
use crate::ingest::WindowSample;
use crate::numerics::{Tape, Tensor, Var};
use crate::{Error, Result};

use super::loss::weighted_mse_on_tape;
use super::{
    base_forward_on_tape, insert_base, insert_plain, BaseModelParams, BinWeights, GateVars,
    GateWeights, GruWeights, NormStats, PlainGruModel, TargetSpace,
};

/// One hyperparameter combination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub decoder_layers: usize,
}

/// Deterministic hyperparameter grid, enumerated in declaration order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HyperGrid {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub hidden_sizes: Vec<usize>,
    pub decoder_layers: Vec<usize>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            batch_sizes: vec![16, 64],
            learning_rates: vec![1e-3, 3e-4],
            hidden_sizes: vec![16, 32],
            decoder_layers: vec![1, 2],
        }
    }
}

impl HyperGrid {
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &batch_size in &self.batch_sizes {
            for &learning_rate in &self.learning_rates {
                for &hidden in &self.hidden_sizes {
                    for &decoder_layers in &self.decoder_layers {
                        out.push(GridPoint {
                            batch_size,
                            learning_rate,
                            hidden,
                            decoder_layers,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Knobs shared by every grid point.
#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub k_steps: usize,
    pub optimizer: OptimizerKind,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_epochs: 40,
            patience: 10,
            seed: 0,
            k_steps: 2,
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LogRow {
    pub grid_index: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug)]
pub struct TrainOutput<M> {
    pub model: M,
    pub chosen: GridPoint,
    pub best_val_loss: f64,
    pub log: Vec<LogRow>,
    /// Grid points abandoned on non-finite loss, with the reason.
    pub aborted: Vec<(GridPoint, String)>,
}

/// Write the training log as CSV: epoch, train loss, val loss, lr.
pub fn write_training_log(log: &[LogRow], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "grid_index,epoch,train_loss,val_loss,learning_rate")?;
    for r in log {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.grid_index, r.epoch, r.train_loss, r.val_loss, r.learning_rate
        )?;
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------

pub(crate) enum Optimizer {
    Adam {
        m: Vec<Tensor>,
        v: Vec<Tensor>,
        t: i32,
    },
    Sgd,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    fn new(kind: OptimizerKind, shapes: &[[usize; 2]]) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam {
                m: shapes.iter().map(|s| Tensor::zeros(s[0], s[1])).collect(),
                v: shapes.iter().map(|s| Tensor::zeros(s[0], s[1])).collect(),
                t: 0,
            },
            OptimizerKind::Sgd => Optimizer::Sgd,
        }
    }

    fn step(&mut self, lr: f64, params: &mut [&mut Tensor], grads: &[Option<Tensor>]) {
        match self {
            Optimizer::Adam { m, v, t } => {
                *t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(*t);
                let bc2 = 1.0 - ADAM_BETA2.powi(*t);
                for i in 0..params.len() {
                    let Some(g) = &grads[i] else { continue };
                    let p = params[i].data_mut();
                    let md = m[i].data_mut();
                    let vd = v[i].data_mut();
                    for j in 0..p.len() {
                        let gj = g.data()[j];
                        md[j] = ADAM_BETA1 * md[j] + (1.0 - ADAM_BETA1) * gj;
                        vd[j] = ADAM_BETA2 * vd[j] + (1.0 - ADAM_BETA2) * gj * gj;
                        let mhat = md[j] / bc1;
                        let vhat = vd[j] / bc2;
                        p[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
            Optimizer::Sgd => {
                for i in 0..params.len() {
                    let Some(g) = &grads[i] else { continue };
                    let p = params[i].data_mut();
                    for j in 0..p.len() {
                        p[j] -= lr * g.data()[j];
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------
// Generic mini-batch loop
// ---------------------------------------------------------------------

/// A model the shared loop can train: it inserts its parameters on a tape
/// (tracked var order matching `params_mut`), runs a batched forward, and
/// names its regression target.
pub trait Trainable: Clone {
    type Vars;
    fn insert(&self, tape: &mut Tape) -> (Self::Vars, Vec<Var>);
    fn forward(
        &self,
        tape: &mut Tape,
        vars: &Self::Vars,
        windows: &[&WindowSample],
    ) -> Result<Var>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    fn target(&self, w: &WindowSample) -> f64;
}

pub(crate) fn gate_flat_vars(g: &GateVars, out: &mut Vec<Var>) {
    out.extend(g.theta.iter().copied());
    out.push(g.bias);
}

pub(crate) fn gate_tensors_mut<'a>(g: &'a mut GateWeights, out: &mut Vec<&'a mut Tensor>) {
    for t in g.theta.iter_mut() {
        out.push(t);
    }
    out.push(&mut g.bias);
}

pub(crate) fn gru_tensors_mut<'a>(g: &'a mut GruWeights, out: &mut Vec<&'a mut Tensor>) {
    gate_tensors_mut(&mut g.reset, out);
    gate_tensors_mut(&mut g.update, out);
    gate_tensors_mut(&mut g.candidate, out);
}

pub(crate) struct LoopOutcome<M> {
    pub model: M,
    pub best_val: f64,
    pub rows: Vec<(usize, f64, f64)>,
    pub diverged: Option<String>,
}

/// Predictions of a trainable model over arbitrary windows, evaluated in
/// fixed-size chunks.
pub fn predict_all<M: Trainable>(model: &M, windows: &[&WindowSample]) -> Result<Vec<f64>> {
    let mut preds = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(256) {
        let mut tape = Tape::new();
        let (vars, _) = model.insert(&mut tape);
        let out = model.forward(&mut tape, &vars, chunk)?;
        preds.extend(tape.value(out).data().iter().copied());
    }
    Ok(preds)
}

fn eval_loss<M: Trainable>(model: &M, windows: &[&WindowSample], bins: &BinWeights) -> Result<f64> {
    let preds = predict_all(model, windows)?;
    let targets: Vec<f64> = windows.iter().map(|w| model.target(w)).collect();
    super::loss::weighted_mse_loss(&preds, &targets, bins)
}

/// Train one grid point. Validation weighted MSE drives early stopping;
/// when the validation set is empty the epoch training loss stands in.
pub(crate) fn run_loop<M: Trainable>(
    mut model: M,
    train_windows: &[&WindowSample],
    val_windows: &[&WindowSample],
    bins: &BinWeights,
    batch_size: usize,
    lr: f64,
    opts: &TrainOptions,
    loop_seed: u64,
) -> Result<LoopOutcome<M>> {
    if train_windows.is_empty() {
        return Err(Error::Contract("no training windows".into()));
    }
    let shapes: Vec<[usize; 2]> = model.params_mut().iter().map(|t| t.shape()).collect();
    let mut optimizer = Optimizer::new(opts.optimizer, &shapes);

    let mut best = model.clone();
    let mut best_val = eval_loss(
        &model,
        if val_windows.is_empty() {
            train_windows
        } else {
            val_windows
        },
        bins,
    )?;
    let mut rows = Vec::new();
    let mut since_best = 0usize;

    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    for epoch in 0..opts.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(loop_seed, &format!("epoch{epoch}")));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_n = 0usize;
        for batch_idx in order.chunks(batch_size) {
            let batch: Vec<&WindowSample> = batch_idx.iter().map(|&i| train_windows[i]).collect();
            let targets: Vec<f64> = batch.iter().map(|w| model.target(w)).collect();
            let mut tape = Tape::new();
            let (vars, flat) = model.insert(&mut tape);
            let preds = model.forward(&mut tape, &vars, &batch)?;
            let loss = weighted_mse_on_tape(&mut tape, preds, &targets, bins)?;
            let loss_value = tape.value(loss).get(0, 0);
            if !loss_value.is_finite() {
                return Ok(LoopOutcome {
                    model: best,
                    best_val,
                    rows,
                    diverged: Some(format!("non-finite loss at epoch {epoch}")),
                });
            }
            epoch_loss += loss_value * batch.len() as f64;
            epoch_n += batch.len();
            tape.backward(loss)?;
            let grads: Vec<Option<Tensor>> =
                flat.iter().map(|&v| tape.grad(v).cloned()).collect();
            let mut params = model.params_mut();
            optimizer.step(lr, &mut params, &grads);
        }
        let train_loss = epoch_loss / epoch_n as f64;
        let val_loss = if val_windows.is_empty() {
            train_loss
        } else {
            eval_loss(&model, val_windows, bins)?
        };
        rows.push((epoch, train_loss, val_loss));
        if !val_loss.is_finite() {
            return Ok(LoopOutcome {
                model: best,
                best_val,
                rows,
                diverged: Some(format!("non-finite validation loss at epoch {epoch}")),
            });
        }
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                break;
            }
        }
    }
    Ok(LoopOutcome {
        model: best,
        best_val,
        rows,
        diverged: None,
    })
}

/// Grid-search driver: trains every point, returns the lowest-validation
/// model (ties resolved by grid order).
pub(crate) fn run_grid<M, F>(
    grid: &HyperGrid,
    train_windows: &[&WindowSample],
    val_windows: &[&WindowSample],
    bins: &BinWeights,
    opts: &TrainOptions,
    mut build: F,
) -> Result<TrainOutput<M>>
where
    M: Trainable,
    F: FnMut(&GridPoint, &mut ChaCha8Rng) -> Result<M>,
{
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::Contract("empty hyperparameter grid".into()));
    }
    let mut best: Option<(usize, f64, M)> = None;
    let mut log = Vec::new();
    let mut aborted = Vec::new();
    for (gi, point) in points.iter().enumerate() {
        let seed = derive_seed(opts.seed, &format!("grid{gi}"));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
        let model = build(point, &mut rng)?;
        let outcome = run_loop(
            model,
            train_windows,
            val_windows,
            bins,
            point.batch_size,
            point.learning_rate,
            opts,
            seed,
        )?;
        for (epoch, train_loss, val_loss) in &outcome.rows {
            log.push(LogRow {
                grid_index: gi,
                epoch: *epoch,
                train_loss: *train_loss,
                val_loss: *val_loss,
                learning_rate: point.learning_rate,
            });
        }
        if let Some(reason) = outcome.diverged {
            aborted.push((*point, reason));
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, bv, _)) => outcome.best_val < *bv,
        };
        if better {
            best = Some((gi, outcome.best_val, outcome.model));
        }
    }
    let (gi, best_val_loss, model) = best.ok_or_else(|| {
        Error::Contract("every grid point diverged; nothing to select".into())
    })?;
    Ok(TrainOutput {
        model,
        chosen: points[gi],
        best_val_loss,
        log,
        aborted,
    })
}

// ---------------------------------------------------------------------
// Concrete trainables
// ---------------------------------------------------------------------

/// Base model bound to its graph context for training/inference.
#[derive(Clone)]
pub struct BoundBase<'a> {
    pub params: BaseModelParams,
    pub transitions: &'a TransitionSet,
    pub target_node: usize,
}

impl Trainable for BoundBase<'_> {
    type Vars = super::BaseVars;

    fn insert(&self, tape: &mut Tape) -> (Self::Vars, Vec<Var>) {
        let vars = insert_base(tape, &self.params, true);
        let mut flat = Vec::new();
        for g in [&vars.gcgru, &vars.rain] {
            gate_flat_vars(&g.reset, &mut flat);
            gate_flat_vars(&g.update, &mut flat);
            gate_flat_vars(&g.candidate, &mut flat);
        }
        for (w, b) in &vars.decoder {
            flat.push(*w);
            flat.push(*b);
        }
        (vars, flat)
    }

    fn forward(
        &self,
        tape: &mut Tape,
        vars: &Self::Vars,
        windows: &[&WindowSample],
    ) -> Result<Var> {
        base_forward_on_tape(
            tape,
            vars,
            &self.params,
            self.transitions,
            self.target_node,
            windows,
        )
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        gru_tensors_mut(&mut self.params.gcgru, &mut out);
        gru_tensors_mut(&mut self.params.rain_gru, &mut out);
        for (w, b) in self.params.decoder.layers.iter_mut() {
            out.push(w);
            out.push(b);
        }
        out
    }

    fn target(&self, w: &WindowSample) -> f64 {
        match self.params.target_space {
            TargetSpace::Stage => w.target_stage,
            TargetSpace::Discharge => w.target_reported,
        }
    }
}

/// Plain-GRU baseline bound for training.
#[derive(Clone)]
pub struct BoundPlainGru {
    pub params: PlainGruModel,
}

impl Trainable for BoundPlainGru {
    type Vars = super::PlainGruVars;

    fn insert(&self, tape: &mut Tape) -> (Self::Vars, Vec<Var>) {
        let vars = insert_plain(tape, &self.params, true);
        let mut flat = Vec::new();
        gate_flat_vars(&vars.gru.reset, &mut flat);
        gate_flat_vars(&vars.gru.update, &mut flat);
        gate_flat_vars(&vars.gru.candidate, &mut flat);
        for (w, b) in &vars.decoder {
            flat.push(*w);
            flat.push(*b);
        }
        (vars, flat)
    }

    fn forward(
        &self,
        tape: &mut Tape,
        vars: &Self::Vars,
        windows: &[&WindowSample],
    ) -> Result<Var> {
        super::plain_forward_on_tape(tape, vars, &self.params, windows)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        gru_tensors_mut(&mut self.params.gru, &mut out);
        for (w, b) in self.params.decoder.layers.iter_mut() {
            out.push(w);
            out.push(b);
        }
        out
    }

    fn target(&self, w: &WindowSample) -> f64 {
        w.target_reported
    }
}

/// Train the base forecaster over the grid. `target_space` selects the
/// stage-forecasting form (converted through a rating curve downstream)
/// or the direct-discharge variant.
#[allow(clippy::too_many_arguments)]
pub fn train_base_model<'a>(
    transitions: &'a TransitionSet,
    target_node: usize,
    n_stations: usize,
    train_windows: &[&WindowSample],
    val_windows: &[&WindowSample],
    grid: &HyperGrid,
    opts: &TrainOptions,
    target_space: TargetSpace,
    t_window: usize,
    horizon: usize,
) -> Result<TrainOutput<BoundBase<'a>>> {
    let norm = NormStats::fit(train_windows, n_stations, target_space)?;
    let targets: Vec<f64> = train_windows
        .iter()
        .map(|w| match target_space {
            TargetSpace::Stage => w.target_stage,
            TargetSpace::Discharge => w.target_reported,
        })
        .collect();
    let bins = BinWeights::fit(&targets)?;
    run_grid(
        grid,
        train_windows,
        val_windows,
        &bins,
        opts,
        |point, rng| {
            Ok(BoundBase {
                params: BaseModelParams::init(
                    point.hidden,
                    opts.k_steps,
                    point.decoder_layers,
                    t_window,
                    horizon,
                    norm.clone(),
                    target_space,
                    rng,
                ),
                transitions,
                target_node,
            })
        },
    )
}

/// Train the graphless GRU baseline (discharge targets).
pub fn train_plain_gru(
    n_stations: usize,
    train_windows: &[&WindowSample],
    val_windows: &[&WindowSample],
    grid: &HyperGrid,
    opts: &TrainOptions,
    t_window: usize,
    horizon: usize,
) -> Result<TrainOutput<BoundPlainGru>> {
    let norm = NormStats::fit(train_windows, n_stations, TargetSpace::Discharge)?;
    let targets: Vec<f64> = train_windows.iter().map(|w| w.target_reported).collect();
    let bins = BinWeights::fit(&targets)?;
    run_grid(
        grid,
        train_windows,
        val_windows,
        &bins,
        opts,
        |point, rng| {
            Ok(BoundPlainGru {
                params: PlainGruModel::init(
                    n_stations,
                    point.hidden,
                    point.decoder_layers,
                    t_window,
                    horizon,
                    norm.clone(),
                    rng,
                ),
            })
        },
    )
}
