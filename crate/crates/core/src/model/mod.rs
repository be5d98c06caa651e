//! The base forecaster: a graph-convolutional GRU over multi-station
//! stage series plus a plain GRU over watershed rainfall, decoded by a
//! ReLU MLP into the target-station stage `h` hours ahead. Variants share
//! the machinery: the direct model swaps the target to discharge, the
//! plain-GRU baseline drops the graph.

mod checkpoint;
mod loss;
pub mod baselines;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointModel};
pub use loss::{weighted_mse_loss, BinWeights};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::TransitionSet;
use crate::ingest::WindowSample;
use crate::numerics::{Tape, Tensor, Var};
use crate::{Error, Result};

/// What the decoder output means, and which normalization it reverses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetSpace {
    /// Water level at the target station (feet); converted to discharge
    /// through a rating curve downstream of the model.
    Stage,
    /// Reported discharge at the target station (cfs), forecast directly.
    Discharge,
}

/// Learnable tensors of one gate: `theta[k]` maps the k-th diffusion term
/// (input-concat-hidden × hidden), plus a bias row.
#[derive(Clone, Debug)]
pub struct GateWeights {
    pub theta: Vec<Tensor>,
    pub bias: Tensor,
}

impl GateWeights {
    fn init(d_in: usize, d_out: usize, k_steps: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (d_in as f64).sqrt();
        let theta = (0..k_steps)
            .map(|_| random_tensor(d_in, d_out, scale, rng))
            .collect();
        GateWeights {
            theta,
            bias: Tensor::zeros(1, d_out),
        }
    }

    fn zeros(d_in: usize, d_out: usize, k_steps: usize) -> Self {
        GateWeights {
            theta: (0..k_steps).map(|_| Tensor::zeros(d_in, d_out)).collect(),
            bias: Tensor::zeros(1, d_out),
        }
    }
}

/// GRU cell whose linear maps may be diffusion convolutions (`k_steps`
/// matrices per gate) or a single dense map (`k_steps` = 1).
#[derive(Clone, Debug)]
pub struct GruWeights {
    pub reset: GateWeights,
    pub update: GateWeights,
    pub candidate: GateWeights,
    pub hidden: usize,
}

impl GruWeights {
    pub fn init(d_in: usize, hidden: usize, k_steps: usize, rng: &mut impl Rng) -> Self {
        let d = d_in + hidden;
        GruWeights {
            reset: GateWeights::init(d, hidden, k_steps, rng),
            update: GateWeights::init(d, hidden, k_steps, rng),
            candidate: GateWeights::init(d, hidden, k_steps, rng),
            hidden,
        }
    }

    pub fn zeros(d_in: usize, hidden: usize, k_steps: usize) -> Self {
        let d = d_in + hidden;
        GruWeights {
            reset: GateWeights::zeros(d, hidden, k_steps),
            update: GateWeights::zeros(d, hidden, k_steps),
            candidate: GateWeights::zeros(d, hidden, k_steps),
            hidden,
        }
    }

    pub fn k_steps(&self) -> usize {
        self.reset.theta.len()
    }
}

/// ReLU MLP; the last layer is linear.
#[derive(Clone, Debug)]
pub struct MlpParams {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl MlpParams {
    pub fn init(d_in: usize, n_layers: usize, width: usize, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::new();
        let mut cur = d_in;
        for _ in 1..n_layers {
            let scale = 1.0 / (cur as f64).sqrt();
            layers.push((
                random_tensor(cur, width, scale, rng),
                Tensor::zeros(1, width),
            ));
            cur = width;
        }
        let scale = 1.0 / (cur as f64).sqrt();
        layers.push((random_tensor(cur, 1, scale, rng), Tensor::zeros(1, 1)));
        MlpParams { layers }
    }
}

fn random_tensor(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-scale..scale))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized data")
}

/// Per-channel z-score statistics fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub stage_mean: Vec<f64>,
    pub stage_std: Vec<f64>,
    pub rain_mean: f64,
    pub rain_std: f64,
    pub target_mean: f64,
    pub target_std: f64,
}

impl NormStats {
    /// Fit from training windows. Constant channels are rejected: a zero
    /// standard deviation would make normalization degenerate.
    pub fn fit(windows: &[&WindowSample], n_stations: usize, space: TargetSpace) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Contract("no training windows for norm stats".into()));
        }
        let mut stage_acc = vec![(0.0f64, 0.0f64, 0usize); n_stations];
        let mut rain_acc = (0.0f64, 0.0f64, 0usize);
        let mut target_acc = (0.0f64, 0.0f64, 0usize);
        for w in windows {
            for r in 0..w.stage.rows() {
                for (s, acc) in stage_acc.iter_mut().enumerate() {
                    let v = w.stage.get(r, s);
                    acc.0 += v;
                    acc.1 += v * v;
                    acc.2 += 1;
                }
            }
            for &v in &w.rainfall {
                rain_acc.0 += v;
                rain_acc.1 += v * v;
                rain_acc.2 += 1;
            }
            let t = match space {
                TargetSpace::Stage => w.target_stage,
                TargetSpace::Discharge => w.target_reported,
            };
            target_acc.0 += t;
            target_acc.1 += t * t;
            target_acc.2 += 1;
        }
        let finish = |(sum, sq, n): (f64, f64, usize), what: &str| -> Result<(f64, f64)> {
            let nf = n as f64;
            let mean = sum / nf;
            let var = (sq / nf - mean * mean).max(0.0);
            let std = var.sqrt();
            if std <= 0.0 {
                return Err(Error::Contract(format!(
                    "constant {what} channel cannot be normalized"
                )));
            }
            Ok((mean, std))
        };
        let mut stage_mean = Vec::new();
        let mut stage_std = Vec::new();
        for (s, acc) in stage_acc.into_iter().enumerate() {
            let (m, sd) = finish(acc, &format!("stage[{s}]"))?;
            stage_mean.push(m);
            stage_std.push(sd);
        }
        let (rain_mean, rain_std) = finish(rain_acc, "rainfall")?;
        let (target_mean, target_std) = finish(target_acc, "target")?;
        Ok(NormStats {
            stage_mean,
            stage_std,
            rain_mean,
            rain_std,
            target_mean,
            target_std,
        })
    }

    pub fn n_stations(&self) -> usize {
        self.stage_mean.len()
    }
}

/// All learnable tensors of the base forecaster plus the normalization
/// statistics and the shape hyperparameters they imply.
#[derive(Clone, Debug)]
pub struct BaseModelParams {
    pub gcgru: GruWeights,
    pub rain_gru: GruWeights,
    pub decoder: MlpParams,
    pub norm: NormStats,
    pub t_window: usize,
    pub horizon: usize,
    pub target_space: TargetSpace,
}

impl BaseModelParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        hidden: usize,
        k_steps: usize,
        decoder_layers: usize,
        t_window: usize,
        horizon: usize,
        norm: NormStats,
        target_space: TargetSpace,
        rng: &mut impl Rng,
    ) -> Self {
        BaseModelParams {
            gcgru: GruWeights::init(1, hidden, k_steps, rng),
            rain_gru: GruWeights::init(1, hidden, 1, rng),
            decoder: MlpParams::init(2 * hidden, decoder_layers, 2 * hidden, rng),
            norm,
            t_window,
            horizon,
            target_space,
        }
    }

    pub fn hidden(&self) -> usize {
        self.gcgru.hidden
    }

    pub fn k_steps(&self) -> usize {
        self.gcgru.k_steps()
    }
}

/// The graphless GRU baseline: one GRU over `[stage_1..stage_N, rain]`.
#[derive(Clone, Debug)]
pub struct PlainGruModel {
    pub gru: GruWeights,
    pub decoder: MlpParams,
    pub norm: NormStats,
    pub t_window: usize,
    pub horizon: usize,
}

impl PlainGruModel {
    pub fn init(
        n_stations: usize,
        hidden: usize,
        decoder_layers: usize,
        t_window: usize,
        horizon: usize,
        norm: NormStats,
        rng: &mut impl Rng,
    ) -> Self {
        PlainGruModel {
            gru: GruWeights::init(n_stations + 1, hidden, 1, rng),
            decoder: MlpParams::init(hidden, decoder_layers, hidden, rng),
            norm,
            t_window,
            horizon,
        }
    }
}

// ---------------------------------------------------------------------
// Tape-level building blocks
// ---------------------------------------------------------------------

/// Gate weights inserted on a tape.
pub struct GateVars {
    pub theta: Vec<Var>,
    pub bias: Var,
}

pub struct GruVars {
    pub reset: GateVars,
    pub update: GateVars,
    pub candidate: GateVars,
}

/// How a gate's linear map aggregates across the graph.
pub(crate) enum ConvSpec {
    /// Diffusion convolution: `powers[k-1]` holds `(D_I⁻¹Aᵀ)^k` for k ≥ 1
    /// as untracked tape constants; the k = 0 identity term is implicit.
    Diffusion { powers: Vec<Var>, n_nodes: usize },
    /// Single dense map (plain GRU).
    Dense,
}

impl ConvSpec {
    pub fn diffusion(tape: &mut Tape, transitions: &TransitionSet, n_nodes: usize) -> Self {
        let powers = (1..transitions.k_steps())
            .map(|k| tape.constant(transitions.power(k).clone()))
            .collect();
        ConvSpec::Diffusion { powers, n_nodes }
    }
}

pub(crate) fn insert_gate(tape: &mut Tape, w: &GateWeights, tracked: bool) -> GateVars {
    GateVars {
        theta: w
            .theta
            .iter()
            .map(|t| tape.leaf(t.clone(), tracked))
            .collect(),
        bias: tape.leaf(w.bias.clone(), tracked),
    }
}

pub(crate) fn insert_gru(tape: &mut Tape, w: &GruWeights, tracked: bool) -> GruVars {
    GruVars {
        reset: insert_gate(tape, &w.reset, tracked),
        update: insert_gate(tape, &w.update, tracked),
        candidate: insert_gate(tape, &w.candidate, tracked),
    }
}

/// Diffusion-convolution (or dense) pre-activation:
/// `sum_k (P^k X) theta_k + bias`.
pub(crate) fn conv_preactivation(
    tape: &mut Tape,
    conv: &ConvSpec,
    x: Var,
    gate: &GateVars,
) -> Result<Var> {
    let mut acc = tape.matmul(x, gate.theta[0])?;
    if let ConvSpec::Diffusion { powers, n_nodes } = conv {
        if gate.theta.len() != powers.len() + 1 {
            return Err(Error::Contract(format!(
                "gate has {} diffusion matrices but transitions were built with K = {}",
                gate.theta.len(),
                powers.len() + 1
            )));
        }
        for (k, &p) in powers.iter().enumerate() {
            let px = tape.block_matmul(p, x, *n_nodes)?;
            let term = tape.matmul(px, gate.theta[k + 1])?;
            acc = tape.add(acc, term)?;
        }
    }
    tape.add_row(acc, gate.bias)
}

/// One GRU step. Gates use sigmoid, the candidate uses tanh, and every
/// linear map is `conv_preactivation` over the concatenated input and
/// (possibly reset-scaled) hidden state.
pub(crate) fn gru_step_on_tape(
    tape: &mut Tape,
    conv: &ConvSpec,
    x_t: Var,
    h_prev: Var,
    gru: &GruVars,
) -> Result<Var> {
    let xh = tape.concat_cols(x_t, h_prev)?;
    let r_pre = conv_preactivation(tape, conv, xh, &gru.reset)?;
    let r = tape.sigmoid(r_pre);
    let u_pre = conv_preactivation(tape, conv, xh, &gru.update)?;
    let u = tape.sigmoid(u_pre);
    let rh = tape.mul(r, h_prev)?;
    let xrh = tape.concat_cols(x_t, rh)?;
    let c_pre = conv_preactivation(tape, conv, xrh, &gru.candidate)?;
    let c = tape.tanh(c_pre);
    // u∘h + (1-u)∘c, written as u∘(h-c) + c
    let d = tape.sub(h_prev, c)?;
    let ud = tape.mul(u, d)?;
    tape.add(ud, c)
}

pub(crate) fn insert_mlp(tape: &mut Tape, mlp: &MlpParams, tracked: bool) -> Vec<(Var, Var)> {
    mlp.layers
        .iter()
        .map(|(w, b)| (tape.leaf(w.clone(), tracked), tape.leaf(b.clone(), tracked)))
        .collect()
}

pub(crate) fn mlp_on_tape(tape: &mut Tape, layers: &[(Var, Var)], mut x: Var) -> Result<Var> {
    for (i, (w, b)) in layers.iter().enumerate() {
        let lin = tape.matmul(x, *w)?;
        x = tape.add_row(lin, *b)?;
        if i + 1 < layers.len() {
            x = tape.relu(x);
        }
    }
    Ok(x)
}

// ---------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------

/// Standalone diffusion-convolution layer with ReLU activation:
/// output column d_out is
/// `relu(sum_{d_in} sum_k theta[d_out][d_in][k] (D_I⁻¹Aᵀ)^k X[:, d_in])`.
pub fn dconv(x: &Tensor, theta: &[Vec<Vec<f64>>], transitions: &TransitionSet) -> Result<Tensor> {
    dconv_with(x, theta, transitions, |v| v.max(0.0))
}

/// [`dconv`] with a caller-supplied activation (GRU gates pass
/// sigmoid or tanh).
pub fn dconv_with(
    x: &Tensor,
    theta: &[Vec<Vec<f64>>],
    transitions: &TransitionSet,
    activation: impl Fn(f64) -> f64,
) -> Result<Tensor> {
    let d_out = theta.len();
    if d_out == 0 {
        return Err(Error::Contract("empty parameter tensor".into()));
    }
    let d_in = x.cols();
    let k_steps = transitions.k_steps();
    // Repack into K matrices of d_in×d_out so this runs through the same
    // tape path training uses.
    let mut mats = vec![Tensor::zeros(d_in, d_out); k_steps];
    for (o, per_out) in theta.iter().enumerate() {
        if per_out.len() != d_in {
            return Err(Error::Shape {
                op: "dconv",
                lhs: vec![d_out, per_out.len()],
                rhs: vec![d_out, d_in, k_steps],
            });
        }
        for (i, ks) in per_out.iter().enumerate() {
            if ks.len() != k_steps {
                return Err(Error::Shape {
                    op: "dconv",
                    lhs: vec![d_out, d_in, ks.len()],
                    rhs: vec![d_out, d_in, k_steps],
                });
            }
            for (k, &v) in ks.iter().enumerate() {
                mats[k].set(i, o, v);
            }
        }
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let gate = GateVars {
        theta: mats.into_iter().map(|m| tape.constant(m)).collect(),
        bias: tape.constant(Tensor::zeros(1, d_out)),
    };
    let conv = ConvSpec::diffusion(&mut tape, transitions, x.rows());
    let pre = conv_preactivation(&mut tape, &conv, xv, &gate)?;
    Ok(tape.value(pre).map(activation))
}

/// One graph-convolutional GRU step at value level.
pub fn gcgru_step(
    x_t: &Tensor,
    h_prev: &Tensor,
    weights: &GruWeights,
    transitions: &TransitionSet,
) -> Result<Tensor> {
    let n = x_t.rows();
    if h_prev.rows() != n || h_prev.cols() != weights.hidden {
        return Err(Error::Shape {
            op: "gcgru_step",
            lhs: h_prev.shape().to_vec(),
            rhs: vec![n, weights.hidden],
        });
    }
    let mut tape = Tape::new();
    let x = tape.constant(x_t.clone());
    let h = tape.constant(h_prev.clone());
    let gru = insert_gru(&mut tape, weights, false);
    let conv = ConvSpec::diffusion(&mut tape, transitions, n);
    let out = gru_step_on_tape(&mut tape, &conv, x, h, &gru)?;
    Ok(tape.value(out).clone())
}

/// One plain GRU step at value level (single dense map per gate).
pub fn plain_gru_step(x_t: &Tensor, h_prev: &Tensor, weights: &GruWeights) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(x_t.clone());
    let h = tape.constant(h_prev.clone());
    let gru = insert_gru(&mut tape, weights, false);
    let out = gru_step_on_tape(&mut tape, &ConvSpec::Dense, x, h, &gru)?;
    Ok(tape.value(out).clone())
}

pub struct BaseVars {
    pub gcgru: GruVars,
    pub rain: GruVars,
    pub decoder: Vec<(Var, Var)>,
}

pub(crate) fn insert_base(tape: &mut Tape, p: &BaseModelParams, tracked: bool) -> BaseVars {
    BaseVars {
        gcgru: insert_gru(tape, &p.gcgru, tracked),
        rain: insert_gru(tape, &p.rain_gru, tracked),
        decoder: insert_mlp(tape, &p.decoder, tracked),
    }
}

/// Batched forward pass for the base model. Stage inputs stack the N
/// station rows of each window; the decoder sees the rainfall-GRU state
/// concatenated with the target-station slice of the graph-GRU state.
/// Output is a B×1 tensor in target units (feet or cfs).
pub(crate) fn base_forward_on_tape(
    tape: &mut Tape,
    vars: &BaseVars,
    p: &BaseModelParams,
    transitions: &TransitionSet,
    target_node: usize,
    windows: &[&WindowSample],
) -> Result<Var> {
    if windows.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    if !(1..=6).contains(&p.horizon) {
        return Err(Error::Contract(format!(
            "horizon {} outside 1..=6",
            p.horizon
        )));
    }
    let n = p.norm.n_stations();
    let b = windows.len();
    let hidden = p.gcgru.hidden;
    let conv = ConvSpec::diffusion(tape, transitions, n);

    let mut h_w = tape.constant(Tensor::zeros(b * n, hidden));
    let mut h_r = tape.constant(Tensor::zeros(b, hidden));
    for t in 0..p.t_window {
        let mut xw = Tensor::zeros(b * n, 1);
        let mut xr = Tensor::zeros(b, 1);
        for (wi, w) in windows.iter().enumerate() {
            for s in 0..n {
                let v = (w.stage.get(t, s) - p.norm.stage_mean[s]) / p.norm.stage_std[s];
                xw.set(wi * n + s, 0, v);
            }
            xr.set(wi, 0, (w.rainfall[t] - p.norm.rain_mean) / p.norm.rain_std);
        }
        let xw = tape.constant(xw);
        let xr = tape.constant(xr);
        h_w = gru_step_on_tape(tape, &conv, xw, h_w, &vars.gcgru)?;
        h_r = gru_step_on_tape(tape, &ConvSpec::Dense, xr, h_r, &vars.rain)?;
    }
    let target_rows: Vec<usize> = (0..b).map(|wi| wi * n + target_node).collect();
    let h_target = tape.slice_rows(h_w, &target_rows)?;
    let embed = tape.concat_cols(h_r, h_target)?;
    let out = mlp_on_tape(tape, &vars.decoder, embed)?;
    let scaled = tape.scale(out, p.norm.target_std);
    Ok(tape.add_scalar(scaled, p.norm.target_mean))
}

/// Single-window forward pass producing a de-normalized prediction.
pub fn forward(
    window: &WindowSample,
    p: &BaseModelParams,
    transitions: &TransitionSet,
    target_node: usize,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = insert_base(&mut tape, p, false);
    let out = base_forward_on_tape(&mut tape, &vars, p, transitions, target_node, &[window])?;
    Ok(tape.value(out).get(0, 0))
}

pub struct PlainGruVars {
    pub gru: GruVars,
    pub decoder: Vec<(Var, Var)>,
}

pub(crate) fn insert_plain(tape: &mut Tape, p: &PlainGruModel, tracked: bool) -> PlainGruVars {
    PlainGruVars {
        gru: insert_gru(tape, &p.gru, tracked),
        decoder: insert_mlp(tape, &p.decoder, tracked),
    }
}

/// Batched forward for the graphless GRU baseline: inputs are
/// `[stage_1..stage_N, rainfall]` per hour, output is discharge (cfs).
pub(crate) fn plain_forward_on_tape(
    tape: &mut Tape,
    vars: &PlainGruVars,
    p: &PlainGruModel,
    windows: &[&WindowSample],
) -> Result<Var> {
    if windows.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let n = p.norm.n_stations();
    let b = windows.len();
    let hidden = p.gru.hidden;
    let mut h = tape.constant(Tensor::zeros(b, hidden));
    for t in 0..p.t_window {
        let mut x = Tensor::zeros(b, n + 1);
        for (wi, w) in windows.iter().enumerate() {
            for s in 0..n {
                let v = (w.stage.get(t, s) - p.norm.stage_mean[s]) / p.norm.stage_std[s];
                x.set(wi, s, v);
            }
            x.set(wi, n, (w.rainfall[t] - p.norm.rain_mean) / p.norm.rain_std);
        }
        let x = tape.constant(x);
        h = gru_step_on_tape(tape, &ConvSpec::Dense, x, h, &vars.gru)?;
    }
    let out = mlp_on_tape(tape, &vars.decoder, h)?;
    let scaled = tape.scale(out, p.norm.target_std);
    Ok(tape.add_scalar(scaled, p.norm.target_mean))
}
