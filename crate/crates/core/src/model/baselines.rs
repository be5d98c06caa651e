//! Baseline forecasters, all fed the same windows and splits as the base
//! model: persistence, linear regression and gradient-boosted trees on
//! the flattened window, an MLP, the graphless GRU (in `train`), and the
//! direct-discharge variant of the base model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::derive_seed;
use crate::ingest::{HourlyFrame, WindowSample};
use crate::numerics::{Tape, Tensor, Var};
use crate::residual::{GbtParams, GbtRegressor};
use crate::{Error, Result};

use super::train::{run_loop, LoopOutcome, Trainable, TrainOptions};
use super::{insert_mlp, mlp_on_tape, BinWeights, MlpParams};

/// Naive forecast: the latest reported discharge at the window origin
/// stands for the value `h` hours ahead.
pub fn persistence_forecast(frame: &HourlyFrame, windows: &[&WindowSample]) -> Vec<Option<f64>> {
    windows
        .iter()
        .map(|w| frame.latest_reported_at(w.last_obs_idx))
        .collect()
}

/// Flattened window features: T×N stage values then T rainfall values.
pub fn flat_features(w: &WindowSample) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.stage.len() + w.rainfall.len());
    out.extend(w.stage.data().iter().copied());
    out.extend(w.rainfall.iter().copied());
    out
}

/// Ordinary least squares on the flattened window (plus intercept),
/// solved by Householder QR.
#[derive(Clone, Debug)]
pub struct LinearBaseline {
    coeffs: Vec<f64>,
}

impl LinearBaseline {
    pub fn fit(windows: &[&WindowSample]) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Contract("no training windows".into()));
        }
        let rows: Vec<Vec<f64>> = windows
            .iter()
            .map(|w| {
                let mut f = flat_features(w);
                f.push(1.0);
                f
            })
            .collect();
        let y: Vec<f64> = windows.iter().map(|w| w.target_reported).collect();
        let coeffs = qr_least_squares(&rows, &y)?;
        Ok(LinearBaseline { coeffs })
    }

    pub fn predict(&self, w: &WindowSample) -> f64 {
        let mut f = flat_features(w);
        f.push(1.0);
        f.iter().zip(&self.coeffs).map(|(a, b)| a * b).sum()
    }
}

/// Minimum-norm-ish least squares via Householder QR without pivoting;
/// rank-deficient columns get zero coefficients.
fn qr_least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let m = rows.len();
    let n = rows[0].len();
    if y.len() != m {
        return Err(Error::Contract("rows/targets mismatch".into()));
    }
    // Work on column-major copies of A and a copy of y.
    let mut a = vec![0.0f64; m * n];
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(Error::Contract("ragged feature rows".into()));
        }
        for (j, &v) in r.iter().enumerate() {
            a[j * m + i] = v;
        }
    }
    let mut b = y.to_vec();
    let p = n.min(m);
    let mut betas = vec![0.0f64; p];
    for k in 0..p {
        // Householder vector for column k below the diagonal.
        let col = &a[k * m..(k + 1) * m];
        let norm = col[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            betas[k] = 0.0;
            continue;
        }
        let alpha = if col[k] >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; m - k];
        v[0] = col[k] - alpha;
        v[1..].copy_from_slice(&col[k + 1..]);
        let vtv = v.iter().map(|x| x * x).sum::<f64>();
        if vtv == 0.0 {
            betas[k] = 0.0;
            a[k * m + k] = alpha;
            continue;
        }
        let beta = 2.0 / vtv;
        betas[k] = beta;
        // Apply H = I − beta·v·vᵀ to remaining columns and to b.
        for j in k..n {
            let cj = &mut a[j * m..(j + 1) * m];
            let dot: f64 = v.iter().zip(&cj[k..]).map(|(x, y)| x * y).sum();
            let s = beta * dot;
            for (vi, cv) in v.iter().zip(cj[k..].iter_mut()) {
                *cv -= s * vi;
            }
        }
        let dot: f64 = v.iter().zip(&b[k..]).map(|(x, y)| x * y).sum();
        let s = beta * dot;
        for (vi, bv) in v.iter().zip(b[k..].iter_mut()) {
            *bv -= s * vi;
        }
        // Store the Householder vector below the diagonal for reference;
        // the diagonal gets R's entry.
        a[k * m + k] = alpha;
        for (off, vi) in v.iter().enumerate().skip(1) {
            a[k * m + k + off] = *vi;
        }
    }
    // Back-substitute R x = Q^T b, zeroing near-singular pivots.
    let mut x = vec![0.0f64; n];
    let scale: f64 = (0..p)
        .map(|k| a[k * m + k].abs())
        .fold(0.0, f64::max)
        .max(1.0);
    for k in (0..p).rev() {
        let rkk = a[k * m + k];
        if rkk.abs() < 1e-12 * scale {
            x[k] = 0.0;
            continue;
        }
        let mut s = b[k];
        for j in k + 1..n {
            s -= a[j * m + k] * x[j];
        }
        x[k] = s / rkk;
    }
    Ok(x)
}

/// Gradient-boosted trees on the flattened window.
#[derive(Clone, Debug)]
pub struct GbtBaseline {
    model: GbtRegressor,
}

impl GbtBaseline {
    pub fn fit(windows: &[&WindowSample], params: &GbtParams) -> Result<Self> {
        let features: Vec<Vec<f64>> = windows.iter().map(|w| flat_features(w)).collect();
        let targets: Vec<f64> = windows.iter().map(|w| w.target_reported).collect();
        Ok(GbtBaseline {
            model: GbtRegressor::fit(&features, &targets, params)?,
        })
    }

    pub fn predict(&self, w: &WindowSample) -> f64 {
        self.model.predict(&flat_features(w))
    }
}

/// Feature-wise z-score stats for the flat models; constant features keep
/// std 1 so they normalize to a constant instead of failing.
#[derive(Clone, Debug)]
pub struct FlatNorm {
    feat_mean: Vec<f64>,
    feat_std: Vec<f64>,
    target_mean: f64,
    target_std: f64,
}

impl FlatNorm {
    fn fit(windows: &[&WindowSample]) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Contract("no training windows".into()));
        }
        let d = flat_features(windows[0]).len();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut tsum = 0.0;
        let mut tsq = 0.0;
        for w in windows {
            for (j, v) in flat_features(w).into_iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
            tsum += w.target_reported;
            tsq += w.target_reported * w.target_reported;
        }
        let n = windows.len() as f64;
        let mut feat_mean = Vec::with_capacity(d);
        let mut feat_std = Vec::with_capacity(d);
        for j in 0..d {
            let m = sum[j] / n;
            let var = (sq[j] / n - m * m).max(0.0);
            feat_mean.push(m);
            feat_std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        let tm = tsum / n;
        let tvar = (tsq / n - tm * tm).max(0.0);
        if tvar <= 0.0 {
            return Err(Error::Contract("constant target cannot be normalized".into()));
        }
        Ok(FlatNorm {
            feat_mean,
            feat_std,
            target_mean: tm,
            target_std: tvar.sqrt(),
        })
    }
}

/// MLP over the flattened, normalized window; discharge target.
#[derive(Clone, Debug)]
pub struct MlpBaseline {
    pub mlp: MlpParams,
    norm: FlatNorm,
}

pub struct MlpBaselineVars {
    layers: Vec<(Var, Var)>,
}

impl Trainable for MlpBaseline {
    type Vars = MlpBaselineVars;

    fn insert(&self, tape: &mut Tape) -> (Self::Vars, Vec<Var>) {
        let layers = insert_mlp(tape, &self.mlp, true);
        let mut flat = Vec::new();
        for (w, b) in &layers {
            flat.push(*w);
            flat.push(*b);
        }
        (MlpBaselineVars { layers }, flat)
    }

    fn forward(
        &self,
        tape: &mut Tape,
        vars: &Self::Vars,
        windows: &[&WindowSample],
    ) -> Result<Var> {
        if windows.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let d = self.norm.feat_mean.len();
        let mut x = Tensor::zeros(windows.len(), d);
        for (i, w) in windows.iter().enumerate() {
            for (j, v) in flat_features(w).into_iter().enumerate() {
                x.set(
                    i,
                    j,
                    (v - self.norm.feat_mean[j]) / self.norm.feat_std[j],
                );
            }
        }
        let xv = tape.constant(x);
        let out = mlp_on_tape(tape, &vars.layers, xv)?;
        let scaled = tape.scale(out, self.norm.target_std);
        Ok(tape.add_scalar(scaled, self.norm.target_mean))
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.mlp.layers.iter_mut() {
            out.push(w);
            out.push(b);
        }
        out
    }

    fn target(&self, w: &WindowSample) -> f64 {
        w.target_reported
    }
}

/// MLP baseline trainer: single hidden layer, width 32, Adam with early
/// stopping; no grid (it is a baseline, not the model under study).
pub fn train_mlp_baseline(
    train_windows: &[&WindowSample],
    val_windows: &[&WindowSample],
    opts: &TrainOptions,
) -> Result<MlpBaseline> {
    let norm = FlatNorm::fit(train_windows)?;
    let d = norm.feat_mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, "mlp_baseline"));
    let model = MlpBaseline {
        mlp: MlpParams::init(d, 2, 32, &mut rng),
        norm,
    };
    let targets: Vec<f64> = train_windows.iter().map(|w| w.target_reported).collect();
    let bins = BinWeights::fit(&targets)?;
    let outcome: LoopOutcome<MlpBaseline> = run_loop(
        model,
        train_windows,
        val_windows,
        &bins,
        64,
        1e-3,
        opts,
        derive_seed(opts.seed, "mlp_baseline_loop"),
    )?;
    Ok(outcome.model)
}

/// Predictions of the MLP baseline over windows.
pub fn mlp_predict(model: &MlpBaseline, windows: &[&WindowSample]) -> Result<Vec<f64>> {
    super::train::predict_all(model, windows)
}
