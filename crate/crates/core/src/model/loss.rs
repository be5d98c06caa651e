use serde::{Deserialize, Serialize};

use crate::numerics::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Number of equal-width histogram bins over the training target range.
pub const N_BINS: usize = 50;

/// Histogram-density loss weights fitted on training targets only:
/// `w = ln(1 + N/count(bin))`, so rare (high-stage) targets weigh more.
/// Out-of-range targets clamp to the edge bins.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BinWeights {
    min: f64,
    width: f64,
    counts: Vec<usize>,
    n_total: usize,
}

impl BinWeights {
    pub fn fit(targets: &[f64]) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Contract("no targets to fit bin weights".into()));
        }
        let min = targets.iter().copied().fold(f64::INFINITY, f64::min);
        let max = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (max - min) / N_BINS as f64;
        let mut bw = BinWeights {
            min,
            width,
            counts: vec![0; N_BINS],
            n_total: targets.len(),
        };
        for &t in targets {
            let idx = bw.bin(t);
            bw.counts[idx] += 1;
        }
        Ok(bw)
    }

    fn bin(&self, y: f64) -> usize {
        if self.width <= 0.0 {
            return 0;
        }
        let raw = ((y - self.min) / self.width).floor();
        (raw.max(0.0) as usize).min(N_BINS - 1)
    }

    /// `ln(1 + N/count)`. A bin no training target fell into counts as 1,
    /// giving such targets the maximum (rarest-bin) weight.
    pub fn weight(&self, y: f64) -> f64 {
        let count = self.counts[self.bin(y)].max(1);
        (1.0 + self.n_total as f64 / count as f64).ln()
    }
}

/// Weighted mean squared error `Σ w_i (ŷ_i − y_i)² / Σ w_i`.
pub fn weighted_mse_loss(preds: &[f64], targets: &[f64], weights: &BinWeights) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    if preds.len() != targets.len() {
        return Err(Error::Contract(format!(
            "preds/targets length mismatch: {} vs {}",
            preds.len(),
            targets.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&p, &y) in preds.iter().zip(targets) {
        let w = weights.weight(y);
        num += w * (p - y) * (p - y);
        den += w;
    }
    Ok(num / den)
}

/// Tape form of the weighted MSE over a B×1 prediction column.
pub(crate) fn weighted_mse_on_tape(
    tape: &mut Tape,
    preds: Var,
    targets: &[f64],
    weights: &BinWeights,
) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let w: Vec<f64> = targets.iter().map(|&y| weights.weight(y)).collect();
    let wsum: f64 = w.iter().sum();
    let t = tape.constant(Tensor::column(targets));
    let wc = tape.constant(Tensor::column(&w));
    let d = tape.sub(preds, t)?;
    let d2 = tape.mul(d, d)?;
    let wd2 = tape.mul(d2, wc)?;
    let s = tape.sum(wd2);
    Ok(tape.scale(s, 1.0 / wsum))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bin_reduces_to_plain_mse() {
        // All targets in one bin: uniform weights.
        let targets = vec![5.0, 5.1, 5.05, 5.02];
        let bw = BinWeights::fit(&[5.0, 5.0, 5.0, 5.0]).unwrap();
        let preds = vec![5.5, 5.1, 5.0, 4.9];
        let loss = weighted_mse_loss(&preds, &targets, &bw).unwrap();
        let mse: f64 = preds
            .iter()
            .zip(&targets)
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / 4.0;
        assert!((loss - mse).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions_zero_loss() {
        let targets = vec![1.0, 2.0, 3.0, 10.0];
        let bw = BinWeights::fit(&targets).unwrap();
        let loss = weighted_mse_loss(&targets, &targets, &bw).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn hand_computed_two_bin_example() {
        // 100 training targets: 90 in the low bin, 10 in the high bin.
        // w_low = ln(1 + 100/90), w_high = ln(1 + 100/10); equal squared
        // errors of 1 make the weighted mean exactly 1 regardless.
        let mut train = vec![0.0; 90];
        train.extend(vec![49.5; 10]);
        let bw = BinWeights::fit(&train).unwrap();
        let w_low = bw.weight(0.0);
        let w_high = bw.weight(49.5);
        assert!((w_low - (1.0f64 + 100.0 / 90.0).ln()).abs() < 1e-12);
        assert!((w_high - 11.0f64.ln()).abs() < 1e-12);
        assert!((w_low - 0.7472).abs() < 1e-4);
        assert!((w_high - 2.3979).abs() < 1e-4);
        let loss = weighted_mse_loss(&[1.0, 50.5], &[0.0, 49.5], &bw).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_targets_clamp_to_edge_bins() {
        let train: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let bw = BinWeights::fit(&train).unwrap();
        assert!((bw.weight(-50.0) - bw.weight(0.0)).abs() < 1e-15);
        assert!((bw.weight(1e6) - bw.weight(99.0)).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_is_contract_error() {
        let bw = BinWeights::fit(&[1.0, 2.0]).unwrap();
        assert!(matches!(
            weighted_mse_loss(&[], &[], &bw),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn tape_loss_matches_value_loss() {
        let train: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let bw = BinWeights::fit(&train).unwrap();
        let preds = [1.0, 2.5, 3.0, 6.5];
        let targets = [0.5, 3.0, 3.0, 5.0];
        let expect = weighted_mse_loss(&preds, &targets, &bw).unwrap();
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::column(&preds));
        let loss = weighted_mse_on_tape(&mut tape, p, &targets, &bw).unwrap();
        assert!((tape.value(loss).get(0, 0) - expect).abs() < 1e-15);
    }
}
