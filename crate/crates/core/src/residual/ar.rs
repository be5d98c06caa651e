//! Reported-space autoregressive error correction. The base-model error
//! at the forecast origin predicts the error `h` hours ahead through a
//! simple linear regression refit at every step from all errors known so
//! far, mimicking continuous hourly retraining.

use crate::{Error, Result};

/// Final regression coefficients (from the last refit) and bookkeeping.
#[derive(Clone, Copy, Debug, Default)]
pub struct ArState {
    pub rho: f64,
    pub intercept: f64,
    pub n_pairs: usize,
    /// Steps that used the mean-error fallback (too few pairs or zero
    /// lag-error variance).
    pub fallback_steps: usize,
}

/// Correct a forecast series against its own lagged errors.
///
/// Series are indexed by target hour. At target index `i` (origin
/// `i - h`): errors `e[m] = reported[m] - forecast[m]` for `m <= i - h`
/// are known; the regression `e_m = rho·e_{m-h} + b` is fit over all such
/// pairs, and the output is `forecast[i] + rho·e[i-h] + b`. With fewer
/// than 2 pairs or zero lag variance it falls back to `rho = 0`,
/// `b = mean error` (0 when no error is known). Missing cells pass
/// through uncorrected.
pub fn ar_correct(
    forecasts: &[Option<f64>],
    reported: &[Option<f64>],
    horizon: usize,
) -> Result<(Vec<Option<f64>>, ArState)> {
    if forecasts.len() != reported.len() {
        return Err(Error::Contract(format!(
            "forecast/reported length mismatch: {} vs {}",
            forecasts.len(),
            reported.len()
        )));
    }
    if horizon == 0 {
        return Err(Error::Contract("horizon must be positive".into()));
    }
    let n = forecasts.len();
    let err = |i: usize| -> Option<f64> {
        match (reported[i], forecasts[i]) {
            (Some(r), Some(f)) => Some(r - f),
            _ => None,
        }
    };

    let mut out = vec![None; n];
    let mut state = ArState::default();
    // Running sums over errors and (lagged, current) pairs.
    let (mut e_sum, mut e_n) = (0.0f64, 0usize);
    let (mut sx, mut sy, mut sxx, mut sxy, mut np) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0usize);

    for i in 0..n {
        let Some(f) = forecasts[i] else { continue };
        if i < horizon {
            out[i] = Some(f);
            continue;
        }
        let origin = i - horizon;
        // Newly observable error at the origin hour.
        if let Some(e) = err(origin) {
            e_sum += e;
            e_n += 1;
            if origin >= horizon {
                if let Some(e_lag) = err(origin - horizon) {
                    sx += e_lag;
                    sy += e;
                    sxx += e_lag * e_lag;
                    sxy += e_lag * e;
                    np += 1;
                }
            }
        }
        let npf = np as f64;
        let var_x = if np > 0 { sxx / npf - (sx / npf) * (sx / npf) } else { 0.0 };
        let (rho, intercept) = if np >= 2 && var_x > 0.0 {
            let cov = sxy / npf - (sx / npf) * (sy / npf);
            let rho = cov / var_x;
            (rho, sy / npf - rho * sx / npf)
        } else {
            state.fallback_steps += 1;
            (0.0, if e_n > 0 { e_sum / e_n as f64 } else { 0.0 })
        };
        state.rho = rho;
        state.intercept = intercept;
        state.n_pairs = np;
        out[i] = match err(origin) {
            Some(e_origin) => Some(f + rho * e_origin + intercept),
            // No usable error at the origin: apply the intercept only.
            None => Some(f + intercept),
        };
    }
    Ok((out, state))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn some(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().map(|&x| Some(x)).collect()
    }

    #[test]
    fn zero_errors_leave_forecasts_unchanged() {
        let f: Vec<f64> = (0..20).map(|i| 10.0 + i as f64).collect();
        let (out, state) = ar_correct(&some(&f), &some(&f), 2).unwrap();
        for (o, &x) in out.iter().zip(&f) {
            assert_eq!(o.unwrap(), x);
        }
        assert_eq!(state.rho, 0.0);
        assert_eq!(state.intercept, 0.0);
    }

    #[test]
    fn geometric_errors_recover_rho() {
        // e_t = 0.8·e_{t-1} exactly: closed-form least squares gives
        // rho = 0.8, b = 0 at every refit.
        let h = 1;
        let n = 30;
        let forecasts: Vec<f64> = vec![100.0; n];
        let mut reported = Vec::with_capacity(n);
        let mut e = 8.0;
        for _ in 0..n {
            reported.push(100.0 + e);
            e *= 0.8;
        }
        let (out, state) = ar_correct(&some(&forecasts), &some(&reported), h).unwrap();
        assert!((state.rho - 0.8).abs() < 1e-10, "rho = {}", state.rho);
        assert!(state.intercept.abs() < 1e-9);
        // With the error law exact, corrected forecasts match reported
        // from the first index with two pairs onward.
        for i in 3..n {
            assert!(
                (out[i].unwrap() - reported[i]).abs() < 1e-8,
                "index {i}: {} vs {}",
                out[i].unwrap(),
                reported[i]
            );
        }
    }

    #[test]
    fn constant_errors_use_mean_fallback() {
        // Constant error 3: zero lag variance forces rho = 0, b = 3.
        let n = 12;
        let forecasts = vec![50.0; n];
        let reported = vec![53.0; n];
        let (out, state) = ar_correct(&some(&forecasts), &some(&reported), 3).unwrap();
        assert_eq!(state.rho, 0.0);
        assert!((state.intercept - 3.0).abs() < 1e-12);
        for o in out.iter().skip(3) {
            assert!((o.unwrap() - 53.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(matches!(
            ar_correct(&[Some(1.0)], &[Some(1.0), Some(2.0)], 1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn leading_indices_pass_through() {
        let f = some(&[5.0, 6.0, 7.0, 8.0]);
        let r = some(&[9.0, 9.0, 9.0, 9.0]);
        let (out, _) = ar_correct(&f, &r, 2).unwrap();
        assert_eq!(out[0], Some(5.0));
        assert_eq!(out[1], Some(6.0));
        // Index 2 sees the error at origin 0 (9-5=4) with no usable pair:
        // fallback rho = 0, intercept = mean error = 4.
        assert_eq!(out[2], Some(7.0 + 4.0));
    }

    #[test]
    fn missing_cells_stay_missing() {
        let mut f = some(&[5.0; 10]);
        f[4] = None;
        let r = some(&[6.0; 10]);
        let (out, _) = ar_correct(&f, &r, 1).unwrap();
        assert!(out[4].is_none());
        assert!(out[5].is_some());
    }
}
