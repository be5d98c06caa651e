//! Locally weighted scatterplot smoothing: tricube weights, local linear
//! fits at each training abscissa, linear interpolation between fitted
//! points and constant extrapolation beyond them.

use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Lowess {
    /// Sorted, deduplicated abscissae with their smoothed values.
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Lowess {
    /// Fit with neighborhood `fraction` of the points (at least 2).
    pub fn fit(x: &[f64], y: &[f64], fraction: f64) -> Result<Self> {
        if x.len() != y.len() || x.len() < 3 {
            return Err(Error::Contract(format!(
                "lowess needs >= 3 matched points, got {}/{}",
                x.len(),
                y.len()
            )));
        }
        if !(0.0 < fraction && fraction <= 1.0) {
            return Err(Error::Contract(format!(
                "lowess fraction {fraction} outside (0, 1]"
            )));
        }
        let n = x.len();
        let k = ((fraction * n as f64).ceil() as usize).clamp(2, n);

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("finite x"));
        let xs_sorted: Vec<f64> = order.iter().map(|&i| x[i]).collect();
        let ys_sorted: Vec<f64> = order.iter().map(|&i| y[i]).collect();

        let mut fitted = Vec::with_capacity(n);
        for i in 0..n {
            fitted.push(local_fit(&xs_sorted, &ys_sorted, i, k));
        }

        // Collapse duplicate abscissae (they get identical neighborhoods
        // and thus identical fits).
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            if xs.last().is_some_and(|&last: &f64| last == xs_sorted[i]) {
                continue;
            }
            xs.push(xs_sorted[i]);
            ys.push(fitted[i]);
        }
        Ok(Lowess { xs, ys })
    }

    /// Smoothed value at `x`: linear interpolation between fitted points,
    /// constant beyond the ends.
    pub fn predict(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= *self.xs.last().expect("non-empty") {
            return *self.ys.last().expect("non-empty");
        }
        let hi = self.xs.partition_point(|&v| v < x);
        let lo = hi - 1;
        let (x0, x1) = (self.xs[lo], self.xs[hi]);
        let t = (x - x0) / (x1 - x0);
        self.ys[lo] * (1.0 - t) + self.ys[hi] * t
    }

    pub fn fit_points(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }
}

/// Weighted linear fit around `xs[i]` over its `k` nearest neighbors.
fn local_fit(xs: &[f64], ys: &[f64], i: usize, k: usize) -> f64 {
    let n = xs.len();
    let x0 = xs[i];
    // Nearest k neighbors of a sorted array form a contiguous range.
    let mut lo = i;
    let mut hi = i + 1;
    while hi - lo < k {
        let extend_left = if lo == 0 {
            false
        } else if hi == n {
            true
        } else {
            x0 - xs[lo - 1] <= xs[hi] - x0
        };
        if extend_left {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    let d_max = (x0 - xs[lo]).abs().max((xs[hi - 1] - x0).abs());
    let tricube = |d: f64| {
        let u = (d / d_max).abs();
        if u >= 1.0 {
            0.0
        } else {
            let c = 1.0 - u * u * u;
            c * c * c
        }
    };
    let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for j in lo..hi {
        let w = if d_max > 0.0 { tricube(xs[j] - x0) } else { 1.0 };
        sw += w;
        swx += w * xs[j];
        swy += w * ys[j];
        swxx += w * xs[j] * xs[j];
        swxy += w * xs[j] * ys[j];
    }
    let denom = sw * swxx - swx * swx;
    if denom.abs() < 1e-12 * sw.max(1.0) {
        // Degenerate abscissae; fall back to the weighted mean.
        swy / sw
    } else {
        let slope = (sw * swxy - swx * swy) / denom;
        let intercept = (swy - slope * swx) / sw;
        intercept + slope * x0
    }
}
