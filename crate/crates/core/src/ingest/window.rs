use crate::numerics::Tensor;
use crate::{Error, Result};

use super::frame::HourlyFrame;

/// One training/forecast sample: `T` hours of history ending at
/// `last_obs_idx`, with targets `horizon` hours later.
#[derive(Clone, Debug)]
pub struct WindowSample {
    pub last_obs_idx: usize,
    pub target_idx: usize,
    /// T×N stage history (feet), oldest row first.
    pub stage: Tensor,
    /// T hours of watershed rainfall (mm), oldest first.
    pub rainfall: Vec<f64>,
    /// Target-station stage at `target_idx` (feet).
    pub target_stage: f64,
    /// Reported discharge at `target_idx` (cfs).
    pub target_reported: f64,
    /// Field measurement at `target_idx`, when one exists.
    pub target_measured: Option<f64>,
}

/// All valid windows of a frame for one (T, horizon) pair.
#[derive(Clone, Debug)]
pub struct WindowSet {
    pub t_window: usize,
    pub horizon: usize,
    pub windows: Vec<WindowSample>,
}

impl WindowSet {
    /// Windows whose target index lies in `[from, to)`.
    pub fn in_range(&self, from: usize, to: usize) -> Vec<&WindowSample> {
        self.windows
            .iter()
            .filter(|w| w.target_idx >= from && w.target_idx < to)
            .collect()
    }
}

/// Sliding windows with stride 1. A window is dropped when any history
/// cell (stage at any station, rainfall) or either dense target (stage,
/// reported discharge) is missing. On gapless frames the count is
/// `n - T - h + 1`.
pub fn make_windows(frame: &HourlyFrame, t_window: usize, horizon: usize) -> Result<WindowSet> {
    if t_window == 0 || horizon == 0 {
        return Err(Error::Contract(
            "window length and horizon must be positive".into(),
        ));
    }
    let n = frame.len();
    let n_st = frame.n_stations();
    let mut windows = Vec::new();
    if n >= t_window + horizon {
        'outer: for last in (t_window - 1)..(n - horizon) {
            let target_idx = last + horizon;
            let first = last + 1 - t_window;
            let mut stage = Tensor::zeros(t_window, n_st);
            let mut rainfall = Vec::with_capacity(t_window);
            for (row, idx) in (first..=last).enumerate() {
                for s in 0..n_st {
                    match frame.stage(s, idx) {
                        Some(v) => stage.set(row, s, v),
                        None => continue 'outer,
                    }
                }
                match frame.rainfall(idx) {
                    Some(v) => rainfall.push(v),
                    None => continue 'outer,
                }
            }
            let (Some(target_stage), Some(target_reported)) = (
                frame.target_stage(target_idx),
                frame.reported(target_idx),
            ) else {
                continue;
            };
            windows.push(WindowSample {
                last_obs_idx: last,
                target_idx,
                stage,
                rainfall,
                target_stage,
                target_reported,
                target_measured: frame.measured(target_idx),
            });
        }
    }
    Ok(WindowSet {
        t_window,
        horizon,
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn frame_with(n: usize, missing_stage_at: &[usize]) -> HourlyFrame {
        let mut stage: Vec<Option<f64>> = (0..n).map(|i| Some(1.0 + i as f64 * 0.01)).collect();
        for &i in missing_stage_at {
            stage[i] = None;
        }
        HourlyFrame::new(
            Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
            vec!["S0".into()],
            0,
            vec![stage],
            vec![Some(0.0); n],
            vec![Some(100.0); n],
            vec![None; n],
        )
        .unwrap()
    }

    #[test]
    fn gapless_count_formula() {
        // 30-hour frame, T=24, h=1: 30 - 24 - 1 + 1 = 6 windows.
        let f = frame_with(30, &[]);
        let ws = make_windows(&f, 24, 1).unwrap();
        assert_eq!(ws.windows.len(), 6);
        for (t, h) in [(24usize, 2usize), (12, 3), (6, 6)] {
            let ws = make_windows(&f, t, h).unwrap();
            assert_eq!(ws.windows.len(), 30 - t - h + 1, "T={t} h={h}");
        }
    }

    #[test]
    fn missing_hour_drops_covering_windows() {
        let n = 40;
        let f_full = frame_with(n, &[]);
        let f_gap = frame_with(n, &[12]);
        let full = make_windows(&f_full, 8, 1).unwrap();
        let gapped = make_windows(&f_gap, 8, 1).unwrap();
        // Direct enumeration oracle: a window survives iff hour 12 is
        // neither in its history nor its target.
        let expect: Vec<usize> = full
            .windows
            .iter()
            .filter(|w| {
                let hist = (w.last_obs_idx + 1 - 8)..=w.last_obs_idx;
                !hist.contains(&12) && w.target_idx != 12
            })
            .map(|w| w.last_obs_idx)
            .collect();
        let got: Vec<usize> = gapped.windows.iter().map(|w| w.last_obs_idx).collect();
        assert_eq!(got, expect);
        assert_eq!(full.windows.len() - gapped.windows.len(), 9);
    }

    #[test]
    fn last_window_targets_final_timestamp() {
        let f = frame_with(50, &[]);
        let ws = make_windows(&f, 24, 6).unwrap();
        let last = ws.windows.last().unwrap();
        assert_eq!(last.target_idx, 49);
        assert_eq!(last.last_obs_idx, 43);
    }

    #[test]
    fn window_rows_are_oldest_first() {
        let f = frame_with(30, &[]);
        let ws = make_windows(&f, 24, 1).unwrap();
        let w = &ws.windows[0];
        assert_eq!(w.last_obs_idx, 23);
        assert!((w.stage.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((w.stage.get(23, 0) - 1.23).abs() < 1e-12);
        assert!((w.target_stage - 1.24).abs() < 1e-12);
    }

    #[test]
    fn zero_t_or_h_rejected() {
        let f = frame_with(30, &[]);
        assert!(make_windows(&f, 0, 1).is_err());
        assert!(make_windows(&f, 24, 0).is_err());
    }

    #[test]
    fn in_range_selects_by_target() {
        let f = frame_with(40, &[]);
        let ws = make_windows(&f, 8, 2).unwrap();
        let picked = ws.in_range(20, 30);
        assert!(picked.iter().all(|w| (20..30).contains(&w.target_idx)));
        assert_eq!(picked.len(), 10);
    }
}
