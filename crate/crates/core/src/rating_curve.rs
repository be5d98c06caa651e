//! Time-segmented piecewise power-law rating curves.
//!
//! Each segment is valid over a half-open time interval and holds pieces
//! `Q = a·(h - h₀)^b` tiling a stage range. Conversions above the top
//! piece extrapolate with it and are flagged, mirroring how operational
//! curves get extrapolated during floods.

use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One power-law piece `Q = a·(h - h₀)^b` over `[h_min, h_max)` feet.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurvePiece {
    pub h_min: f64,
    pub h_max: f64,
    pub offset: f64,
    pub coefficient: f64,
    pub exponent: f64,
}

impl CurvePiece {
    fn flow(&self, stage: f64) -> f64 {
        self.coefficient * (stage - self.offset).powf(self.exponent)
    }

    fn stage(&self, flow: f64) -> f64 {
        self.offset + (flow / self.coefficient).powf(1.0 / self.exponent)
    }
}

/// A rating curve valid from `valid_from` (inclusive) to `valid_to`
/// (exclusive).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveSegment {
    pub valid_from: DateTime<Utc>,
    pub valid_to: DateTime<Utc>,
    pub pieces: Vec<CurvePiece>,
}

/// All rating-curve segments for one station.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatingCurveSet {
    pub station_id: String,
    pub segments: Vec<CurveSegment>,
}

/// Conversion result; `extrapolated` marks stages above the fitted range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flow {
    pub discharge_cfs: f64,
    pub extrapolated: bool,
}

const CONTINUITY_REL_TOL: f64 = 1e-6;

impl RatingCurveSet {
    pub fn new(station_id: String, segments: Vec<CurveSegment>) -> Result<Self> {
        let set = RatingCurveSet {
            station_id,
            segments,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::InvalidCurve("no segments".into()));
        }
        let mut prev_end: Option<DateTime<Utc>> = None;
        for seg in &self.segments {
            if seg.valid_from >= seg.valid_to {
                return Err(Error::InvalidCurve(format!(
                    "segment validity [{}, {}) is empty",
                    seg.valid_from, seg.valid_to
                )));
            }
            if let Some(end) = prev_end {
                if seg.valid_from < end {
                    return Err(Error::InvalidCurve(
                        "segment validity intervals overlap".into(),
                    ));
                }
            }
            prev_end = Some(seg.valid_to);
            if seg.pieces.is_empty() {
                return Err(Error::InvalidCurve("segment has no pieces".into()));
            }
            for (i, p) in seg.pieces.iter().enumerate() {
                if !(p.coefficient > 0.0) || !(p.exponent > 0.0) {
                    return Err(Error::InvalidCurve(format!(
                        "piece {i}: coefficient and exponent must be positive"
                    )));
                }
                if !(p.offset < p.h_min) {
                    return Err(Error::InvalidCurve(format!(
                        "piece {i}: offset {} must lie below h_min {}",
                        p.offset, p.h_min
                    )));
                }
                if !(p.h_min < p.h_max) {
                    return Err(Error::InvalidCurve(format!(
                        "piece {i}: empty stage range [{}, {})",
                        p.h_min, p.h_max
                    )));
                }
                if i > 0 {
                    let prev = &seg.pieces[i - 1];
                    if (prev.h_max - p.h_min).abs() > 1e-12 {
                        return Err(Error::InvalidCurve(format!(
                            "pieces {} and {i} do not tile contiguously",
                            i - 1
                        )));
                    }
                    // Continuity and monotonicity at the boundary.
                    let left = prev.flow(p.h_min);
                    let right = p.flow(p.h_min);
                    let scale = left.abs().max(1.0);
                    if ((left - right) / scale).abs() > CONTINUITY_REL_TOL {
                        return Err(Error::InvalidCurve(format!(
                            "discontinuity at stage {}: {left} vs {right}",
                            p.h_min
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn segment_at(&self, t: DateTime<Utc>) -> Result<&CurveSegment> {
        self.segments
            .iter()
            .find(|s| s.valid_from <= t && t < s.valid_to)
            .ok_or(Error::UncoveredPeriod(t))
    }

    /// Convert stage (feet) to discharge (cfs) using the curve in effect
    /// at `t`.
    pub fn to_flow(&self, stage: f64, t: DateTime<Utc>) -> Result<Flow> {
        let seg = self.segment_at(t)?;
        let top = seg.pieces.last().expect("validated non-empty");
        let (piece, extrapolated) = if stage >= top.h_max {
            (top, true)
        } else {
            let p = seg
                .pieces
                .iter()
                .find(|p| stage < p.h_max)
                .unwrap_or(&seg.pieces[0]);
            (p, false)
        };
        if stage <= piece.offset {
            return Err(Error::BelowOffset {
                stage,
                offset: piece.offset,
            });
        }
        Ok(Flow {
            discharge_cfs: piece.flow(stage),
            extrapolated,
        })
    }

    /// Analytic inverse of [`RatingCurveSet::to_flow`].
    pub fn to_stage(&self, discharge_cfs: f64, t: DateTime<Utc>) -> Result<f64> {
        if !(discharge_cfs > 0.0) {
            return Err(Error::FlowDomain(discharge_cfs));
        }
        let seg = self.segment_at(t)?;
        for p in &seg.pieces {
            if discharge_cfs < p.flow(p.h_max) {
                return Ok(p.stage(discharge_cfs));
            }
        }
        // Above the top piece's fitted range: extrapolate with it.
        Ok(seg.pieces.last().expect("non-empty").stage(discharge_cfs))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let set: RatingCurveSet = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(y: i32, m: u32, d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, 0, 0, 0).unwrap()
    }

    fn simple_set(a: f64, b: f64) -> RatingCurveSet {
        RatingCurveSet::new(
            "S0".into(),
            vec![CurveSegment {
                valid_from: ts(2020, 1, 1),
                valid_to: ts(2030, 1, 1),
                pieces: vec![CurvePiece {
                    h_min: 1.5,
                    h_max: 50.0,
                    offset: 1.0,
                    coefficient: a,
                    exponent: b,
                }],
            }],
        )
        .unwrap()
    }

    #[test]
    fn power_law_hand_value() {
        // Q = 2·(5-1)^1.5 = 2·8 = 16
        let set = simple_set(2.0, 1.5);
        let q = set.to_flow(5.0, ts(2021, 6, 1)).unwrap();
        assert!((q.discharge_cfs - 16.0).abs() < 1e-12);
        assert!(!q.extrapolated);
    }

    #[test]
    fn unit_head_gives_coefficient() {
        let set = simple_set(7.25, 2.3);
        let q = set.to_flow(2.0, ts(2021, 6, 1)).unwrap();
        assert!((q.discharge_cfs - 7.25).abs() < 1e-12);
    }

    #[test]
    fn segments_select_by_time() {
        let set = RatingCurveSet::new(
            "S0".into(),
            vec![
                CurveSegment {
                    valid_from: ts(2020, 1, 1),
                    valid_to: ts(2021, 1, 1),
                    pieces: vec![CurvePiece {
                        h_min: 1.5,
                        h_max: 50.0,
                        offset: 1.0,
                        coefficient: 2.0,
                        exponent: 1.5,
                    }],
                },
                CurveSegment {
                    valid_from: ts(2021, 1, 1),
                    valid_to: ts(2022, 1, 1),
                    pieces: vec![CurvePiece {
                        h_min: 1.5,
                        h_max: 50.0,
                        offset: 1.0,
                        coefficient: 3.0,
                        exponent: 1.5,
                    }],
                },
            ],
        )
        .unwrap();
        let q1 = set.to_flow(5.0, ts(2020, 6, 1)).unwrap().discharge_cfs;
        let q2 = set.to_flow(5.0, ts(2021, 6, 1)).unwrap().discharge_cfs;
        assert!((q1 - 16.0).abs() < 1e-12);
        assert!((q2 - 24.0).abs() < 1e-12);
    }

    #[test]
    fn uncovered_period_is_an_error() {
        let set = simple_set(2.0, 1.5);
        assert!(matches!(
            set.to_flow(5.0, ts(2031, 1, 1)),
            Err(Error::UncoveredPeriod(_))
        ));
    }

    #[test]
    fn below_offset_is_an_error() {
        let set = simple_set(2.0, 1.5);
        assert!(matches!(
            set.to_flow(0.5, ts(2021, 1, 1)),
            Err(Error::BelowOffset { .. })
        ));
    }

    #[test]
    fn non_positive_flow_rejected_by_inverse() {
        let set = simple_set(2.0, 1.5);
        assert!(matches!(
            set.to_stage(0.0, ts(2021, 1, 1)),
            Err(Error::FlowDomain(_))
        ));
        assert!(matches!(
            set.to_stage(-3.0, ts(2021, 1, 1)),
            Err(Error::FlowDomain(_))
        ));
    }

    #[test]
    fn inverse_of_hand_value() {
        let set = simple_set(2.0, 1.5);
        let h = set.to_stage(16.0, ts(2021, 1, 1)).unwrap();
        assert!((h - 5.0).abs() < 1e-12);
    }

    fn two_piece_set() -> RatingCurveSet {
        // Continuous at h = 8: 30·7.5^1.8 = a₂·7.5^1.4
        let q_b = 30.0 * 7.5f64.powf(1.8);
        let a2 = q_b / 7.5f64.powf(1.4);
        RatingCurveSet::new(
            "S0".into(),
            vec![CurveSegment {
                valid_from: ts(2020, 1, 1),
                valid_to: ts(2030, 1, 1),
                pieces: vec![
                    CurvePiece {
                        h_min: 1.0,
                        h_max: 8.0,
                        offset: 0.5,
                        coefficient: 30.0,
                        exponent: 1.8,
                    },
                    CurvePiece {
                        h_min: 8.0,
                        h_max: 20.0,
                        offset: 0.5,
                        coefficient: a2,
                        exponent: 1.4,
                    },
                ],
            }],
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_over_random_stages() {
        use rand::{Rng, SeedableRng};
        let set = two_piece_set();
        let t = ts(2022, 1, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut max_err: f64 = 0.0;
        for _ in 0..1000 {
            let h = rng.gen_range(1.01..19.9);
            let q = set.to_flow(h, t).unwrap().discharge_cfs;
            let back = set.to_stage(q, t).unwrap();
            max_err = max_err.max((back - h).abs());
        }
        assert!(max_err < 1e-9, "max roundtrip error {max_err}");
    }

    #[test]
    fn boundary_is_continuous() {
        let set = two_piece_set();
        let t = ts(2022, 1, 1);
        let below = set.to_flow(8.0 - 1e-9, t).unwrap().discharge_cfs;
        let at = set.to_flow(8.0, t).unwrap().discharge_cfs;
        assert!(((below - at) / at).abs() < 1e-6);
        // Inverting the boundary flow lands on the boundary stage.
        let h = set.to_stage(at, t).unwrap();
        assert!((h - 8.0).abs() < 1e-6);
    }

    #[test]
    fn monotone_within_segment() {
        use rand::{Rng, SeedableRng};
        let set = two_piece_set();
        let t = ts(2022, 1, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let h1 = rng.gen_range(1.01..19.0);
            let h2 = rng.gen_range(1.01..19.0);
            let (lo, hi) = if h1 < h2 { (h1, h2) } else { (h2, h1) };
            if hi - lo < 1e-9 {
                continue;
            }
            let q_lo = set.to_flow(lo, t).unwrap().discharge_cfs;
            let q_hi = set.to_flow(hi, t).unwrap().discharge_cfs;
            assert!(q_lo < q_hi, "monotonicity violated at {lo} vs {hi}");
        }
    }

    #[test]
    fn extrapolation_above_top_piece_is_flagged() {
        let set = two_piece_set();
        let t = ts(2022, 1, 1);
        let q = set.to_flow(25.0, t).unwrap();
        assert!(q.extrapolated);
        // Still the top piece's power law.
        let a2 = 30.0 * 7.5f64.powf(1.8) / 7.5f64.powf(1.4);
        assert!((q.discharge_cfs - a2 * 24.5f64.powf(1.4)).abs() < 1e-9);
    }

    #[test]
    fn discontinuous_pieces_rejected() {
        let bad = RatingCurveSet::new(
            "S0".into(),
            vec![CurveSegment {
                valid_from: ts(2020, 1, 1),
                valid_to: ts(2030, 1, 1),
                pieces: vec![
                    CurvePiece {
                        h_min: 1.0,
                        h_max: 8.0,
                        offset: 0.5,
                        coefficient: 30.0,
                        exponent: 1.8,
                    },
                    CurvePiece {
                        h_min: 8.0,
                        h_max: 20.0,
                        offset: 0.5,
                        coefficient: 30.0,
                        exponent: 1.4,
                    },
                ],
            }],
        );
        assert!(matches!(bad, Err(Error::InvalidCurve(_))));
    }
}
