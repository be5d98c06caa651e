//! Loading, alignment, resampling, gap handling, chronological splitting,
//! and training-window construction for multi-station hourly series.
//!
//! Time-series CSV schema (header is bit-exact):
//! `timestamp,station_id,variable,value` with variables `stage_ft`,
//! `rainfall_mm`, `discharge_reported_cfs`, `discharge_measured_cfs` and
//! ISO-8601 UTC timestamps. Rainfall is a single watershed-total series;
//! its rows conventionally carry the station id `watershed`. Reported and
//! measured discharge belong to the target station.

mod frame;
mod window;

pub use frame::{load_and_resample, HourlyFrame, SplitFractions, SplitIndices, WATERSHED_ID};
pub use window::{make_windows, WindowSample, WindowSet};
