//! Curve alignment, down-sampling and normalized rolling windows.

mod align;
mod dataset;
mod window;

pub use align::{align_and_downsample, day_number, CurveSeries, DayWarning, NANOS_PER_DAY};
pub use dataset::{month_key, month_offset, DatasetIndex, Dataset, DayBlock, MonthChunk, SampleRef};
pub use window::{
    build_windows, denormalize_prediction, norm_stats, normalize_window, realized_vol, window_starts,
    NormStats, RawWindow, SkipReason, StdConvention, WindowSample, DEFAULT_WINDOW_LEN,
};

/// Default down-sampling cutoff in bps.
pub const DEFAULT_CUTOFF_BPS: f64 = 0.1;
