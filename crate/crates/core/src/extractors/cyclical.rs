use chrono::{Datelike, NaiveDate, NaiveDateTime};

use crate::extractors::ExtractorError;
use crate::scalar::Scalar;

pub const DAY_PERIOD: f64 = 31.0;
pub const MONTH_PERIOD: f64 = 12.0;
pub const YEAR_PERIOD: f64 = 10.0;

/// `(sin(2π i / P), cos(2π i / P))`.
pub fn cyclical_pair<T: Scalar>(index: f64, period: f64) -> (T, T) {
    let angle = 2.0 * std::f64::consts::PI * index / period;
    (T::of(angle.sin()), T::of(angle.cos()))
}

/// Calendar position as zero-based indices: day of month (0..=30), month
/// (0..=11) and year within the decade (0..=9).
pub fn calendar_indices(date: NaiveDate) -> (u32, u32, u32) {
    (date.day0(), date.month0(), date.year().rem_euclid(10) as u32)
}

/// `[day_sin, day_cos, month_sin, month_cos, year_sin, year_cos]`.
pub fn cyclical_encode<T: Scalar>(date: NaiveDate) -> [T; 6] {
    let (d, m, y) = calendar_indices(date);
    cyclical_from_indices(d as f64, m as f64, y as f64)
}

pub fn cyclical_from_indices<T: Scalar>(day: f64, month: f64, year: f64) -> [T; 6] {
    let (ds, dc) = cyclical_pair(day, DAY_PERIOD);
    let (ms, mc) = cyclical_pair(month, MONTH_PERIOD);
    let (ys, yc) = cyclical_pair(year, YEAR_PERIOD);
    [ds, dc, ms, mc, ys, yc]
}

/// Accepts `YYYY-MM-DD`, `YYYY-MM-DDTHH:MM:SS` (optionally fractional) and
/// the same with a space separator.
pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime, ExtractorError> {
    let s = s.trim();
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight is valid"))
        .map_err(|_| ExtractorError::Timestamp(s.to_string()))
}
