//! Historical price-series container shared by estimation and backtesting.

use chrono::NaiveDate;

use crate::{EngineError, Result};

/// Days-per-year convention used everywhere calendar dates become year
/// fractions (estimation trend fits, contract clocks).
pub const DAYS_PER_YEAR: f64 = 365.25;

/// Year fraction between two dates under actual/365.25.
pub fn year_fraction(from: NaiveDate, to: NaiveDate) -> f64 {
    (to - from).num_days() as f64 / DAYS_PER_YEAR
}

/// Provenance notes carried alongside a loaded series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeriesMetadata {
    /// Where the observations came from (file path or synthetic tag).
    pub source: String,
    /// How the levels were discounted ("prediscounted" or
    /// "savings-normalized").
    pub discounting: String,
}

/// A dated series of strictly positive index levels, already expressed in
/// savings-account (discounted) units.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    observations: Vec<(NaiveDate, f64)>,
    pub metadata: SeriesMetadata,
}

impl PriceSeries {
    /// Build a series, validating strictly increasing dates and strictly
    /// positive levels. Error messages carry the offending row number
    /// (1-based, matching file rows).
    pub fn new(observations: Vec<(NaiveDate, f64)>, metadata: SeriesMetadata) -> Result<Self> {
        for (i, (date, level)) in observations.iter().enumerate() {
            if !level.is_finite() || *level <= 0.0 {
                return Err(EngineError::data(format!(
                    "row {}: nonpositive index level {} on {}",
                    i + 1,
                    level,
                    date
                )));
            }
            if i > 0 && observations[i - 1].0 >= *date {
                return Err(EngineError::data(format!(
                    "row {}: dates not strictly increasing ({} after {})",
                    i + 1,
                    date,
                    observations[i - 1].0
                )));
            }
        }
        Ok(Self {
            observations,
            metadata,
        })
    }

    pub fn observations(&self) -> &[(NaiveDate, f64)] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.observations.first().map(|o| o.0)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.observations.last().map(|o| o.0)
    }

    /// Sub-series with dates in `[start, end]` (inclusive). Errors when the
    /// window contains no observations.
    pub fn window(&self, start: NaiveDate, end: NaiveDate) -> Result<PriceSeries> {
        if start > end {
            return Err(EngineError::invalid(format!(
                "window start {start} is after end {end}"
            )));
        }
        let slice: Vec<_> = self
            .observations
            .iter()
            .filter(|(d, _)| *d >= start && *d <= end)
            .cloned()
            .collect();
        if slice.is_empty() {
            return Err(EngineError::data(format!(
                "no observations in window {start}..{end} (series covers {:?}..{:?})",
                self.first_date(),
                self.last_date()
            )));
        }
        Ok(PriceSeries {
            observations: slice,
            metadata: self.metadata.clone(),
        })
    }

    /// The same series with every level multiplied by `k > 0` (unit/scale
    /// changes; estimation should be equivariant under this).
    pub fn scaled(&self, k: f64) -> Result<PriceSeries> {
        if !k.is_finite() || k <= 0.0 {
            return Err(EngineError::invalid(format!(
                "scale factor must be positive, got {k}"
            )));
        }
        Ok(PriceSeries {
            observations: self
                .observations
                .iter()
                .map(|(d, v)| (*d, v * k))
                .collect(),
            metadata: self.metadata.clone(),
        })
    }

    /// Level at an exact date, if present.
    pub fn level_on(&self, date: NaiveDate) -> Option<f64> {
        self.observations
            .binary_search_by_key(&date, |o| o.0)
            .ok()
            .map(|i| self.observations[i].1)
    }

    /// Index of the observation date nearest to `target` (ties -> earlier).
    pub fn nearest_index(&self, target: NaiveDate) -> Option<usize> {
        if self.observations.is_empty() {
            return None;
        }
        let i = self
            .observations
            .partition_point(|(d, _)| *d < target);
        if i == 0 {
            return Some(0);
        }
        if i == self.observations.len() {
            return Some(i - 1);
        }
        let before = (target - self.observations[i - 1].0).num_days();
        let after = (self.observations[i].0 - target).num_days();
        Some(if before <= after { i - 1 } else { i })
    }

    /// Observation times in years since `origin` (actual/365.25).
    pub fn years_from(&self, origin: NaiveDate) -> Vec<f64> {
        self.observations
            .iter()
            .map(|(d, _)| year_fraction(origin, *d))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn meta() -> SeriesMetadata {
        SeriesMetadata {
            source: "test".into(),
            discounting: "prediscounted".into(),
        }
    }

    #[test]
    fn rejects_unsorted_and_nonpositive() {
        let unsorted = vec![(d(2000, 2, 1), 1.0), (d(2000, 1, 1), 1.0)];
        let err = PriceSeries::new(unsorted, meta()).unwrap_err();
        assert!(err.to_string().contains("row 2"));
        let nonpos = vec![(d(2000, 1, 1), 1.0), (d(2000, 2, 1), 0.0)];
        let err = PriceSeries::new(nonpos, meta()).unwrap_err();
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn window_is_inclusive_and_errors_when_empty() {
        let s = PriceSeries::new(
            vec![
                (d(2000, 1, 1), 1.0),
                (d(2000, 2, 1), 2.0),
                (d(2000, 3, 1), 3.0),
            ],
            meta(),
        )
        .unwrap();
        let w = s.window(d(2000, 1, 1), d(2000, 2, 1)).unwrap();
        assert_eq!(w.len(), 2);
        assert!(s.window(d(1990, 1, 1), d(1990, 12, 1)).is_err());
        assert!(s.window(d(2000, 3, 1), d(2000, 1, 1)).is_err());
    }

    #[test]
    fn nearest_index_prefers_the_earlier_date_on_ties() {
        let s = PriceSeries::new(
            vec![(d(2000, 1, 10), 1.0), (d(2000, 1, 20), 2.0)],
            meta(),
        )
        .unwrap();
        assert_eq!(s.nearest_index(d(2000, 1, 15)).unwrap(), 0); // tie: 5 days both ways
        assert_eq!(s.nearest_index(d(2000, 1, 16)).unwrap(), 1);
        assert_eq!(s.nearest_index(d(1999, 1, 1)).unwrap(), 0);
        assert_eq!(s.nearest_index(d(2001, 1, 1)).unwrap(), 1);
    }

    #[test]
    fn year_fractions_use_actual_365_25() {
        let t = year_fraction(d(2000, 1, 1), d(2001, 1, 1));
        assert!((t - 366.0 / 365.25).abs() < 1e-15); // 2000 is a leap year
    }
}
