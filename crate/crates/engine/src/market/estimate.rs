//! Parameter estimation from historical discounted index series.
//!
//! * MMM: ordinary least squares of `ln S(t)` against `t` — the slope is the
//!   net growth rate `eta` and the intercept `c` fixes the drift scale
//!   `alpha0 = eta * e^c` (from `S(t)/Y(t) = (alpha0/eta) e^{eta t}`). The
//!   normalized series `Y(t) = eta S(t) / (alpha0 e^{eta t})` falls out of
//!   the same fit.
//! * BSM: Gaussian maximum likelihood on log-returns with a freely fitted
//!   drift. With uniform spacing `dt` this is
//!   `sigma^2 = (1/(n dt)) * sum (r_i - rbar)^2` (denominator `n`, not
//!   `n-1`); non-uniform gaps are handled by the exact Gaussian MLE, which
//!   weights each squared deviation by `1/dt_i` and fits the drift as
//!   `mu = sum(r_i) / sum(dt_i)`.
//!
//! Time is measured in years since the first observation of the fitted
//! window (actual/365.25).

use chrono::NaiveDate;

use super::params::{BsmParams, MmmParams};
use crate::series::PriceSeries;
use crate::{EngineError, Result};

/// Result of the MMM trend fit.
#[derive(Debug, Clone)]
pub struct MmmEstimate {
    pub params: MmmParams,
    /// OLS intercept `c` of `ln S` at the origin, so `e^c = alpha0/eta`.
    pub intercept: f64,
    /// Date at which the trend clock starts (first fitted observation).
    pub origin: NaiveDate,
    /// Normalized series `Y(t_i)` over the fitted window.
    pub normalized: Vec<(NaiveDate, f64)>,
}

impl MmmEstimate {
    /// Normalized level for an index observation at any date, extrapolating
    /// the fitted trend (used to locate `Y` at a contract start that lies
    /// beyond the estimation window).
    pub fn normalize(&self, date: NaiveDate, level: f64) -> f64 {
        let t = crate::series::year_fraction(self.origin, date);
        self.params.normalize(level, t)
    }
}

/// Result of the BSM return fit.
///
/// Kept separate from [`BsmParams`] because a deterministic input series
/// legitimately estimates `sigma = 0`, which is not a valid *pricing*
/// parameter; convert with [`BsmEstimate::params`] when pricing.
#[derive(Debug, Clone, Copy)]
pub struct BsmEstimate {
    /// MLE volatility, per sqrt-year; `>= 0`.
    pub sigma: f64,
    /// Fitted log-drift per year (diagnostic; pricing never uses it).
    pub drift: f64,
}

impl BsmEstimate {
    pub fn params(&self) -> Result<BsmParams> {
        BsmParams::new(self.sigma)
    }
}

fn require_observations(series: &PriceSeries, what: &str) -> Result<()> {
    if series.len() < 3 {
        return Err(EngineError::data(format!(
            "{what} needs at least 3 observations, got {}",
            series.len()
        )));
    }
    Ok(())
}

/// Fit the minimal market model by OLS on the log-index trend.
pub fn estimate_mmm(series: &PriceSeries) -> Result<MmmEstimate> {
    require_observations(series, "MMM trend estimation")?;
    let origin = series.first_date().expect("nonempty");
    let t = series.years_from(origin);
    let logs: Vec<f64> = series.observations().iter().map(|(_, s)| s.ln()).collect();

    let n = t.len() as f64;
    let t_bar = t.iter().sum::<f64>() / n;
    let l_bar = logs.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (ti, li) in t.iter().zip(&logs) {
        let dt = ti - t_bar;
        sxx += dt * dt;
        sxy += dt * (li - l_bar);
    }
    if sxx <= 0.0 {
        return Err(EngineError::data(
            "MMM trend estimation needs a nondegenerate time span".to_string(),
        ));
    }
    let eta = sxy / sxx;
    let intercept = l_bar - eta * t_bar;
    if !(eta > 0.0) {
        return Err(EngineError::data(format!(
            "MMM trend fit produced nonpositive growth rate eta = {eta}; \
             the model requires a growing index"
        )));
    }
    let params = MmmParams::new(eta * intercept.exp(), eta)?;
    let normalized = series
        .observations()
        .iter()
        .zip(&t)
        .map(|((date, s), ti)| (*date, params.normalize(*s, *ti)))
        .collect();
    Ok(MmmEstimate {
        params,
        intercept,
        origin,
        normalized,
    })
}

/// Fit the Black-Scholes volatility by Gaussian MLE on log-returns.
pub fn estimate_bsm(series: &PriceSeries) -> Result<BsmEstimate> {
    require_observations(series, "BSM volatility estimation")?;
    let origin = series.first_date().expect("nonempty");
    let t = series.years_from(origin);
    let obs = series.observations();

    let n_returns = obs.len() - 1;
    let mut sum_r = 0.0;
    let mut sum_dt = 0.0;
    let mut returns = Vec::with_capacity(n_returns);
    for i in 1..obs.len() {
        let r = (obs[i].1 / obs[i - 1].1).ln();
        let dt = t[i] - t[i - 1];
        returns.push((r, dt));
        sum_r += r;
        sum_dt += dt;
    }
    let drift = sum_r / sum_dt;
    let mut ssq = 0.0;
    for (r, dt) in &returns {
        let dev = r - drift * dt;
        ssq += dev * dev / dt;
    }
    let sigma = (ssq / n_returns as f64).sqrt();
    Ok(BsmEstimate { sigma, drift })
}
