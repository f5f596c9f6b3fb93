//! Model parameter types and the shared risk-factor state.

use crate::{EngineError, Result};

/// Which of the two market models a value belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Black-Scholes: lognormal discounted index, risk-neutral pricing.
    Bsm,
    /// Minimal market model: squared-Bessel(4) discounted index, real-world
    /// pricing with the index as numeraire.
    Mmm,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Bsm => write!(f, "bsm"),
            ModelKind::Mmm => write!(f, "mmm"),
        }
    }
}

/// Black-Scholes parameters for the discounted index.
///
/// Under the real-world measure the discounted index follows
/// `dS = sigma^2 S dt + sigma S dB` (the risk premium equals the variance,
/// which is what makes `S(t)/S(u)` the pricing kernel); under the
/// risk-neutral measure it is driftless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsmParams {
    /// Volatility per square-root year; strictly positive.
    pub sigma: f64,
}

impl BsmParams {
    pub fn new(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(EngineError::invalid(format!(
                "BSM volatility must be finite and > 0, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }
}

/// Minimal market model parameters for the discounted index.
///
/// The index is `S(t) = alpha0 * e^{eta t} * Y(t) / eta` where the
/// normalized level `Y` is a squared-Bessel process of dimension four
/// mean-reverting around 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmmParams {
    /// Initial scale of the index drift (savings-account units per year).
    pub alpha0: f64,
    /// Long-term net growth rate per year.
    pub eta: f64,
}

impl MmmParams {
    pub fn new(alpha0: f64, eta: f64) -> Result<Self> {
        if !alpha0.is_finite() || alpha0 <= 0.0 {
            return Err(EngineError::invalid(format!(
                "MMM alpha0 must be finite and > 0, got {alpha0}"
            )));
        }
        if !eta.is_finite() || eta <= 0.0 {
            return Err(EngineError::invalid(format!(
                "MMM eta must be finite and > 0, got {eta}"
            )));
        }
        Ok(Self { alpha0, eta })
    }

    /// Deterministic trend level `alpha0 * e^{eta t} / eta`, i.e. the index
    /// level corresponding to `Y(t) = 1`.
    pub fn trend(&self, t: f64) -> f64 {
        self.alpha0 * (self.eta * t).exp() / self.eta
    }

    /// Normalized level `Y(t) = eta * S(t) / (alpha0 e^{eta t})` for an
    /// observed index level `s` at trend time `t`.
    pub fn normalize(&self, s: f64, t: f64) -> f64 {
        s / self.trend(t)
    }
}

/// Parameters of either model, tagged by kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelParams {
    Bsm(BsmParams),
    Mmm(MmmParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Bsm(_) => ModelKind::Bsm,
            ModelParams::Mmm(_) => ModelKind::Mmm,
        }
    }
}

/// Markov state of the index risk factor at a point in time.
///
/// For the BSM the state is the discounted index level `S(t)` itself (the
/// transition is multiplicative, so any positive level works as a
/// reference); for the MMM it is the normalized level `Y(t)`, which is the
/// model's essential state variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskFactorState {
    pub kind: ModelKind,
    /// `S(t)` (BSM) or `Y(t)` (MMM); nonnegative, zero only as a boundary.
    pub value: f64,
    /// Time in years.
    pub time: f64,
}

impl RiskFactorState {
    pub fn new(kind: ModelKind, value: f64, time: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(EngineError::invalid(format!(
                "risk-factor value must be finite and >= 0, got {value}"
            )));
        }
        if !time.is_finite() {
            return Err(EngineError::invalid(format!(
                "risk-factor time must be finite, got {time}"
            )));
        }
        Ok(Self { kind, value, time })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_validation() {
        assert!(BsmParams::new(0.1441).is_ok());
        assert!(BsmParams::new(0.0).is_err());
        assert!(BsmParams::new(-0.2).is_err());
        assert!(MmmParams::new(2.857, 0.0435).is_ok());
        assert!(MmmParams::new(0.0, 0.0435).is_err());
        assert!(MmmParams::new(2.857, -0.01).is_err());
        assert!(MmmParams::new(2.857, 0.0).is_err());
    }

    #[test]
    fn normalization_inverts_the_trend() {
        let p = MmmParams::new(2.857, 0.0435).unwrap();
        // An index exactly on trend normalizes to 1 at any time.
        for t in [0.0, 10.0, 117.0] {
            let s = p.trend(t);
            assert!((p.normalize(s, t) - 1.0).abs() < 1e-14);
        }
        // Scale equivariance: doubling the index doubles Y.
        assert!((p.normalize(2.0 * p.trend(5.0), 5.0) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn risk_factor_state_validation() {
        assert!(RiskFactorState::new(ModelKind::Mmm, 0.5, 0.0).is_ok());
        assert!(RiskFactorState::new(ModelKind::Mmm, -0.5, 0.0).is_err());
        assert!(RiskFactorState::new(ModelKind::Bsm, f64::NAN, 0.0).is_err());
    }
}
