//! Exact transition laws and stochastic discount factors for both models.
//!
//! Both models price through the real-world pricing formula
//! `V(t) = E_t[ D(t,u) · V(u) ]` with the *realized* discount factor
//! `D(t,u) = S(t)/S(u)`:
//!
//! * BSM: `S` is geometric Brownian motion with drift `sigma^2` (the risk
//!   premium equals the variance), so `S(t)/S(u)` is exactly the
//!   risk-neutral change of measure times the (unit) savings discount and
//!   `E_t[S(t)/S(u)] = 1` — a martingale.
//! * MMM: `S = alpha0 e^{eta t} Y / eta` with `Y` squared-Bessel(4), so
//!   `D(t,u) = e^{-eta (u-t)} Y(t)/Y(u)` and
//!   `E_t[D(t,u)] = 1 - exp(-2 e^{-eta dt} Y(t) / (1 - e^{-eta dt})) < 1`
//!   — a strict supermartingale. There is no risk-neutral measure; the
//!   shortfall from 1 is real economics, not numerical error.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::erf::erfc;

use super::params::{ModelParams, MmmParams, RiskFactorState};
use super::special::{ncx2_cdf, ncx2_pdf, ncx2_sf};
use crate::{EngineError, Result};

/// One-step transition law of the model risk factor over a fixed horizon.
#[derive(Debug, Clone)]
pub struct TransitionLaw {
    /// Horizon `dt = u - t` in years.
    pub horizon: f64,
    /// Analytic conditional mean of the destination value.
    pub mean: f64,
    /// Support of the destination value (upper bound may be infinite).
    pub support: (f64, f64),
    pub kind: TransitionKind,
}

#[derive(Debug, Clone)]
pub enum TransitionKind {
    Mmm(MmmTransition),
    Bsm(BsmTransition),
}

/// `Y(u) | Y(t) = y` is `c * X` with `X ~ chi²₄(zeta)`:
/// `c = (1 - e^{-eta dt})/4`, `zeta = 4 e^{-eta dt} y / (1 - e^{-eta dt})`.
#[derive(Debug, Clone, Copy)]
pub struct MmmTransition {
    /// Scale of the noncentral chi-squared.
    pub c: f64,
    /// Noncentrality.
    pub zeta: f64,
    /// `e^{-eta dt}` — the mean-reversion decay over the step.
    pub decay: f64,
}

/// `ln(S(u)/s_t) ~ N(log_drift, log_sd^2)` with `log_drift = sigma^2 dt / 2`
/// under the real-world measure.
#[derive(Debug, Clone, Copy)]
pub struct BsmTransition {
    pub s_t: f64,
    pub log_drift: f64,
    pub log_sd: f64,
}

impl TransitionLaw {
    /// Probability density of the destination value.
    pub fn density(&self, dest: f64) -> Result<f64> {
        match &self.kind {
            TransitionKind::Mmm(m) => m.density(dest),
            TransitionKind::Bsm(b) => Ok(b.density(dest)),
        }
    }

    /// `P(destination <= dest)`.
    pub fn cdf(&self, dest: f64) -> Result<f64> {
        match &self.kind {
            TransitionKind::Mmm(m) => m.cdf(dest),
            TransitionKind::Bsm(b) => Ok(b.cdf(dest)),
        }
    }

    /// `P(destination > dest)`, computed tail-stably.
    pub fn sf(&self, dest: f64) -> Result<f64> {
        match &self.kind {
            TransitionKind::Mmm(m) => m.sf(dest),
            TransitionKind::Bsm(b) => Ok(1.0 - b.cdf(dest)),
        }
    }

    /// Draw one destination value by exact-law sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            TransitionKind::Mmm(m) => m.sample(rng),
            TransitionKind::Bsm(b) => b.sample(rng),
        }
    }
}

impl MmmTransition {
    pub fn density(&self, y: f64) -> Result<f64> {
        if y <= 0.0 {
            return Ok(0.0); // boundary/outside support: integrable zero limit
        }
        Ok(ncx2_pdf(self.zeta, y / self.c)? / self.c)
    }

    pub fn cdf(&self, y: f64) -> Result<f64> {
        if y <= 0.0 {
            return Ok(0.0);
        }
        ncx2_cdf(self.zeta, y / self.c)
    }

    pub fn sf(&self, y: f64) -> Result<f64> {
        if y <= 0.0 {
            return Ok(1.0);
        }
        ncx2_sf(self.zeta, y / self.c)
    }

    /// Exact draw via the squared-Gaussian decomposition:
    /// `chi²₄(zeta) = (Z + sqrt(zeta))² + chi²₃`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        // chi²₃ ≡ Gamma(shape 3/2, scale 2); rand_distr's Gamma is exact.
        let chi2_3 = Gamma::new(1.5, 2.0).expect("valid gamma parameters").sample(rng);
        let noncentral = (z + self.zeta.sqrt()).powi(2);
        self.c * (noncentral + chi2_3)
    }
}

impl BsmTransition {
    pub fn density(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let x = ((s / self.s_t).ln() - self.log_drift) / self.log_sd;
        (-0.5 * x * x).exp() / (s * self.log_sd * (2.0 * std::f64::consts::PI).sqrt())
    }

    pub fn cdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let x = ((s / self.s_t).ln() - self.log_drift) / self.log_sd;
        0.5 * erfc(-x / std::f64::consts::SQRT_2)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.s_t * (self.log_drift + self.log_sd * z).exp()
    }
}

/// Transition law of the normalized MMM level `Y` from `(t, y_t)` to `u`.
pub fn mmm_transition(params: &MmmParams, y_t: f64, t: f64, u: f64) -> Result<TransitionLaw> {
    if !(u > t) {
        return Err(EngineError::invalid(format!(
            "transition requires u > t, got t={t}, u={u}"
        )));
    }
    if !y_t.is_finite() || y_t < 0.0 {
        return Err(EngineError::invalid(format!(
            "MMM transition requires y_t >= 0, got {y_t}"
        )));
    }
    let dt = u - t;
    let decay = (-params.eta * dt).exp();
    let c = 0.25 * (1.0 - decay);
    if c <= 0.0 {
        // eta > 0 and dt > 0 guarantee c > 0 mathematically; this can only
        // trip on a sub-ulp horizon.
        return Err(EngineError::numerical(format!(
            "MMM transition horizon {dt} underflows the mean-reversion scale"
        )));
    }
    let zeta = decay * y_t / c;
    let mean = 1.0 - decay + decay * y_t;
    Ok(TransitionLaw {
        horizon: dt,
        mean,
        support: (0.0, f64::INFINITY),
        kind: TransitionKind::Mmm(MmmTransition { c, zeta, decay }),
    })
}

/// Transition law of the discounted index `S` under BSM from `(t, s_t)` to
/// `u`, in the real-world measure (drift `sigma^2`, i.e. log-drift
/// `sigma^2 dt / 2`).
pub fn bsm_transition(
    params: &super::params::BsmParams,
    s_t: f64,
    t: f64,
    u: f64,
) -> Result<TransitionLaw> {
    if !(u > t) {
        return Err(EngineError::invalid(format!(
            "transition requires u > t, got t={t}, u={u}"
        )));
    }
    if !s_t.is_finite() || s_t <= 0.0 {
        return Err(EngineError::invalid(format!(
            "BSM transition requires s_t > 0, got {s_t}"
        )));
    }
    let dt = u - t;
    let var = params.sigma * params.sigma * dt;
    let mean = s_t * var.exp();
    Ok(TransitionLaw {
        horizon: dt,
        mean,
        support: (0.0, f64::INFINITY),
        kind: TransitionKind::Bsm(BsmTransition {
            s_t,
            log_drift: 0.5 * var,
            log_sd: var.sqrt(),
        }),
    })
}

/// Realized stochastic discount factor `D(t,u) = S(t)/S(u)` between two
/// observed risk-factor states.
///
/// BSM: the ratio of index levels. MMM: `e^{-eta (u-t)} Y(t)/Y(u)` (the
/// same ratio, written through the trend decomposition of `S`).
pub fn sdf(model: &ModelParams, state_t: &RiskFactorState, state_u: &RiskFactorState) -> Result<f64> {
    if state_t.kind != model.kind() || state_u.kind != model.kind() {
        return Err(EngineError::invalid(
            "risk-factor states do not match the model kind".to_string(),
        ));
    }
    if state_u.time < state_t.time {
        return Err(EngineError::invalid(format!(
            "discount factor requires u >= t, got t={}, u={}",
            state_t.time, state_u.time
        )));
    }
    if state_t.value <= 0.0 {
        return Err(EngineError::invalid(format!(
            "discount factor requires a positive source value, got {}",
            state_t.value
        )));
    }
    if state_u.value <= 0.0 {
        return Err(EngineError::numerical(format!(
            "singular discount: destination risk factor is {} at time {}",
            state_u.value, state_u.time
        )));
    }
    match model {
        ModelParams::Bsm(_) => Ok(state_t.value / state_u.value),
        ModelParams::Mmm(p) => {
            let dt = state_u.time - state_t.time;
            Ok((-p.eta * dt).exp() * state_t.value / state_u.value)
        }
    }
}

/// Closed-form `E_t[D(t,u)]` under the MMM:
/// `1 - exp(-2 e^{-eta dt} y_t / (1 - e^{-eta dt}))`, strictly below 1.
///
/// Follows from `E[1/X] = (1 - e^{-zeta/2})/zeta` for `X ~ chi²₄(zeta)`.
pub fn mmm_expected_sdf(params: &MmmParams, y_t: f64, dt: f64) -> f64 {
    let decay = (-params.eta * dt).exp();
    1.0 - (-2.0 * decay * y_t / (1.0 - decay)).exp()
}
