//! GMWB contract mechanics.
//!
//! The product bundles a unit-linked wealth account `W` with a guarantee
//! account `A`. At each event date `t_n` (n = 1..N) the policyholder takes a
//! nominal withdrawal `gamma <= A`; the guarantee drops by `gamma`, the
//! wealth by the same amount floored at zero (the guarantee covers the
//! shortfall). Net cash received is `gamma - beta * max(gamma - G_n, 0)` —
//! amounts above the contractual rate `G_n` pay a proportional penalty. At
//! maturity the larger of the two accounts is liquidated mandatorily, with
//! the same penalty applied to the guarantee excess over `G_N`.
//!
//! Between event dates the wealth tracks the discounted index with a
//! continuous fee drag: `W(u) = W(t) * (index ratio) * e^{-alpha_tot (u-t)}`
//! while the guarantee stays constant. All amounts are savings-account
//! discounted; no interest rate appears.

use crate::market::{ModelParams, RiskFactorState};
use crate::{EngineError, Result};

/// Absolute slack allowed when checking admissibility and date equality, to
/// absorb float dust from grid arithmetic.
const TIME_EPS: f64 = 1e-9;

/// Terms of a GMWB variable annuity.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractSpec {
    /// Event times `t_0 = 0 < t_1 < ... < t_N = T` in years.
    event_times: Vec<f64>,
    /// Contractual (penalty-free) withdrawal amounts, indexed by event:
    /// `g[0] = 0` (no withdrawal at inception), `g[n]` for `n = 1..=N`.
    contractual: Vec<f64>,
    /// Penalty rate on withdrawal excess, in `[0, 1]`.
    pub beta: f64,
    /// Insurance fee rate per year (continuous).
    pub fee_ins: f64,
    /// Management fee rate per year (continuous).
    pub fee_mgmt: f64,
    /// Initial wealth `W(0) > 0`.
    pub w0: f64,
    /// Initial guarantee `A(0)`, at most `W(0)`.
    pub a0: f64,
}

impl ContractSpec {
    /// Build and validate a contract. `contractual` lists `G_n` for the
    /// event dates `t_1..t_N` (length `N`).
    pub fn new(
        event_times: Vec<f64>,
        contractual: Vec<f64>,
        beta: f64,
        fee_ins: f64,
        fee_mgmt: f64,
        w0: f64,
        a0: f64,
    ) -> Result<Self> {
        if event_times.len() < 2 {
            return Err(EngineError::invalid(
                "a contract needs at least the inception and maturity dates".to_string(),
            ));
        }
        if event_times[0] != 0.0 {
            return Err(EngineError::invalid(format!(
                "the first event time must be 0, got {}",
                event_times[0]
            )));
        }
        for w in event_times.windows(2) {
            if !w[1].is_finite() || w[1] <= w[0] {
                return Err(EngineError::invalid(format!(
                    "event times must be finite and strictly increasing, got {} after {}",
                    w[1], w[0]
                )));
            }
        }
        let n = event_times.len() - 1;
        if contractual.len() != n {
            return Err(EngineError::invalid(format!(
                "expected {n} contractual withdrawal amounts (one per event after inception), \
                 got {}",
                contractual.len()
            )));
        }
        for (i, g) in contractual.iter().enumerate() {
            if !g.is_finite() || *g <= 0.0 {
                return Err(EngineError::invalid(format!(
                    "contractual withdrawal for event {} must be positive, got {g}",
                    i + 1
                )));
            }
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(EngineError::invalid(format!(
                "penalty rate must lie in [0, 1], got {beta}"
            )));
        }
        if fee_ins < 0.0 || fee_mgmt < 0.0 || !fee_ins.is_finite() || !fee_mgmt.is_finite() {
            return Err(EngineError::invalid(format!(
                "fee rates must be finite and nonnegative, got {fee_ins} and {fee_mgmt}"
            )));
        }
        if !w0.is_finite() || w0 <= 0.0 {
            return Err(EngineError::invalid(format!(
                "initial wealth must be positive, got {w0}"
            )));
        }
        if !a0.is_finite() || a0 < 0.0 {
            return Err(EngineError::invalid(format!(
                "initial guarantee must be nonnegative, got {a0}"
            )));
        }
        if a0 > w0 * (1.0 + 1e-12) {
            return Err(EngineError::invalid(format!(
                "initial guarantee {a0} exceeds initial wealth {w0}"
            )));
        }
        if a0 < w0 {
            log::warn!(
                "initial guarantee {a0} below initial wealth {w0}: \
                 the standard product sets them equal"
            );
        }
        let mut g = Vec::with_capacity(n + 1);
        g.push(0.0);
        g.extend_from_slice(&contractual);
        Ok(Self {
            event_times,
            contractual: g,
            beta,
            fee_ins,
            fee_mgmt,
            w0,
            a0,
        })
    }

    /// The standard annual product: `N = years` event dates one year apart,
    /// equal contractual withdrawals `A0 / N`, initial guarantee equal to
    /// initial wealth.
    pub fn annual(years: usize, w0: f64, beta: f64, fee_ins: f64, fee_mgmt: f64) -> Result<Self> {
        if years == 0 {
            return Err(EngineError::invalid(
                "an annual contract needs at least one year".to_string(),
            ));
        }
        let event_times = (0..=years).map(|i| i as f64).collect();
        let g = w0 / years as f64;
        let contractual = vec![g; years];
        Self::new(event_times, contractual, beta, fee_ins, fee_mgmt, w0, w0)
    }

    /// Number of post-inception events `N` (the last is maturity).
    pub fn n_events(&self) -> usize {
        self.event_times.len() - 1
    }

    /// Maturity `T` in years.
    pub fn maturity(&self) -> f64 {
        *self.event_times.last().expect("validated nonempty")
    }

    /// Event time `t_n` for `n = 0..=N`.
    pub fn event_time(&self, n: usize) -> f64 {
        self.event_times[n]
    }

    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    /// Contractual withdrawal `G_n` (`G_0 = 0`).
    pub fn contractual(&self, n: usize) -> f64 {
        self.contractual[n]
    }

    /// Total continuous fee rate `alpha_tot = alpha_ins + alpha_mgmt`.
    pub fn alpha_tot(&self) -> f64 {
        self.fee_ins + self.fee_mgmt
    }

    /// Fee drag factor `e^{-alpha_tot dt}` over a horizon.
    pub fn fee_factor(&self, dt: f64) -> f64 {
        (-self.alpha_tot() * dt).exp()
    }
}

/// Nominal account balances at a point in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccountState {
    /// Wealth account balance, `>= 0`.
    pub wealth: f64,
    /// Guarantee account balance, `>= 0`.
    pub guarantee: f64,
    /// Time in years.
    pub time: f64,
}

impl AccountState {
    pub fn new(wealth: f64, guarantee: f64, time: f64) -> Result<Self> {
        if !wealth.is_finite() || wealth < 0.0 {
            return Err(EngineError::invalid(format!(
                "wealth must be finite and >= 0, got {wealth}"
            )));
        }
        if !guarantee.is_finite() || guarantee < 0.0 {
            return Err(EngineError::invalid(format!(
                "guarantee must be finite and >= 0, got {guarantee}"
            )));
        }
        if !time.is_finite() {
            return Err(EngineError::invalid(format!(
                "time must be finite, got {time}"
            )));
        }
        Ok(Self {
            wealth,
            guarantee,
            time,
        })
    }
}

/// A realized withdrawal event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Withdrawal {
    /// Nominal amount taken off the accounts.
    pub gamma: f64,
    /// Cash actually received after penalties.
    pub net_cash_flow: f64,
    /// Event index `n`.
    pub date_index: usize,
}

/// Net cash received for a nominal withdrawal `gamma` at event `n`.
///
/// For `n < N`: `gamma - beta * max(gamma - G_n, 0)`, requiring
/// `0 <= gamma <= A`. For `n = N` the liquidation is mandatory and `gamma`
/// is ignored: `max(W, A) - beta * max(A - G_N, 0)`.
pub fn cash_flow(spec: &ContractSpec, state: &AccountState, gamma: f64, n: usize) -> Result<f64> {
    let last = spec.n_events();
    if n == 0 || n > last {
        return Err(EngineError::invalid(format!(
            "cash flow event index must lie in 1..={last}, got {n}"
        )));
    }
    if n == last {
        let excess = (state.guarantee - spec.contractual(last)).max(0.0);
        return Ok(state.wealth.max(state.guarantee) - spec.beta * excess);
    }
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(EngineError::invalid(format!(
            "withdrawal must be finite and >= 0, got {gamma}"
        )));
    }
    let slack = TIME_EPS * state.guarantee.max(1.0);
    if gamma > state.guarantee + slack {
        return Err(EngineError::invalid(format!(
            "withdrawal {gamma} exceeds the guarantee balance {} at event {n}",
            state.guarantee
        )));
    }
    let excess = (gamma - spec.contractual(n)).max(0.0);
    Ok(gamma - spec.beta * excess)
}

/// State immediately after a withdrawal: `A+ = A - gamma`,
/// `W+ = max(W - gamma, 0)`; time unchanged.
pub fn apply_withdrawal(state: &AccountState, gamma: f64) -> Result<AccountState> {
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(EngineError::invalid(format!(
            "withdrawal must be finite and >= 0, got {gamma}"
        )));
    }
    let slack = TIME_EPS * state.guarantee.max(1.0);
    if gamma > state.guarantee + slack {
        return Err(EngineError::invalid(format!(
            "withdrawal {gamma} exceeds the guarantee balance {}",
            state.guarantee
        )));
    }
    Ok(AccountState {
        wealth: (state.wealth - gamma).max(0.0),
        guarantee: (state.guarantee - gamma).max(0.0),
        time: state.time,
    })
}

/// Wealth evolution between event dates: the account tracks the index with
/// continuous fee drag, and the guarantee stays constant.
pub fn evolve_wealth(
    spec: &ContractSpec,
    model: &ModelParams,
    state: &AccountState,
    rf_t: &RiskFactorState,
    rf_u: &RiskFactorState,
) -> Result<AccountState> {
    if rf_t.kind != model.kind() || rf_u.kind != model.kind() {
        return Err(EngineError::invalid(
            "risk-factor states do not match the model kind".to_string(),
        ));
    }
    if (rf_t.time - state.time).abs() > TIME_EPS {
        return Err(EngineError::invalid(format!(
            "risk factor time {} does not match account time {}",
            rf_t.time, state.time
        )));
    }
    let dt = rf_u.time - rf_t.time;
    if !(dt > 0.0) {
        return Err(EngineError::invalid(format!(
            "wealth evolution requires u > t, got t={}, u={}",
            rf_t.time, rf_u.time
        )));
    }
    if rf_t.value <= 0.0 {
        return Err(EngineError::invalid(format!(
            "wealth evolution requires a positive source risk factor, got {}",
            rf_t.value
        )));
    }
    let index_ratio = match model {
        ModelParams::Bsm(_) => rf_u.value / rf_t.value,
        // S = alpha0 e^{eta t} Y / eta, so the ratio is e^{eta dt} Y_u/Y_t.
        ModelParams::Mmm(p) => (p.eta * dt).exp() * rf_u.value / rf_t.value,
    };
    Ok(AccountState {
        wealth: state.wealth * index_ratio * spec.fee_factor(dt),
        guarantee: state.guarantee,
        time: rf_u.time,
    })
}

/// Mandatory terminal liquidation at maturity: nominal
/// `gamma = max(W, A)`, net cash per the terminal penalty branch, both
/// accounts zero afterwards.
pub fn terminal_liquidation(spec: &ContractSpec, state: &AccountState) -> Result<Withdrawal> {
    if (state.time - spec.maturity()).abs() > TIME_EPS {
        return Err(EngineError::invalid(format!(
            "terminal liquidation requested at t={}, but maturity is {}",
            state.time,
            spec.maturity()
        )));
    }
    let n = spec.n_events();
    Ok(Withdrawal {
        gamma: state.wealth.max(state.guarantee),
        net_cash_flow: cash_flow(spec, state, 0.0, n)?,
        date_index: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{BsmParams, MmmParams, ModelKind};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn thirty_year() -> ContractSpec {
        ContractSpec::annual(30, 1_000_000.0, 0.1, 0.0, 0.0).unwrap()
    }

    fn state(w: f64, a: f64, t: f64) -> AccountState {
        AccountState::new(w, a, t).unwrap()
    }

    #[test]
    fn validation_catches_malformed_contracts() {
        assert!(ContractSpec::new(vec![0.0], vec![], 0.1, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(ContractSpec::new(vec![0.5, 1.0], vec![1.0], 0.1, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(ContractSpec::new(vec![0.0, 1.0, 1.0], vec![0.5; 2], 0.1, 0.0, 0.0, 1.0, 1.0)
            .is_err());
        assert!(ContractSpec::new(vec![0.0, 1.0], vec![-0.5], 0.1, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(ContractSpec::new(vec![0.0, 1.0], vec![0.5], 1.5, 0.0, 0.0, 1.0, 1.0).is_err());
        // Guarantee above wealth is rejected; below is allowed (warned).
        assert!(ContractSpec::new(vec![0.0, 1.0], vec![0.5], 0.1, 0.0, 0.0, 1.0, 2.0).is_err());
        assert!(ContractSpec::new(vec![0.0, 1.0], vec![0.5], 0.1, 0.0, 0.0, 1.0, 0.5).is_ok());
    }

    #[test]
    fn annual_contract_matches_the_standard_product() {
        let spec = thirty_year();
        assert_eq!(spec.n_events(), 30);
        assert_eq!(spec.maturity(), 30.0);
        assert_relative_eq!(spec.contractual(7), 1_000_000.0 / 30.0, max_relative = 1e-15);
        assert_eq!(spec.contractual(0), 0.0);
        assert_eq!(spec.a0, spec.w0);
    }

    #[test]
    fn cash_flow_examples() {
        let spec = thirty_year();
        let g = 1_000_000.0 / 30.0;
        let s = state(500_000.0, 400_000.0, 7.0);
        // At the contractual rate: no penalty.
        assert_relative_eq!(cash_flow(&spec, &s, g, 7).unwrap(), g, max_relative = 1e-15);
        // Above the rate: 10% of the excess is forfeited.
        let got = cash_flow(&spec, &s, 50_000.0, 7).unwrap();
        assert_relative_eq!(got, 50_000.0 - 0.1 * (50_000.0 - g), max_relative = 1e-12);
        // Terminal branch ignores gamma and penalizes guarantee excess.
        let terminal = state(2_000_000.0, 500_000.0, 30.0);
        let got = cash_flow(&spec, &terminal, 0.0, 30).unwrap();
        assert_relative_eq!(got, 2_000_000.0 - 0.1 * (500_000.0 - g), max_relative = 1e-12);
        // Withdrawing beyond the guarantee is inadmissible before maturity.
        assert!(cash_flow(&spec, &s, 400_001.0, 7).is_err());
        assert!(cash_flow(&spec, &s, g, 0).is_err());
        assert!(cash_flow(&spec, &s, g, 31).is_err());
    }

    #[test]
    fn withdrawal_jumps() {
        let a = apply_withdrawal(&state(1.0, 1.0, 3.0), 0.5).unwrap();
        assert_eq!((a.wealth, a.guarantee), (0.5, 0.5));
        // Wealth floors at zero; the guarantee absorbs the rest.
        let b = apply_withdrawal(&state(0.3, 1.0, 3.0), 0.5).unwrap();
        assert_eq!((b.wealth, b.guarantee), (0.0, 0.5));
        // Zero withdrawal is the identity.
        let c = apply_withdrawal(&state(0.3, 1.0, 3.0), 0.0).unwrap();
        assert_eq!((c.wealth, c.guarantee), (0.3, 1.0));
        assert!(apply_withdrawal(&state(0.3, 1.0, 3.0), 1.1).is_err());
    }

    #[test]
    fn wealth_evolution_applies_index_ratio_and_fee_drag() {
        let spec = ContractSpec::new(vec![0.0, 1.0], vec![0.5], 0.1, 0.005, 0.005, 1.0, 1.0)
            .unwrap();
        let model = ModelParams::Bsm(BsmParams::new(0.2).unwrap());
        let s = state(1.0, 1.0, 0.0);
        let rf0 = RiskFactorState::new(ModelKind::Bsm, 1.0, 0.0).unwrap();
        let rf1 = RiskFactorState::new(ModelKind::Bsm, 1.10, 1.0).unwrap();
        let out = evolve_wealth(&spec, &model, &s, &rf0, &rf1).unwrap();
        assert_relative_eq!(out.wealth, 1.10 * (-0.01f64).exp(), max_relative = 1e-15);
        assert_eq!(out.guarantee, 1.0);
        assert_eq!(out.time, 1.0);
        // W = 0 is absorbing.
        let zero = evolve_wealth(&spec, &model, &state(0.0, 1.0, 0.0), &rf0, &rf1).unwrap();
        assert_eq!(zero.wealth, 0.0);
    }

    #[test]
    fn mmm_wealth_evolution_uses_the_trend_adjusted_ratio() {
        let spec = ContractSpec::annual(1, 1.0, 0.1, 0.0, 0.0).unwrap();
        let model = ModelParams::Mmm(MmmParams::new(2.857, 0.05).unwrap());
        let s = state(1.0, 1.0, 0.0);
        let rf0 = RiskFactorState::new(ModelKind::Mmm, 0.5, 0.0).unwrap();
        let rf1 = RiskFactorState::new(ModelKind::Mmm, 0.5, 1.0).unwrap();
        // Y unchanged: the index still grew by the trend factor e^{eta}.
        let out = evolve_wealth(&spec, &model, &s, &rf0, &rf1).unwrap();
        assert_relative_eq!(out.wealth, (0.05f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn evolution_is_multiplicative_over_subintervals() {
        let spec = ContractSpec::new(vec![0.0, 2.0], vec![0.5], 0.1, 0.004, 0.006, 1.0, 1.0)
            .unwrap();
        let model = ModelParams::Bsm(BsmParams::new(0.2).unwrap());
        let s = state(0.8, 1.0, 0.0);
        let rf = |v: f64, t: f64| RiskFactorState::new(ModelKind::Bsm, v, t).unwrap();
        let direct = evolve_wealth(&spec, &model, &s, &rf(1.0, 0.0), &rf(1.3, 2.0)).unwrap();
        let mid = evolve_wealth(&spec, &model, &s, &rf(1.0, 0.0), &rf(0.9, 0.7)).unwrap();
        let composed = evolve_wealth(&spec, &model, &mid, &rf(0.9, 0.7), &rf(1.3, 2.0)).unwrap();
        assert_relative_eq!(direct.wealth, composed.wealth, max_relative = 1e-14);
    }

    #[test]
    fn terminal_liquidation_examples() {
        let spec = thirty_year();
        let g = 1_000_000.0 / 30.0;
        let w = terminal_liquidation(&spec, &state(0.0, 0.0, 30.0)).unwrap();
        assert_eq!(w.net_cash_flow, 0.0);
        assert_eq!(w.gamma, 0.0);
        let w = terminal_liquidation(&spec, &state(1_500_000.0, 200_000.0, 30.0)).unwrap();
        assert_relative_eq!(
            w.net_cash_flow,
            1_500_000.0 - 0.1 * (200_000.0 - g),
            max_relative = 1e-12
        );
        let w = terminal_liquidation(&spec, &state(0.0, 1_000_000.0, 30.0)).unwrap();
        assert_relative_eq!(
            w.net_cash_flow,
            1_000_000.0 - 0.1 * (1_000_000.0 - g),
            max_relative = 1e-12
        );
        assert_eq!(w.gamma, 1_000_000.0);
        // Asking before maturity is a sequencing error.
        assert!(terminal_liquidation(&spec, &state(1.0, 1.0, 29.0)).is_err());
    }

    proptest! {
        #[test]
        fn accounts_never_go_negative(
            w in 0.0f64..2.0,
            a in 0.0f64..2.0,
            frac in 0.0f64..1.0,
        ) {
            let s = state(w, a, 1.0);
            let gamma = frac * a;
            let after = apply_withdrawal(&s, gamma).unwrap();
            prop_assert!(after.wealth >= 0.0);
            prop_assert!(after.guarantee >= -1e-15);
        }

        #[test]
        fn cash_flow_is_piecewise_linear_with_slope_one_then_one_minus_beta(
            gamma in 0.0f64..400_000.0,
        ) {
            let spec = thirty_year();
            let s = state(1.0, 500_000.0, 7.0);
            let g = spec.contractual(7);
            let c = cash_flow(&spec, &s, gamma, 7).unwrap();
            let expect = if gamma <= g { gamma } else { gamma - 0.1 * (gamma - g) };
            prop_assert!((c - expect).abs() < 1e-9);
        }

        #[test]
        fn zero_penalty_is_the_identity_below_maturity(gamma in 0.0f64..1.0) {
            let spec = ContractSpec::new(
                vec![0.0, 1.0, 2.0], vec![0.25, 0.25], 0.0, 0.0, 0.0, 1.0, 1.0,
            ).unwrap();
            let s = state(1.0, 1.0, 1.0);
            prop_assert!((cash_flow(&spec, &s, gamma, 1).unwrap() - gamma).abs() < 1e-15);
        }
    }
}
