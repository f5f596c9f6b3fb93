//! Self-financing delta-hedged reserve account along a realized index path.
//!
//! The provider prices the contract once, keeps the value grids, and then
//! runs a reserve account: it starts at the inception value, holds
//! `delta` index units between observation dates, pays the realized net
//! cash flow at every event date, and re-marks the hedge against the
//! remaining liability. Because every quantity is expressed in
//! savings-account-discounted units, the non-index leg of the portfolio is
//! flat and the account obeys the exact self-financing recursion
//!
//! ```text
//! reserve(t_{k+1}) = reserve(t_k) + units(t_k) * (S(t_{k+1}) - S(t_k)) - paid(t_{k+1})
//! ```
//!
//! The terminal residual — what is left after the final liquidation
//! payment — is the hedging surplus or deficit and is a result, not an
//! error: a provider hedging under the wrong model produces exactly the
//! deficits this simulator is built to expose.
//!
//! Deltas are central differences of the marked value under a relative
//! index bump: the bump multiplies the index by `1 ± eps` and propagates
//! to everything that co-moves with the index over an instant — the wealth
//! account (a fixed number of fee-decayed index units between events) and,
//! under the benchmark model, the normalized index level itself
//! (`Y ∝ S` at fixed time). The guarantee account is unaffected.

use chrono::{Duration, NaiveDate};

use crate::contract::{ContractSpec, Withdrawal};
use crate::market::ModelParams;
use crate::pricer::{
    continuation_value, interpolate_value, BsmMeasure, GridSide, GridSpec, ValueGrid,
};
use crate::series::{year_fraction, PriceSeries, DAYS_PER_YEAR};
use crate::{EngineError, Result};

/// Relative index bump for central-difference deltas. Large enough that
/// interpolation roundoff does not pollute the quotient, small enough that
/// the bumped states stay inside one interpolation cell at typical grid
/// resolutions.
pub const DELTA_BUMP: f64 = 1e-4;

/// Maximum gap tolerated between a contract event and the nearest
/// observation date when aligning a calendar series, in years. Monthly
/// data sits within two weeks of any anniversary; a larger gap means the
/// series does not actually cover the event.
const EVENT_ALIGNMENT_SLACK: f64 = 0.5;

/// A realized index path aligned to a contract's event clock.
///
/// `times` live on the contract clock (years since inception, actual
/// calendar proportions between events, with every event date landing
/// exactly on its contractual time). `index` holds discounted index
/// levels. `event_rows[n]` is the row of event `n`; row 0 is inception and
/// the last row is maturity.
#[derive(Debug, Clone)]
pub struct RealizedPath {
    pub dates: Vec<NaiveDate>,
    pub times: Vec<f64>,
    pub index: Vec<f64>,
    pub event_rows: Vec<usize>,
}

impl RealizedPath {
    /// Align a calendar series to a contract: inception at the first
    /// observation, each event anniversary mapped to the nearest
    /// observation date, intermediate observations placed on the contract
    /// clock in calendar proportion between the surrounding events, and
    /// the path truncated at the maturity row.
    pub fn from_series(series: &PriceSeries, contract: &ContractSpec) -> Result<Self> {
        let obs = series.observations();
        if obs.len() < 2 {
            return Err(EngineError::data(format!(
                "a realized path needs at least 2 observations, got {}",
                obs.len()
            )));
        }
        let start = obs[0].0;
        let n = contract.n_events();
        let mut event_rows = vec![0usize];
        for event in 1..=n {
            let t = contract.event_time(event);
            let target = start + Duration::days((t * DAYS_PER_YEAR).round() as i64);
            let row = series.nearest_index(target).expect("nonempty series");
            let gap = (year_fraction(start, obs[row].0) - t).abs();
            if gap > EVENT_ALIGNMENT_SLACK {
                return Err(EngineError::data(format!(
                    "series does not cover event {event} at t={t}: nearest observation \
                     {} is {gap:.2} years away",
                    obs[row].0
                )));
            }
            if row <= event_rows[event - 1] {
                return Err(EngineError::data(format!(
                    "events {} and {event} land on the same or out-of-order observation \
                     rows ({} and {row}); the series is too coarse for this contract",
                    event - 1,
                    event_rows[event - 1]
                )));
            }
            event_rows.push(row);
        }

        let last = event_rows[n];
        let mut dates = Vec::with_capacity(last + 1);
        let mut index = Vec::with_capacity(last + 1);
        for (d, level) in &obs[..=last] {
            dates.push(*d);
            index.push(*level);
        }
        // Piecewise-affine contract clock: event rows land exactly on the
        // contractual event times; rows between interpolate by calendar
        // proportion.
        let mut times = vec![0.0; last + 1];
        for event in 1..=n {
            let (r0, r1) = (event_rows[event - 1], event_rows[event]);
            let (t0, t1) = (
                contract.event_time(event - 1),
                contract.event_time(event),
            );
            let span = (dates[r1] - dates[r0]).num_days() as f64;
            for k in r0..=r1 {
                let frac = (dates[k] - dates[r0]).num_days() as f64 / span;
                times[k] = t0 + (t1 - t0) * frac;
            }
            times[r1] = t1;
        }
        Self::validated(dates, times, index, event_rows)
    }

    /// Build a path directly from contract-clock times (simulated paths,
    /// tests). Every contract event time must appear among `times` (within
    /// 1e-9) and the last time must be maturity. Dates are synthesized as
    /// labels only — all arithmetic runs on `times`.
    pub fn synthetic(times: Vec<f64>, index: Vec<f64>, contract: &ContractSpec) -> Result<Self> {
        if times.first().map_or(true, |t| t.abs() > 1e-12) {
            return Err(EngineError::invalid(
                "a synthetic path must start at time 0".to_string(),
            ));
        }
        let mut event_rows = Vec::with_capacity(contract.n_events() + 1);
        for event in 0..=contract.n_events() {
            let t = contract.event_time(event);
            let row = times
                .iter()
                .position(|&u| (u - t).abs() <= 1e-9)
                .ok_or_else(|| {
                    EngineError::invalid(format!(
                        "synthetic path has no row at event {event} (t={t})"
                    ))
                })?;
            event_rows.push(row);
        }
        let origin = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid origin");
        let dates = times
            .iter()
            .map(|&t| origin + Duration::days((t * DAYS_PER_YEAR).round() as i64))
            .collect();
        Self::validated(dates, times, index, event_rows)
    }

    fn validated(
        dates: Vec<NaiveDate>,
        times: Vec<f64>,
        index: Vec<f64>,
        event_rows: Vec<usize>,
    ) -> Result<Self> {
        if dates.len() != times.len() || times.len() != index.len() {
            return Err(EngineError::invalid(format!(
                "path columns disagree in length: {} dates, {} times, {} levels",
                dates.len(),
                times.len(),
                index.len()
            )));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EngineError::invalid(
                "path times must be strictly increasing".to_string(),
            ));
        }
        if index.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(EngineError::invalid(
                "path index levels must be positive and finite".to_string(),
            ));
        }
        if event_rows.last() != Some(&(times.len() - 1)) {
            return Err(EngineError::invalid(
                "the last path row must be the maturity event".to_string(),
            ));
        }
        Ok(Self {
            dates,
            times,
            index,
            event_rows,
        })
    }

    /// The provider-model risk factor implied by the index level at `row`:
    /// the Black-Scholes value surface does not depend on the level (a
    /// placeholder 1 is returned), while the benchmark model's normalized
    /// level is `Y = eta * S * e^{-eta t} / alpha0`. The model parameters
    /// must be expressed on this path's clock and index scale.
    pub fn risk_factor(&self, model: &ModelParams, row: usize) -> f64 {
        match model {
            ModelParams::Bsm(_) => 1.0,
            ModelParams::Mmm(p) => {
                p.eta * self.index[row] * (-p.eta * self.times[row]).exp() / p.alpha0
            }
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Dated record of one reserve-account run. All columns are per path row;
/// `cash_flows_paid[k]` is nonzero only on event rows.
#[derive(Debug, Clone)]
pub struct ReserveLedger {
    pub dates: Vec<NaiveDate>,
    pub times: Vec<f64>,
    pub index: Vec<f64>,
    /// Account value after the row's payment and rebalance.
    pub reserve: Vec<f64>,
    /// Index units held from this row to the next (zero on the last).
    pub units: Vec<f64>,
    /// Savings-account position: `reserve - units * index`.
    pub cash: Vec<f64>,
    pub cash_flows_paid: Vec<f64>,
    /// Reserve value after the final liquidation payment: the hedging
    /// surplus (positive) or deficit (negative).
    pub terminal_residual: f64,
}

impl ReserveLedger {
    /// Write the ledger as CSV with header
    /// `date,index,reserve,units,cash,cash_flow_paid`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "date,index,reserve,units,cash,cash_flow_paid")?;
        for k in 0..self.dates.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.dates[k],
                self.index[k],
                self.reserve[k],
                self.units[k],
                self.cash[k],
                self.cash_flows_paid[k]
            )?;
        }
        Ok(())
    }
}

/// Index units to hold against the liability marked on `next_pre`:
/// the central difference
/// `(V(bumped up) - V(bumped down)) / (2 * eps * index_level)` where the
/// bump multiplies the index by `1 ± eps` and propagates to the wealth
/// account and (for the benchmark model) the normalized index level.
/// States outside the grid are clamped by interpolation, with a warning.
#[allow(clippy::too_many_arguments)]
pub fn compute_delta(
    model: &ModelParams,
    contract: &ContractSpec,
    spec: &GridSpec,
    next_pre: &ValueGrid,
    time_now: f64,
    index_level: f64,
    rf: f64,
    wealth: f64,
    guarantee: f64,
    measure: BsmMeasure,
) -> Result<f64> {
    if !(index_level > 0.0) || !index_level.is_finite() {
        return Err(EngineError::invalid(format!(
            "index level must be positive and finite, got {index_level}"
        )));
    }
    let rf_lo = *spec.risk_factor_nodes.first().expect("validated axis");
    let rf_hi = *spec.risk_factor_nodes.last().expect("validated axis");
    let multi_rf = spec.risk_factor_nodes.len() > 1;
    let clamped_rf = multi_rf && (rf * (1.0 - DELTA_BUMP) < rf_lo || rf * (1.0 + DELTA_BUMP) > rf_hi);
    let clamped_w = wealth * (1.0 + DELTA_BUMP) > *spec.wealth_nodes.last().expect("validated axis");
    let clamped_a = guarantee > *spec.guarantee_nodes.last().expect("validated axis");
    if clamped_rf || clamped_w || clamped_a {
        log::warn!(
            "delta at t={time_now} state (rf {rf}, wealth {wealth}, guarantee {guarantee}) \
             reaches outside the grid; interpolation clamps to the boundary"
        );
    }
    let mut bumped = [0.0; 2];
    for (slot, sign) in bumped.iter_mut().zip([1.0, -1.0]) {
        let factor = 1.0 + sign * DELTA_BUMP;
        *slot = continuation_value(
            model,
            contract,
            spec,
            next_pre,
            time_now,
            rf * factor,
            wealth * factor,
            guarantee,
            measure,
        )?;
    }
    Ok((bumped[0] - bumped[1]) / (2.0 * DELTA_BUMP * index_level))
}

/// Run the provider's reserve account along a realized path.
///
/// `grids` are the provider's pre-withdrawal value grids for events
/// `0..=N` (a pricing run with grids kept). `withdrawals` is the realized
/// policyholder behavior, one entry per event `1..=N`, the last being the
/// terminal liquidation; the provider pays these regardless of whether its
/// own model considers them optimal, while every delta comes from its own
/// grids.
///
/// The account starts at the marked inception value, rebalances at every
/// path row, and on event rows first absorbs the index move, then pays the
/// realized net cash flow, then re-marks the hedge against the
/// post-withdrawal state. The reserve may go negative; deficits are
/// reported, never raised.
pub fn run_reserve(
    model: &ModelParams,
    contract: &ContractSpec,
    spec: &GridSpec,
    grids: &[ValueGrid],
    path: &RealizedPath,
    withdrawals: &[Withdrawal],
    measure: BsmMeasure,
) -> Result<ReserveLedger> {
    let n = contract.n_events();
    if grids.len() != n + 1 {
        return Err(EngineError::invalid(format!(
            "expected {} value grids (events 0..={n}), got {}",
            n + 1,
            grids.len()
        )));
    }
    for (d, grid) in grids.iter().enumerate() {
        if grid.date_index != d || grid.side != GridSide::Pre {
            return Err(EngineError::invalid(format!(
                "grid {d} is not the pre-withdrawal grid of event {d}"
            )));
        }
    }
    if withdrawals.len() != n {
        return Err(EngineError::invalid(format!(
            "expected {n} realized withdrawals (events 1..={n}), got {}",
            withdrawals.len()
        )));
    }
    for (i, wd) in withdrawals.iter().enumerate() {
        if wd.date_index != i + 1 {
            return Err(EngineError::invalid(format!(
                "withdrawal {} carries date index {}, expected {}",
                i,
                wd.date_index,
                i + 1
            )));
        }
        if !wd.gamma.is_finite() || wd.gamma < 0.0 || !wd.net_cash_flow.is_finite() {
            return Err(EngineError::invalid(format!(
                "withdrawal {} is not a valid realized event (gamma {}, cash {})",
                i, wd.gamma, wd.net_cash_flow
            )));
        }
    }
    if path.event_rows.len() != n + 1 {
        return Err(EngineError::invalid(format!(
            "path aligns {} events, contract has {n}",
            path.event_rows.len() - 1
        )));
    }
    for event in 0..=n {
        let row = path.event_rows[event];
        if (path.times[row] - contract.event_time(event)).abs() > 1e-9 {
            return Err(EngineError::invalid(format!(
                "path event row {event} sits at t={}, contract event at t={}",
                path.times[row],
                contract.event_time(event)
            )));
        }
    }

    let m = path.len();
    let slack = 1e-9 * contract.a0.max(1.0);
    let mut wealth = contract.w0;
    let mut guarantee = contract.a0;
    let mut reserve = interpolate_value(
        spec,
        &grids[0],
        path.risk_factor(model, 0),
        wealth,
        guarantee,
    );
    let mut next_event = 1usize;

    let mut ledger = ReserveLedger {
        dates: path.dates.clone(),
        times: path.times.clone(),
        index: path.index.clone(),
        reserve: Vec::with_capacity(m),
        units: Vec::with_capacity(m),
        cash: Vec::with_capacity(m),
        cash_flows_paid: vec![0.0; m],
        terminal_residual: 0.0,
    };

    for k in 0..m {
        if k > 0 {
            let units_prev = *ledger.units.last().expect("previous row exists");
            reserve += units_prev * (path.index[k] - path.index[k - 1]);
            let dt = path.times[k] - path.times[k - 1];
            wealth *= path.index[k] / path.index[k - 1] * contract.fee_factor(dt);
        }
        let at_maturity = k == path.event_rows[n];
        if k == path.event_rows[next_event] {
            let wd = &withdrawals[next_event - 1];
            reserve -= wd.net_cash_flow;
            ledger.cash_flows_paid[k] = wd.net_cash_flow;
            if !at_maturity {
                if wd.gamma > guarantee + slack {
                    return Err(EngineError::invalid(format!(
                        "realized withdrawal {} at event {next_event} exceeds the \
                         remaining guarantee {guarantee}",
                        wd.gamma
                    )));
                }
                wealth = (wealth - wd.gamma).max(0.0);
                guarantee = (guarantee - wd.gamma).max(0.0);
                next_event += 1;
            }
        }
        let units = if at_maturity {
            0.0
        } else {
            compute_delta(
                model,
                contract,
                spec,
                &grids[next_event],
                path.times[k],
                path.index[k],
                path.risk_factor(model, k),
                wealth,
                guarantee,
                measure,
            )?
        };
        ledger.reserve.push(reserve);
        ledger.units.push(units);
        ledger.cash.push(reserve - units * path.index[k]);
    }
    ledger.terminal_residual = reserve;
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::{terminal_liquidation, AccountState};
    use crate::market::{simulate_paths, BsmParams, MmmParams, RiskFactorState};
    use crate::pricer::{optimal_withdrawal_at, price_with_options, PricingOptions, Strategy};
    use approx::assert_relative_eq;

    fn bsm(sigma: f64) -> ModelParams {
        ModelParams::Bsm(BsmParams::new(sigma).unwrap())
    }

    fn mmm(eta: f64) -> ModelParams {
        ModelParams::Mmm(MmmParams::new(2.857, eta).unwrap())
    }

    struct Fixture {
        contract: ContractSpec,
        spec: GridSpec,
        model: ModelParams,
        rf0: f64,
        v0: f64,
        grids: Vec<ValueGrid>,
    }

    fn fixture(
        cell: &'static std::sync::OnceLock<Fixture>,
        model: ModelParams,
        fee: f64,
        rf0: f64,
    ) -> &'static Fixture {
        cell.get_or_init(|| {
            let contract = ContractSpec::annual(2, 1.0, 0.1, fee, 0.0).unwrap();
            let spec = GridSpec::default_for(model.kind(), &contract);
            let (v0, grids) = grids_for(&model, &contract, &spec, rf0);
            Fixture {
                contract,
                spec,
                model,
                rf0,
                v0,
                grids,
            }
        })
    }

    /// Two-year 10%-penalty contract under Black-Scholes, no fees.
    fn shared_bsm() -> &'static Fixture {
        static CELL: std::sync::OnceLock<Fixture> = std::sync::OnceLock::new();
        fixture(&CELL, bsm(0.2), 0.0, 1.0)
    }

    /// Two-year 10%-penalty contract under the benchmark model, 1% fees.
    fn shared_mmm() -> &'static Fixture {
        static CELL: std::sync::OnceLock<Fixture> = std::sync::OnceLock::new();
        fixture(&CELL, mmm(0.0435), 0.01, 0.9)
    }

    fn grids_for(
        model: &ModelParams,
        contract: &ContractSpec,
        spec: &GridSpec,
        rf0: f64,
    ) -> (f64, Vec<ValueGrid>) {
        let out = price_with_options(
            model,
            contract,
            spec,
            &Strategy::Dynamic,
            rf0,
            PricingOptions {
                keep_grids: true,
                keep_policy: false,
                ..PricingOptions::default()
            },
        )
        .unwrap();
        (out.v0, out.grids)
    }

    /// Contract whose payoff is exactly the wealth account (no guarantee),
    /// with a single-node guarantee axis.
    fn pure_wealth_setup(
        kind: crate::market::ModelKind,
        n_years: usize,
        fee: f64,
    ) -> (ContractSpec, GridSpec) {
        let times: Vec<f64> = (0..=n_years).map(|k| k as f64).collect();
        let contract =
            ContractSpec::new(times, vec![0.1; n_years], 0.3, fee, 0.0, 1.0, 0.0).unwrap();
        let proxy = ContractSpec::annual(n_years, 1.0, 0.3, fee, 0.0).unwrap();
        let mut spec = GridSpec::default_for(kind, &proxy);
        spec.guarantee_nodes = vec![0.0];
        (contract, spec)
    }

    #[test]
    fn index_insensitive_states_have_zero_delta() {
        // Under Black-Scholes the value surface depends on the index only
        // through the wealth account, so a broke account has no exposure.
        let fx = shared_bsm();
        let delta = compute_delta(
            &fx.model,
            &fx.contract,
            &fx.spec,
            &fx.grids[1],
            0.5,
            1.0,
            1.0,
            0.0,
            fx.contract.a0,
            BsmMeasure::default(),
        )
        .unwrap();
        assert_eq!(delta, 0.0);
    }

    #[test]
    fn pure_wealth_exposure_is_one_index_unit_per_unit_wealth() {
        // With no guarantee and no fees the marked value is the wealth
        // account itself, so the hedge holds exactly W/S index units.
        for (model, rf0, tol) in [
            (bsm(0.25), 1.0, 1e-10),
            // The benchmark-model quadrature carries ~1e-6 mass error.
            (mmm(0.0435), 1.0, 1e-5),
        ] {
            let (contract, spec) = pure_wealth_setup(model.kind(), 2, 0.0);
            let (_, grids) = grids_for(&model, &contract, &spec, rf0);
            let (s, w) = (1.37, 0.83);
            let delta = compute_delta(
                &model,
                &contract,
                &spec,
                &grids[1],
                0.25,
                s,
                rf0,
                w,
                0.0,
                BsmMeasure::default(),
            )
            .unwrap();
            assert_relative_eq!(delta, w / s, max_relative = tol);
        }
    }

    #[test]
    fn central_difference_agrees_with_a_higher_order_stencil() {
        // The four-point stencil has a smaller truncation error; agreement
        // validates the bump propagation and the step size.
        let value_at = |model: &ModelParams,
                        contract: &ContractSpec,
                        spec: &GridSpec,
                        grid: &ValueGrid,
                        t: f64,
                        rf: f64,
                        w: f64,
                        a: f64,
                        factor: f64| {
            continuation_value(
                model,
                contract,
                spec,
                grid,
                t,
                rf * factor,
                w * factor,
                a,
                BsmMeasure::default(),
            )
            .unwrap()
        };
        for fx in [shared_bsm(), shared_mmm()] {
            let (t, s, w, a) = (0.4, 1.21, 0.87, 0.63);
            let central = compute_delta(
                &fx.model,
                &fx.contract,
                &fx.spec,
                &fx.grids[1],
                t,
                s,
                fx.rf0,
                w,
                a,
                BsmMeasure::default(),
            )
            .unwrap();
            let e = DELTA_BUMP;
            let v =
                |f: f64| value_at(&fx.model, &fx.contract, &fx.spec, &fx.grids[1], t, fx.rf0, w, a, f);
            let four_point = (-v(1.0 + 2.0 * e) + 8.0 * v(1.0 + e) - 8.0 * v(1.0 - e)
                + v(1.0 - 2.0 * e))
                / (12.0 * e * s);
            assert_relative_eq!(central, four_point, max_relative = 1e-4);
        }
    }

    #[test]
    fn flat_path_with_zero_withdrawals_keeps_the_reserve_at_inception() {
        let fx = shared_bsm();
        let contract = &fx.contract;

        let times: Vec<f64> = (0..=24).map(|k| k as f64 / 12.0).collect();
        let index = vec![1.0; 25];
        let path = RealizedPath::synthetic(times, index, contract).unwrap();
        // Flat index, no fees: wealth stays at W0 through maturity.
        let terminal = terminal_liquidation(
            contract,
            &AccountState::new(contract.w0, contract.a0, 2.0).unwrap(),
        )
        .unwrap();
        let withdrawals = vec![
            Withdrawal {
                gamma: 0.0,
                net_cash_flow: 0.0,
                date_index: 1,
            },
            terminal,
        ];
        let ledger = run_reserve(
            &fx.model,
            contract,
            &fx.spec,
            &fx.grids,
            &path,
            &withdrawals,
            BsmMeasure::default(),
        )
        .unwrap();
        assert_relative_eq!(ledger.reserve[0], fx.v0, max_relative = 1e-12);
        // No index moves and no interior payments: the reserve is frozen.
        for k in 0..24 {
            assert_eq!(ledger.reserve[k], ledger.reserve[0]);
            assert_eq!(ledger.cash_flows_paid[k], if k == 12 { 0.0 } else { 0.0 });
        }
        assert_eq!(ledger.units[24], 0.0);
        assert_relative_eq!(
            ledger.terminal_residual,
            fx.v0 - terminal.net_cash_flow,
            max_relative = 1e-12
        );
    }

    #[test]
    fn replicable_payoff_leaves_no_residual() {
        // With no guarantee the liability is the wealth account — a fixed
        // number of index units — so discrete delta hedging replicates it
        // exactly along any path, whatever the rebalancing dates.
        let wiggle = [
            1.0, 1.08, 0.97, 1.15, 1.31, 1.22, 1.05, 0.91, 1.02, 1.18, 1.27, 1.33, 1.41,
        ];
        for (model, tol) in [(bsm(0.2), 1e-9), (mmm(0.0435), 1e-4)] {
            let (contract, spec) = pure_wealth_setup(model.kind(), 1, 0.0);
            let rf0 = 1.0;
            let (v0, grids) = grids_for(&model, &contract, &spec, rf0);
            let times: Vec<f64> = (0..=12).map(|k| k as f64 / 12.0).collect();
            // Index levels consistent with the model's risk-factor clock.
            let index: Vec<f64> = match &model {
                ModelParams::Bsm(_) => wiggle.to_vec(),
                ModelParams::Mmm(p) => wiggle
                    .iter()
                    .zip(&times)
                    .map(|(y, t)| p.alpha0 * (p.eta * t).exp() * y / p.eta)
                    .collect(),
            };
            let path = RealizedPath::synthetic(times, index, &contract).unwrap();
            let mut wealth = contract.w0;
            for k in 1..path.len() {
                wealth *= path.index[k] / path.index[k - 1];
            }
            let terminal =
                terminal_liquidation(&contract, &AccountState::new(wealth, 0.0, 1.0).unwrap())
                    .unwrap();
            let ledger = run_reserve(
                &model,
                &contract,
                &spec,
                &grids,
                &path,
                &[terminal],
                BsmMeasure::default(),
            )
            .unwrap();
            assert_relative_eq!(ledger.reserve[0], v0, max_relative = 1e-12);
            assert!(
                ledger.terminal_residual.abs() <= tol * contract.w0,
                "residual {} exceeds {tol} under {:?}",
                ledger.terminal_residual,
                model.kind()
            );
        }
    }

    #[test]
    fn ledger_satisfies_the_self_financing_identity() {
        let fx = shared_mmm();
        let contract = &fx.contract;

        // A meandering benchmark-model path on a quarterly clock.
        let times: Vec<f64> = (0..=8).map(|k| k as f64 / 4.0).collect();
        let y = [0.9, 1.05, 0.83, 0.95, 1.12, 1.30, 1.21, 1.02, 1.26];
        let ModelParams::Mmm(p) = &fx.model else { unreachable!() };
        let index: Vec<f64> = y
            .iter()
            .zip(&times)
            .map(|(y, t)| p.alpha0 * (p.eta * t).exp() * y / p.eta)
            .collect();
        let path = RealizedPath::synthetic(times, index, contract).unwrap();

        // Realized behavior: withdraw the contractual amount at event 1.
        let gamma = contract.contractual(1);
        let mut wealth = contract.w0;
        for k in 1..=4 {
            wealth *= path.index[k] / path.index[k - 1]
                * contract.fee_factor(path.times[k] - path.times[k - 1]);
        }
        let w1 = (wealth - gamma).max(0.0);
        let mut w2 = w1;
        for k in 5..=8 {
            w2 *= path.index[k] / path.index[k - 1]
                * contract.fee_factor(path.times[k] - path.times[k - 1]);
        }
        let terminal = terminal_liquidation(
            contract,
            &AccountState::new(w2, contract.a0 - gamma, 2.0).unwrap(),
        )
        .unwrap();
        let withdrawals = vec![
            Withdrawal {
                gamma,
                net_cash_flow: gamma,
                date_index: 1,
            },
            terminal,
        ];
        let ledger = run_reserve(
            &fx.model,
            contract,
            &fx.spec,
            &fx.grids,
            &path,
            &withdrawals,
            BsmMeasure::default(),
        )
        .unwrap();

        assert_relative_eq!(ledger.reserve[0], fx.v0, max_relative = 1e-12);
        let tol = 1e-12 * fx.v0.abs().max(1.0);
        for k in 1..ledger.reserve.len() {
            let replayed = ledger.reserve[k - 1]
                + ledger.units[k - 1] * (ledger.index[k] - ledger.index[k - 1])
                - ledger.cash_flows_paid[k];
            assert!(
                (ledger.reserve[k] - replayed).abs() <= tol,
                "self-financing breaks at row {k}: {} vs {replayed}",
                ledger.reserve[k]
            );
        }
        for k in 0..ledger.reserve.len() {
            assert_eq!(
                ledger.cash[k],
                ledger.reserve[k] - ledger.units[k] * ledger.index[k]
            );
        }
        assert_eq!(ledger.cash_flows_paid[4], gamma);
        assert_eq!(
            ledger.cash_flows_paid[8],
            withdrawals[1].net_cash_flow
        );
        assert_eq!(ledger.terminal_residual, *ledger.reserve.last().unwrap());
    }

    #[test]
    fn ledger_round_trips_through_csv_headers() {
        let contract = ContractSpec::annual(1, 1.0, 0.1, 0.0, 0.0).unwrap();
        let model = bsm(0.2);
        let spec = GridSpec::default_for(model.kind(), &contract);
        let (_, grids) = grids_for(&model, &contract, &spec, 1.0);
        let times = vec![0.0, 0.5, 1.0];
        let index = vec![1.0, 1.1, 1.05];
        let path = RealizedPath::synthetic(times, index, &contract).unwrap();
        let wealth = contract.w0 * 1.05;
        let terminal =
            terminal_liquidation(&contract, &AccountState::new(wealth, 1.0, 1.0).unwrap())
                .unwrap();
        let ledger = run_reserve(
            &model,
            &contract,
            &spec,
            &grids,
            &path,
            &[terminal],
            BsmMeasure::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        ledger.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "date,index,reserve,units,cash,cash_flow_paid"
        );
        assert_eq!(lines.count(), 3);
        assert!(text.contains("2000-01-01"));
    }

    #[test]
    fn reserve_runs_reject_malformed_inputs() {
        let fx = shared_bsm();
        let (contract, model, spec, grids) = (&fx.contract, &fx.model, &fx.spec, &fx.grids);
        let times: Vec<f64> = (0..=8).map(|k| k as f64 / 4.0).collect();
        let path = RealizedPath::synthetic(times, vec![1.0; 9], contract).unwrap();
        let terminal =
            terminal_liquidation(contract, &AccountState::new(1.0, 1.0, 2.0).unwrap()).unwrap();
        let ok = |gamma: f64| {
            vec![
                Withdrawal {
                    gamma,
                    net_cash_flow: gamma,
                    date_index: 1,
                },
                terminal,
            ]
        };
        let m = BsmMeasure::default();
        // Too few grids.
        assert!(run_reserve(model, contract, spec, &grids[..2], &path, &ok(0.5), m).is_err());
        // Wrong withdrawal count.
        assert!(run_reserve(model, contract, spec, grids, &path, &ok(0.5)[..1], m).is_err());
        // Over-withdrawal beyond the remaining guarantee.
        assert!(run_reserve(model, contract, spec, grids, &path, &ok(1.5), m).is_err());
        // Wrong event alignment: a path that never reaches maturity.
        assert!(RealizedPath::synthetic(
            (0..=4).map(|k| k as f64 / 4.0).collect(),
            vec![1.0; 5],
            contract
        )
        .is_err());
        // A valid run for contrast.
        assert!(run_reserve(model, contract, spec, grids, &path, &ok(0.5), m).is_ok());
    }

    #[test]
    fn calendar_series_aligns_events_to_nearest_observations() {
        let meta = crate::series::SeriesMetadata {
            source: "test".into(),
            discounting: "prediscounted".into(),
        };
        let d = |y: i32, m: u32| NaiveDate::from_ymd_opt(y, m, 1).unwrap();
        let mut obs = Vec::new();
        let mut level = 1.0;
        for k in 0..25 {
            let (y, m) = (1988 + (1 + k as u32) / 12, (1 + k as u32) % 12 + 1);
            level *= 1.004;
            obs.push((d(y as i32, m), level));
        }
        let series = PriceSeries::new(obs, meta).unwrap();
        let contract = ContractSpec::annual(2, 1.0, 0.1, 0.0, 0.0).unwrap();
        let path = RealizedPath::from_series(&series, &contract).unwrap();
        assert_eq!(path.event_rows, vec![0, 12, 24]);
        assert_eq!(path.len(), 25);
        assert_eq!(path.times[0], 0.0);
        assert_eq!(path.times[12], 1.0);
        assert_eq!(path.times[24], 2.0);
        // Between events the clock runs in calendar proportion.
        assert!(path.times[6] > 0.0 && path.times[6] < 1.0);
        let feb_to_aug = (d(1988, 8) - d(1988, 2)).num_days() as f64;
        let feb_to_feb = (d(1989, 2) - d(1988, 2)).num_days() as f64;
        assert_relative_eq!(path.times[6], feb_to_aug / feb_to_feb, max_relative = 1e-12);

        // A series too short for the contract is refused.
        let short = series.window(d(1988, 2), d(1989, 1)).unwrap();
        assert!(RealizedPath::from_series(&short, &contract).is_err());
        // A series too coarse to separate events is refused.
        let annual_only = ContractSpec::new(
            vec![0.0, 0.02, 0.04],
            vec![0.1, 0.1],
            0.1,
            0.0,
            0.0,
            1.0,
            1.0,
        )
        .unwrap();
        assert!(RealizedPath::from_series(&series, &annual_only).is_err());
    }

    #[test]
    fn hedging_error_shrinks_with_rebalancing_frequency() {
        // On paths simulated from the provider's own model, with the
        // policyholder following the provider-assumed optimal policy, the
        // terminal residual is pure discretization error and must shrink
        // as rebalancing accelerates: monthly -> every 6 trading days ->
        // daily, compared by median absolute residual over 200 paths.
        let fx = shared_bsm();
        let (contract, model, spec, grids) = (&fx.contract, &fx.model, &fx.spec, &fx.grids);
        let measure = BsmMeasure::default();

        let daily: Vec<f64> = (1..=504).map(|k| k as f64 / 252.0).collect();
        let initial = RiskFactorState::new(model.kind(), 1.0, 0.0).unwrap();
        let paths = simulate_paths(model, &initial, &daily, 200, 4242).unwrap();

        let mut residuals: Vec<Vec<f64>> = vec![Vec::new(), Vec::new(), Vec::new()];
        for p in 0..200 {
            let row = paths.path(p);
            // Realized optimal behavior at event 1 and the mandatory
            // terminal liquidation, identical across frequencies.
            let w1 = contract.w0 * row[252] / row[0];
            let choice = optimal_withdrawal_at(
                model,
                contract,
                spec,
                &grids[2],
                1.0,
                w1,
                contract.a0,
                measure,
            )
            .unwrap();
            let w2 = (w1 - choice.gamma).max(0.0) * row[504] / row[252];
            let terminal = terminal_liquidation(
                contract,
                &AccountState::new(w2, contract.a0 - choice.gamma, 2.0).unwrap(),
            )
            .unwrap();
            let withdrawals = vec![
                Withdrawal {
                    gamma: choice.gamma,
                    net_cash_flow: choice.net_cash_flow,
                    date_index: 1,
                },
                terminal,
            ];
            for (fi, stride) in [21usize, 6, 1].into_iter().enumerate() {
                let rows: Vec<usize> = (0..=504).step_by(stride).collect();
                let times: Vec<f64> = rows.iter().map(|&k| k as f64 / 252.0).collect();
                let index: Vec<f64> = rows.iter().map(|&k| row[k]).collect();
                let path = RealizedPath::synthetic(times, index, contract).unwrap();
                let ledger =
                    run_reserve(model, contract, spec, grids, &path, &withdrawals, measure)
                        .unwrap();
                residuals[fi].push(ledger.terminal_residual.abs());
            }
        }
        let median = |xs: &mut Vec<f64>| {
            xs.sort_by(f64::total_cmp);
            xs[xs.len() / 2]
        };
        let monthly = median(&mut residuals[0]);
        let weekly = median(&mut residuals[1]);
        let fine = median(&mut residuals[2]);
        assert!(
            monthly > weekly && weekly > fine,
            "medians do not decrease: monthly {monthly}, weekly {weekly}, daily {fine}"
        );
    }
}
