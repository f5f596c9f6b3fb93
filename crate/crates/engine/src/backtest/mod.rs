//! Historical scenario harness: cross-model hedging backtests.
//!
//! A scenario pits a *provider* against a *policyholder* on one realized
//! index history:
//!
//! 1. Both models are estimated on an estimation window that ends at or
//!    before the contract start, so no future data leaks into either
//!    party's decisions.
//! 2. The provider prices the contract under its own model assuming
//!    value-maximizing withdrawals, collects that price at inception, and
//!    delta-hedges a self-financing reserve along the realized path
//!    (rebalanced at every observation).
//! 3. The policyholder withdraws at each event date according to their own
//!    model's optimal policy — re-optimized at the realized account state —
//!    or takes a fixed uniform schedule. The terminal event is always the
//!    mandatory liquidation `max(W, A)` less any penalty.
//! 4. The reserve pays every realized cash flow; whatever is left after the
//!    final payment is the provider's hedging surplus (negative: a loss
//!    from model mismatch, suboptimal-behaviour windfall, or
//!    discretization).
//!
//! All levels are savings-account discounted, so the reserve splits between
//! index units and a flat savings position, and no interest rate appears.
//!
//! Report columns follow one marking convention: at an event row the
//! contract value, wealth, and guarantee are the *pre-withdrawal* states
//! (the drop shows from the next row on), while the reserve column is the
//! post-payment balance, matching the ledger.

mod io;

pub use io::{emit_report, emit_summary, load_series, read_report, SeriesFormat};

use chrono::NaiveDate;

use crate::contract::{
    apply_withdrawal, cash_flow, terminal_liquidation, AccountState, ContractSpec, Withdrawal,
};
use crate::error::{EngineError, Result};
use crate::hedging::{run_reserve, RealizedPath};
use crate::market::{
    estimate_bsm, estimate_mmm, year_fraction, MmmParams, ModelKind, ModelParams,
};
use crate::pricer::{
    continuation_value, interpolate_value, optimal_withdrawal_at, price_with_options, BsmMeasure,
    GridSpec, PricingOptions, Strategy, ValueGrid,
};
use crate::series::PriceSeries;

/// The model a provider prices and hedges with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProviderModel {
    /// Black-Scholes, priced under the risk-neutral measure.
    #[default]
    BsmRiskNeutral,
    /// Minimal market model, priced under the real-world measure with the
    /// index as numeraire.
    MmmBenchmark,
}

impl ProviderModel {
    /// Stable label used in summary files ("bsm-rn" / "mmm-ba").
    pub fn label(self) -> &'static str {
        match self {
            ProviderModel::BsmRiskNeutral => "bsm-rn",
            ProviderModel::MmmBenchmark => "mmm-ba",
        }
    }

    /// Inverse of [`ProviderModel::label`].
    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "bsm-rn" => Ok(ProviderModel::BsmRiskNeutral),
            "mmm-ba" => Ok(ProviderModel::MmmBenchmark),
            other => Err(EngineError::data(format!(
                "unknown provider label '{other}' (expected 'bsm-rn' or 'mmm-ba')"
            ))),
        }
    }

    fn short(self) -> &'static str {
        match self {
            ProviderModel::BsmRiskNeutral => "bsm",
            ProviderModel::MmmBenchmark => "mmm",
        }
    }
}

/// How the policyholder chooses withdrawals at event dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PolicyholderBehavior {
    /// Value-maximizing withdrawals under the given model, re-optimized at
    /// every realized account state.
    Optimal(ProviderModel),
    /// The uniform schedule `A0 / N` at every event before maturity.
    #[default]
    Static,
}

impl PolicyholderBehavior {
    /// Stable label used in summary files.
    pub fn label(self) -> &'static str {
        match self {
            PolicyholderBehavior::Optimal(ProviderModel::BsmRiskNeutral) => "optimal-bsm",
            PolicyholderBehavior::Optimal(ProviderModel::MmmBenchmark) => "optimal-mmm",
            PolicyholderBehavior::Static => "static",
        }
    }

    /// Inverse of [`PolicyholderBehavior::label`].
    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "optimal-bsm" => Ok(PolicyholderBehavior::Optimal(ProviderModel::BsmRiskNeutral)),
            "optimal-mmm" => Ok(PolicyholderBehavior::Optimal(ProviderModel::MmmBenchmark)),
            "static" => Ok(PolicyholderBehavior::Static),
            other => Err(EngineError::data(format!(
                "unknown policyholder label '{other}' \
                 (expected 'optimal-bsm', 'optimal-mmm', or 'static')"
            ))),
        }
    }

    fn short(self) -> &'static str {
        match self {
            PolicyholderBehavior::Optimal(m) => m.short(),
            PolicyholderBehavior::Static => "static",
        }
    }
}

/// One backtest configuration: who hedges, who withdraws, on which data.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub provider: ProviderModel,
    pub policyholder: PolicyholderBehavior,
    /// Inclusive date range the models are estimated on. Must end at or
    /// before the contract window starts.
    pub estimation_window: (NaiveDate, NaiveDate),
    /// Inclusive date range the contract lives in; the first observation
    /// inside it is the contract start, and the data must reach maturity.
    pub contract_window: (NaiveDate, NaiveDate),
    pub contract: ContractSpec,
}

impl ScenarioSpec {
    /// Checks the window ordering; the data-coverage checks happen when the
    /// series is actually cut.
    pub fn validate(&self) -> Result<()> {
        let (e0, e1) = self.estimation_window;
        let (c0, c1) = self.contract_window;
        if e0 > e1 {
            return Err(EngineError::invalid(format!(
                "estimation window start {e0} is after its end {e1}"
            )));
        }
        if c0 > c1 {
            return Err(EngineError::invalid(format!(
                "contract window start {c0} is after its end {c1}"
            )));
        }
        if e1 > c0 {
            return Err(EngineError::invalid(format!(
                "estimation window ends {e1}, after the contract window starts {c0}; \
                 estimation must not look into the contract period"
            )));
        }
        Ok(())
    }
}

/// Optional overrides for a scenario run. `None` fields fall back to
/// [`GridSpec::default_for`], which is what all reported figures use;
/// coarser grids are useful for smoke tests.
#[derive(Debug, Clone, Default)]
pub struct BacktestOptions {
    pub bsm_grid: Option<GridSpec>,
    pub mmm_grid: Option<GridSpec>,
}

impl BacktestOptions {
    fn grid_for(&self, kind: ProviderModel) -> Option<&GridSpec> {
        match kind {
            ProviderModel::BsmRiskNeutral => self.bsm_grid.as_ref(),
            ProviderModel::MmmBenchmark => self.mmm_grid.as_ref(),
        }
    }
}

/// Everything a hedging backtest produces, one row per observation date.
///
/// At event rows `contract_value`, `wealth`, and `guarantee` are marked
/// pre-withdrawal; `reserve` and `cash_flows` are post-payment. The scalar
/// totals are plain sums of their per-event components.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BacktestReport {
    /// Short scenario tag, `{provider}-{policyholder}` (e.g. "bsm-static").
    pub scenario: String,
    pub provider: ProviderModel,
    pub policyholder: PolicyholderBehavior,
    /// Price charged (and initially reserved) by the provider at inception.
    pub initial_value: f64,
    pub dates: Vec<NaiveDate>,
    /// Contract-clock times in years, event anniversaries exact.
    pub times: Vec<f64>,
    /// Realized discounted index levels.
    pub index: Vec<f64>,
    /// Provider's mark of the remaining liability at each row.
    pub contract_value: Vec<f64>,
    /// Hedge account balance after the row's payment and rebalance.
    pub reserve: Vec<f64>,
    /// Nominal wealth account.
    pub wealth: Vec<f64>,
    /// Nominal guarantee account.
    pub guarantee: Vec<f64>,
    /// Net cash paid to the policyholder at each row (zero off events).
    pub cash_flows: Vec<f64>,
    /// Realized withdrawal decisions, one per event `1..=N`.
    pub withdrawals: Vec<Withdrawal>,
    /// Row index of each event date `0..=N`.
    pub event_rows: Vec<usize>,
    /// Contract value at maturity before the final liquidation.
    pub terminal_value: f64,
    /// Reserve left after the final payment: surplus (+) or deficit (−).
    pub terminal_residual: f64,
    /// Sum of nominal withdrawal amounts, final liquidation included.
    pub total_withdrawals: f64,
}

impl BacktestReport {
    /// True for the all-default report (no observations).
    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// A model estimated, re-anchored to the contract clock, and priced.
struct PreparedModel {
    kind: ProviderModel,
    model: ModelParams,
    spec: GridSpec,
    grids: Vec<ValueGrid>,
    rf0: f64,
    v0: f64,
    measure: BsmMeasure,
}

/// Estimates `kind` on the estimation window and runs the backward
/// induction for the contract.
///
/// The MMM fit is re-anchored so the trend clock starts at the contract
/// start: `alpha0' = alpha0 * e^{eta * offset}` with `offset` the year
/// fraction from the estimation origin. The normalized index read off the
/// realized path with contract-clock times is then the estimation-window
/// trend extrapolated forward, and `Y(0)` needs no separate bookkeeping.
fn prepare(
    kind: ProviderModel,
    contract: &ContractSpec,
    estimation: &PriceSeries,
    start_date: NaiveDate,
    start_level: f64,
    grid_override: Option<&GridSpec>,
) -> Result<PreparedModel> {
    let (model, rf0, measure) = match kind {
        ProviderModel::BsmRiskNeutral => {
            let est = estimate_bsm(estimation)?;
            (
                ModelParams::Bsm(est.params()?),
                1.0,
                BsmMeasure::RiskNeutral,
            )
        }
        ProviderModel::MmmBenchmark => {
            let est = estimate_mmm(estimation)?;
            let offset = year_fraction(est.origin, start_date);
            let alpha0 = est.params.alpha0 * (est.params.eta * offset).exp();
            let params = MmmParams::new(alpha0, est.params.eta)?;
            let rf0 = params.eta * start_level / params.alpha0;
            (ModelParams::Mmm(params), rf0, BsmMeasure::default())
        }
    };
    let spec = match grid_override {
        Some(s) => s.clone(),
        None => GridSpec::default_for(model.kind(), contract),
    };
    let options = PricingOptions {
        keep_grids: true,
        keep_policy: false,
        bsm_measure: measure,
    };
    let outcome = price_with_options(&model, contract, &spec, &Strategy::Dynamic, rf0, options)?;
    log::info!(
        "prepared {} provider: {:?}, v0 = {:.6}, worst quadrature mass deficit {:.2e}",
        kind.label(),
        model,
        outcome.v0,
        outcome.diagnostics.worst_mass_deficit,
    );
    Ok(PreparedModel {
        kind,
        model,
        spec,
        grids: outcome.grids,
        rf0,
        v0: outcome.v0,
        measure,
    })
}

/// Nominal account trajectories and the realized withdrawal decisions.
struct RealizedAccounts {
    /// Per row; pre-withdrawal at event rows.
    wealth: Vec<f64>,
    guarantee: Vec<f64>,
    /// One per event `1..=N`.
    withdrawals: Vec<Withdrawal>,
}

/// Walks the realized path once, evolving the nominal accounts and asking
/// the policyholder for a withdrawal at each event date.
fn realize_policy(
    contract: &ContractSpec,
    path: &RealizedPath,
    policy: PolicyholderBehavior,
    policyholder: Option<&PreparedModel>,
) -> Result<RealizedAccounts> {
    let n = contract.n_events();
    let mut wealth = contract.w0;
    let mut guarantee = contract.a0;
    let mut wealth_rows = Vec::with_capacity(path.len());
    let mut guarantee_rows = Vec::with_capacity(path.len());
    let mut withdrawals = Vec::with_capacity(n);
    let mut next_event = 1usize;

    for k in 0..path.len() {
        if k > 0 {
            let dt = path.times[k] - path.times[k - 1];
            wealth *= path.index[k] / path.index[k - 1] * contract.fee_factor(dt);
        }
        wealth_rows.push(wealth);
        guarantee_rows.push(guarantee);
        if next_event <= n && k == path.event_rows[next_event] {
            let state = AccountState {
                wealth,
                guarantee,
                time: path.times[k],
            };
            let wd = if next_event == n {
                terminal_liquidation(contract, &state)?
            } else {
                let (gamma, net_cash_flow) = match policy {
                    PolicyholderBehavior::Static => {
                        let gamma = (contract.a0 / n as f64).min(guarantee);
                        (gamma, cash_flow(contract, &state, gamma, next_event)?)
                    }
                    PolicyholderBehavior::Optimal(_) => {
                        let pm = policyholder.expect("optimal policy carries its model");
                        let choice = optimal_withdrawal_at(
                            &pm.model,
                            contract,
                            &pm.spec,
                            &pm.grids[next_event + 1],
                            path.risk_factor(&pm.model, k),
                            wealth,
                            guarantee,
                            pm.measure,
                        )?;
                        (choice.gamma, choice.net_cash_flow)
                    }
                };
                let post = apply_withdrawal(&state, gamma)?;
                wealth = post.wealth;
                guarantee = post.guarantee;
                Withdrawal {
                    gamma,
                    net_cash_flow,
                    date_index: next_event,
                }
            };
            withdrawals.push(wd);
            next_event += 1;
        }
    }
    Ok(RealizedAccounts {
        wealth: wealth_rows,
        guarantee: guarantee_rows,
        withdrawals,
    })
}

/// Marks the provider's value of the remaining liability at every row:
/// the event-date grid at event rows (pre-withdrawal), the quadrature
/// continuation against the next event's grid in between.
fn mark_values(
    provider: &PreparedModel,
    contract: &ContractSpec,
    path: &RealizedPath,
    accounts: &RealizedAccounts,
) -> Result<Vec<f64>> {
    let n = contract.n_events();
    let mut marks = Vec::with_capacity(path.len());
    let mut next_event = 0usize;
    for k in 0..path.len() {
        let rf = path.risk_factor(&provider.model, k);
        let value = if next_event <= n && k == path.event_rows[next_event] {
            let v = interpolate_value(
                &provider.spec,
                &provider.grids[next_event],
                rf,
                accounts.wealth[k],
                accounts.guarantee[k],
            );
            next_event += 1;
            v
        } else {
            continuation_value(
                &provider.model,
                contract,
                &provider.spec,
                &provider.grids[next_event],
                path.times[k],
                rf,
                accounts.wealth[k],
                accounts.guarantee[k],
                provider.measure,
            )?
        };
        marks.push(value);
    }
    Ok(marks)
}

/// Runs one prepared scenario end to end and assembles the report.
fn run_prepared(
    provider: &PreparedModel,
    policy: PolicyholderBehavior,
    policyholder: Option<&PreparedModel>,
    contract: &ContractSpec,
    path: &RealizedPath,
) -> Result<BacktestReport> {
    let accounts = realize_policy(contract, path, policy, policyholder)?;
    let ledger = run_reserve(
        &provider.model,
        contract,
        &provider.spec,
        &provider.grids,
        path,
        &accounts.withdrawals,
        provider.measure,
    )?;
    let marks = mark_values(provider, contract, path, &accounts)?;
    let total_withdrawals: f64 = accounts.withdrawals.iter().map(|w| w.gamma).sum();
    let scenario = format!("{}-{}", provider.kind.short(), policy.short());
    log::info!(
        "scenario {scenario}: v0 = {:.6}, residual = {:+.6}, total withdrawn = {:.6}",
        provider.v0,
        ledger.terminal_residual,
        total_withdrawals,
    );
    Ok(BacktestReport {
        scenario,
        provider: provider.kind,
        policyholder: policy,
        initial_value: provider.v0,
        dates: path.dates.clone(),
        times: path.times.clone(),
        index: path.index.clone(),
        terminal_value: *marks.last().expect("path has rows"),
        contract_value: marks,
        reserve: ledger.reserve,
        wealth: accounts.wealth,
        guarantee: accounts.guarantee,
        cash_flows: ledger.cash_flows_paid,
        withdrawals: accounts.withdrawals,
        event_rows: path.event_rows.clone(),
        terminal_residual: ledger.terminal_residual,
        total_withdrawals,
    })
}

/// Cuts the estimation window and the realized contract path out of one
/// series, enforcing the no-lookahead window ordering.
fn scenario_context(
    scenario: &ScenarioSpec,
    series: &PriceSeries,
) -> Result<(PriceSeries, RealizedPath)> {
    scenario.validate()?;
    let (e0, e1) = scenario.estimation_window;
    let (c0, c1) = scenario.contract_window;
    let estimation = series.window(e0, e1)?;
    let contract_series = series.window(c0, c1)?;
    let path = RealizedPath::from_series(&contract_series, &scenario.contract)?;
    Ok((estimation, path))
}

/// Runs a single scenario at the default grids.
pub fn run_scenario(scenario: &ScenarioSpec, series: &PriceSeries) -> Result<BacktestReport> {
    run_scenario_with(scenario, series, &BacktestOptions::default())
}

/// Runs a single scenario: estimate, price, walk the realized path, hedge.
pub fn run_scenario_with(
    scenario: &ScenarioSpec,
    series: &PriceSeries,
    options: &BacktestOptions,
) -> Result<BacktestReport> {
    let (estimation, path) = scenario_context(scenario, series)?;
    let start_date = path.dates[0];
    let start_level = path.index[0];
    let provider = prepare(
        scenario.provider,
        &scenario.contract,
        &estimation,
        start_date,
        start_level,
        options.grid_for(scenario.provider),
    )?;
    let other = match scenario.policyholder {
        PolicyholderBehavior::Optimal(m) if m != scenario.provider => Some(prepare(
            m,
            &scenario.contract,
            &estimation,
            start_date,
            start_level,
            options.grid_for(m),
        )?),
        _ => None,
    };
    let policyholder = match scenario.policyholder {
        PolicyholderBehavior::Optimal(m) if m == scenario.provider => Some(&provider),
        PolicyholderBehavior::Optimal(_) => other.as_ref(),
        PolicyholderBehavior::Static => None,
    };
    run_prepared(
        &provider,
        scenario.policyholder,
        policyholder,
        &scenario.contract,
        &path,
    )
}

/// Runs the five standard scenario pairings at the default grids.
pub fn cross_matrix(base: &ScenarioSpec, series: &PriceSeries) -> Result<Vec<BacktestReport>> {
    cross_matrix_with(base, series, &BacktestOptions::default())
}

/// Runs the five standard scenario pairings — (provider, policyholder) =
/// (BSM, BSM-optimal), (BSM, static), (BSM, MMM-optimal), (MMM,
/// BSM-optimal), (MMM, MMM-optimal) — reusing one estimation and one
/// pricing run per model. The provider and policyholder fields of `base`
/// are ignored; its windows and contract define the experiment.
pub fn cross_matrix_with(
    base: &ScenarioSpec,
    series: &PriceSeries,
    options: &BacktestOptions,
) -> Result<Vec<BacktestReport>> {
    let (estimation, path) = scenario_context(base, series)?;
    let start_date = path.dates[0];
    let start_level = path.index[0];
    let bsm = prepare(
        ProviderModel::BsmRiskNeutral,
        &base.contract,
        &estimation,
        start_date,
        start_level,
        options.grid_for(ProviderModel::BsmRiskNeutral),
    )?;
    let mmm = prepare(
        ProviderModel::MmmBenchmark,
        &base.contract,
        &estimation,
        start_date,
        start_level,
        options.grid_for(ProviderModel::MmmBenchmark),
    )?;
    let combos: [(&PreparedModel, PolicyholderBehavior, Option<&PreparedModel>); 5] = [
        (
            &bsm,
            PolicyholderBehavior::Optimal(ProviderModel::BsmRiskNeutral),
            Some(&bsm),
        ),
        (&bsm, PolicyholderBehavior::Static, None),
        (
            &bsm,
            PolicyholderBehavior::Optimal(ProviderModel::MmmBenchmark),
            Some(&mmm),
        ),
        (
            &mmm,
            PolicyholderBehavior::Optimal(ProviderModel::BsmRiskNeutral),
            Some(&bsm),
        ),
        (
            &mmm,
            PolicyholderBehavior::Optimal(ProviderModel::MmmBenchmark),
            Some(&mmm),
        ),
    ];
    combos
        .into_iter()
        .map(|(provider, policy, ph)| run_prepared(provider, policy, ph, &base.contract, &path))
        .collect()
}
