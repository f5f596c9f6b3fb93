//! Backward induction for the withdrawal control problem.
//!
//! Working from maturity toward inception, alternating two moves per event
//! interval:
//!
//! ```text
//! V(t_n⁺)  =  E[ D(t_n, t_{n+1}) · V(t_{n+1}) ]          (expectation step)
//! V(t_n)   =  max_{0 <= gamma <= A} C_n(gamma) + V(t_n⁺, W - gamma, A - gamma)
//! ```
//!
//! with the mandatory terminal liquidation as the boundary condition and no
//! withdrawal at inception. Everything is expressed in units of the savings
//! account, so no explicit discounting appears beyond the model's pricing
//! kernel.
//!
//! Withdrawal candidates are the guarantee-axis nodes at or below the
//! current guarantee (subsampled by a uniform stride when the axis is finer
//! than `withdrawal_candidates_per_state`), always joined by the contractual
//! amount and the full remaining guarantee. Ties favour the smallest
//! withdrawal.

use super::grid::{interpolate_value, lerp_index, GridSide, GridSpec, Tensor3, ValueGrid};
use super::kernel::{backward_slabs, continuation_at, BsmMeasure, StepDiagnostics};
use crate::contract::ContractSpec;
use crate::market::{ModelKind, ModelParams};
use crate::{EngineError, Result};

/// Withdrawal behaviour to price.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// At every event the withdrawal maximizes cash received plus
    /// continuation value.
    Dynamic,
    /// Fixed amounts for events `1..N-1` (the terminal event is always the
    /// mandatory liquidation). At lattice states whose guarantee balance
    /// cannot support the scheduled amount, the withdrawal is clamped to
    /// the remaining guarantee.
    Static(Vec<f64>),
}

/// Knobs for [`price_with_options`].
#[derive(Debug, Clone, Copy)]
pub struct PricingOptions {
    /// Keep every pre-withdrawal value grid (required for hedging marks and
    /// grid export). When off, only the inception value survives.
    pub keep_grids: bool,
    /// Record the maximizing withdrawal at every node (dynamic runs only).
    pub keep_policy: bool,
    /// Discretization of the Black-Scholes expectation.
    pub bsm_measure: BsmMeasure,
}

impl Default for PricingOptions {
    fn default() -> Self {
        Self {
            keep_grids: true,
            keep_policy: true,
            bsm_measure: BsmMeasure::default(),
        }
    }
}

/// Numerical health counters aggregated over a pricing run.
#[derive(Debug, Clone, Copy, Default)]
pub struct PricingDiagnostics {
    /// Worst `|1 - quadrature mass|` across all expectation steps.
    pub worst_mass_deficit: f64,
    /// Expectation contributions whose wealth image clamped at the top node.
    pub wealth_clamps: u64,
}

impl PricingDiagnostics {
    fn absorb(&mut self, step: &StepDiagnostics) {
        self.worst_mass_deficit = self.worst_mass_deficit.max(step.worst_mass_deficit);
        self.wealth_clamps += step.wealth_clamps;
    }
}

/// Result of a full backward induction.
#[derive(Debug, Clone)]
pub struct PricingOutcome {
    /// Contract value at inception for `(rf0, W0, A0)`.
    pub v0: f64,
    /// Pre-withdrawal value grids indexed by event date `0..=N`
    /// (empty unless `keep_grids`).
    pub grids: Vec<ValueGrid>,
    pub diagnostics: PricingDiagnostics,
}

/// A withdrawal decision evaluated at a (possibly off-lattice) state.
#[derive(Debug, Clone, Copy)]
pub struct WithdrawalChoice {
    pub gamma: f64,
    pub net_cash_flow: f64,
    /// Cash flow plus continuation value of the post-withdrawal state.
    pub value: f64,
}

/// Net cash received for withdrawing `gamma` against contractual amount
/// `g_n`: the excess over `g_n` is penalized at rate `beta`.
#[inline]
fn net_cash(gamma: f64, g_n: f64, beta: f64) -> f64 {
    gamma - beta * (gamma - g_n).max(0.0)
}

/// The terminal grid: mandatory liquidation of `max(W, A)` with the excess
/// of the guarantee over the last contractual amount penalized.
pub fn terminal_condition(contract: &ContractSpec, spec: &GridSpec) -> Result<ValueGrid> {
    spec.validate(contract)?;
    let n_rf = spec.risk_factor_nodes.len();
    let n = contract.n_events();
    let g_end = contract.contractual(n);
    let beta = contract.beta;
    let mut values = Tensor3::filled(spec.shape(), 0.0);
    for i in 0..n_rf {
        for (jw, &w) in spec.wealth_nodes.iter().enumerate() {
            let row = values.row_mut(i, jw);
            for (ka, &a) in spec.guarantee_nodes.iter().enumerate() {
                row[ka] = w.max(a) - beta * (a - g_end).max(0.0);
            }
        }
    }
    Ok(ValueGrid {
        date_index: n,
        side: GridSide::Pre,
        values,
        policy: None,
    })
}

/// One expectation step: from the pre-withdrawal grid at its date to the
/// post-withdrawal grid one event earlier.
pub fn backward_step(
    model: &ModelParams,
    contract: &ContractSpec,
    spec: &GridSpec,
    value_next: &ValueGrid,
) -> Result<ValueGrid> {
    let (grid, _) = backward_step_inner(model, contract, spec, value_next, BsmMeasure::default())?;
    Ok(grid)
}

fn backward_step_inner(
    model: &ModelParams,
    contract: &ContractSpec,
    spec: &GridSpec,
    value_next: &ValueGrid,
    measure: BsmMeasure,
) -> Result<(ValueGrid, StepDiagnostics)> {
    if value_next.side != GridSide::Pre {
        return Err(EngineError::invalid(
            "the expectation step consumes a pre-withdrawal grid".to_string(),
        ));
    }
    let d = value_next.date_index;
    if d == 0 || d > contract.n_events() {
        return Err(EngineError::invalid(format!(
            "cannot step back from event date {d}"
        )));
    }
    let dt = contract.event_time(d) - contract.event_time(d - 1);
    let (values, diag) = backward_slabs(model, contract, spec, &value_next.values, dt, measure)?;
    Ok((
        ValueGrid {
            date_index: d - 1,
            side: GridSide::Post,
            values,
            policy: None,
        },
        diag,
    ))
}

/// One withdrawal candidate at a given guarantee node: the net cash it pays,
/// where its post-withdrawal wealth interpolates (a row of the shared
/// wealth-shift table), and where its post-withdrawal guarantee
/// interpolates on the guarantee axis.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    gamma: f64,
    cash: f64,
    /// Row into the wealth-shift table: `k < n_a` for guarantee-node
    /// amounts, `n_a` for the per-date extra amount.
    wrow: u32,
    col: u32,
    col_whi: f64,
}

/// Shared per-run tables: for every candidate amount, the interpolation of
/// `W - gamma` for every wealth node.
struct CandidateTables {
    n_w: usize,
    n_a: usize,
    /// `(lower wealth row, upper-row weight)` indexed `wrow * n_w + jw`;
    /// rows `0..n_a` hold the guarantee-node amounts, row `n_a` holds the
    /// per-date extra amount (contractual or static), rebuilt per date.
    wealth_after: Vec<(u32, f64)>,
    /// Stride over guarantee-node candidates.
    stride: usize,
    /// Flattened per-state candidate lists for the current date.
    candidates: Vec<Candidate>,
    /// `candidates[ranges[ka].0 .. ranges[ka].1]` serves guarantee node `ka`.
    ranges: Vec<(u32, u32)>,
}

impl CandidateTables {
    fn build(spec: &GridSpec) -> Self {
        let n_w = spec.wealth_nodes.len();
        let n_a = spec.guarantee_nodes.len();
        let mut wealth_after = Vec::with_capacity((n_a + 1) * n_w);
        for &g in &spec.guarantee_nodes {
            for &w in &spec.wealth_nodes {
                let (lo, whi) = lerp_index(&spec.wealth_nodes, w - g);
                wealth_after.push((lo as u32, whi));
            }
        }
        // Scratch row for the per-date extra amount.
        wealth_after.extend(std::iter::repeat((0u32, 0.0)).take(n_w));
        let cap = spec.withdrawal_candidates_per_state;
        let stride = if n_a > cap {
            (n_a - 1).div_ceil(cap - 1)
        } else {
            1
        };
        CandidateTables {
            n_w,
            n_a,
            wealth_after,
            stride,
            candidates: Vec::new(),
            ranges: vec![(0, 0); n_a],
        }
    }

    fn set_extra_amount(&mut self, spec: &GridSpec, gamma: f64) {
        let base = self.n_a * self.n_w;
        for (jw, &w) in spec.wealth_nodes.iter().enumerate() {
            let (lo, whi) = lerp_index(&spec.wealth_nodes, w - gamma);
            self.wealth_after[base + jw] = (lo as u32, whi);
        }
    }

    /// Rebuild the per-state candidate lists for event date `n` under the
    /// dynamic strategy.
    fn build_dynamic_date(&mut self, contract: &ContractSpec, spec: &GridSpec, n: usize) {
        let g_n = contract.contractual(n);
        let beta = contract.beta;
        self.set_extra_amount(spec, g_n);
        self.candidates.clear();
        let mut scratch: Vec<Candidate> = Vec::with_capacity(self.n_a / self.stride + 3);
        for ka in 0..self.n_a {
            let a = spec.guarantee_nodes[ka];
            scratch.clear();
            let mut k = 0;
            while k <= ka {
                scratch.push(self.node_candidate(spec, k, beta, g_n));
                k += self.stride;
            }
            // The full remaining guarantee is always a candidate.
            if ka % self.stride != 0 {
                scratch.push(self.node_candidate(spec, ka, beta, g_n));
            }
            // So is the contractual amount, when it is genuinely interior.
            if g_n < a {
                let (col, col_whi) = lerp_index(&spec.guarantee_nodes, a - g_n);
                scratch.push(Candidate {
                    gamma: g_n,
                    cash: g_n,
                    wrow: self.n_a as u32,
                    col: col as u32,
                    col_whi,
                });
            }
            scratch.sort_by(|x, y| x.gamma.total_cmp(&y.gamma));
            let start = self.candidates.len() as u32;
            self.candidates.extend_from_slice(&scratch);
            self.ranges[ka] = (start, self.candidates.len() as u32);
        }
    }

    fn node_candidate(&self, spec: &GridSpec, k: usize, beta: f64, g_n: f64) -> Candidate {
        let gamma = spec.guarantee_nodes[k];
        Candidate {
            gamma,
            cash: net_cash(gamma, g_n, beta),
            wrow: k as u32,
            col: 0,
            col_whi: 0.0,
        }
    }

    /// Rebuild the per-state lists for a static withdrawal `gamma_n` at
    /// date `n`: one candidate per state, clamped to the node's guarantee.
    fn build_static_date(
        &mut self,
        contract: &ContractSpec,
        spec: &GridSpec,
        n: usize,
        gamma_n: f64,
    ) {
        let g_n = contract.contractual(n);
        let beta = contract.beta;
        self.set_extra_amount(spec, gamma_n);
        self.candidates.clear();
        for ka in 0..self.n_a {
            let a = spec.guarantee_nodes[ka];
            let start = self.candidates.len() as u32;
            if a <= gamma_n {
                // Clamp: withdraw the whole remaining guarantee.
                let c = self.node_candidate(spec, ka, beta, g_n);
                self.candidates.push(c);
            } else {
                let (col, col_whi) = lerp_index(&spec.guarantee_nodes, a - gamma_n);
                self.candidates.push(Candidate {
                    gamma: gamma_n,
                    cash: net_cash(gamma_n, g_n, beta),
                    wrow: self.n_a as u32,
                    col: col as u32,
                    col_whi,
                });
            }
            self.ranges[ka] = (start, self.candidates.len() as u32);
        }
    }

    /// Post-index resolution: the guarantee-node candidates land exactly on
    /// the lattice when the axis is uniform; otherwise interpolate.
    fn resolve_columns(&mut self, spec: &GridSpec) {
        let nodes = &spec.guarantee_nodes;
        for ka in 0..self.n_a {
            let (s, e) = self.ranges[ka];
            for c in &mut self.candidates[s as usize..e as usize] {
                if (c.wrow as usize) < self.n_a {
                    let after = nodes[ka] - nodes[c.wrow as usize];
                    let (col, col_whi) = lerp_index(nodes, after);
                    c.col = col as u32;
                    c.col_whi = col_whi;
                }
            }
        }
    }
}

/// Evaluate every candidate of one state against the post-withdrawal slab,
/// returning the best value and (smallest maximizing) withdrawal.
#[inline]
fn eval_state(
    cands: &[Candidate],
    wtab: &[(u32, f64)],
    n_w: usize,
    n_a: usize,
    slab: &[f64],
    jw: usize,
) -> (f64, f64) {
    let mut best_v = f64::NEG_INFINITY;
    let mut best_g = 0.0;
    for c in cands {
        let (r, wf) = wtab[c.wrow as usize * n_w + jw];
        let lo = r as usize * n_a + c.col as usize;
        let hi = lo + n_a;
        let v = if c.col_whi == 0.0 {
            (1.0 - wf) * slab[lo] + wf * slab[hi]
        } else {
            let at_lo = (1.0 - wf) * slab[lo] + wf * slab[hi];
            let at_hi = (1.0 - wf) * slab[lo + 1] + wf * slab[hi + 1];
            (1.0 - c.col_whi) * at_lo + c.col_whi * at_hi
        };
        let v = c.cash + v;
        if v > best_v {
            best_v = v;
            best_g = c.gamma;
        }
    }
    (best_v, best_g)
}

/// Apply the date-`n` withdrawal decision to a post-withdrawal tensor,
/// producing the pre-withdrawal tensor (and optionally the policy).
fn apply_withdrawal_date(
    spec: &GridSpec,
    tables: &CandidateTables,
    post: &Tensor3<f64>,
    keep_policy: bool,
) -> (Tensor3<f64>, Option<Tensor3<f32>>) {
    let [n_rf, n_w, n_a] = spec.shape();
    let mut pre = Tensor3::filled(spec.shape(), 0.0);
    let mut policy = keep_policy.then(|| Tensor3::filled(spec.shape(), 0.0f32));
    for i in 0..n_rf {
        let slab = post.slab(i);
        let out = pre.slab_mut(i);
        let mut pol_slab = policy.as_mut().map(|p| p.slab_mut(i));
        for jw in 0..n_w {
            let row_base = jw * n_a;
            for ka in 0..n_a {
                let (s, e) = tables.ranges[ka];
                let cands = &tables.candidates[s as usize..e as usize];
                let (v, g) = eval_state(cands, &tables.wealth_after, n_w, n_a, slab, jw);
                out[row_base + ka] = v;
                if let Some(p) = pol_slab.as_deref_mut() {
                    p[row_base + ka] = g as f32;
                }
            }
        }
    }
    (pre, policy)
}

/// Optimal withdrawal and resulting value at a single lattice node of a
/// post-withdrawal grid. `node` is `[risk factor, wealth, guarantee]`.
pub fn optimize_withdrawal(
    contract: &ContractSpec,
    spec: &GridSpec,
    value_post: &ValueGrid,
    node: [usize; 3],
) -> Result<(f64, f64)> {
    if value_post.side != GridSide::Post {
        return Err(EngineError::invalid(
            "withdrawal optimization applies to a post-withdrawal grid".to_string(),
        ));
    }
    let n = value_post.date_index;
    if n == 0 || n >= contract.n_events() {
        return Err(EngineError::invalid(format!(
            "withdrawals are only optimized at events 1..{}, got {n}",
            contract.n_events() - 1
        )));
    }
    let [n_rf, n_w, n_a] = spec.shape();
    let [i, jw, ka] = node;
    if i >= n_rf || jw >= n_w || ka >= n_a {
        return Err(EngineError::invalid(format!(
            "node {node:?} is outside the {n_rf}x{n_w}x{n_a} lattice"
        )));
    }
    let mut tables = CandidateTables::build(spec);
    tables.build_dynamic_date(contract, spec, n);
    tables.resolve_columns(spec);
    let (s, e) = tables.ranges[ka];
    let cands = &tables.candidates[s as usize..e as usize];
    let (v, g) = eval_state(
        cands,
        &tables.wealth_after,
        n_w,
        n_a,
        value_post.values.slab(i),
        jw,
    );
    Ok((g, v))
}

/// Value of holding state `(rf, wealth, guarantee)` at `time_now` strictly
/// before the next event: the expectation of the next pre-withdrawal grid
/// over the remaining gap. Used for intra-period marks and deltas.
#[allow(clippy::too_many_arguments)]
pub fn continuation_value(
    model: &ModelParams,
    contract: &ContractSpec,
    spec: &GridSpec,
    next_pre: &ValueGrid,
    time_now: f64,
    rf: f64,
    wealth: f64,
    guarantee: f64,
    measure: BsmMeasure,
) -> Result<f64> {
    if next_pre.side != GridSide::Pre || next_pre.date_index == 0 {
        return Err(EngineError::invalid(
            "continuation requires the pre-withdrawal grid of the next event".to_string(),
        ));
    }
    let d = next_pre.date_index;
    let t_prev = contract.event_time(d - 1);
    let t_next = contract.event_time(d);
    if time_now < t_prev - 1e-9 || time_now >= t_next {
        return Err(EngineError::invalid(format!(
            "time {time_now} is not inside the event interval ({t_prev}, {t_next})"
        )));
    }
    continuation_at(
        model,
        contract,
        spec,
        next_pre,
        t_next - time_now,
        measure,
        rf,
        wealth,
        guarantee,
    )
}

/// Re-optimize the withdrawal at a realized (off-lattice) state at event
/// `n = next_pre.date_index - 1`, evaluating each candidate's continuation
/// by quadrature against the next pre-withdrawal grid.
pub fn optimal_withdrawal_at(
    model: &ModelParams,
    contract: &ContractSpec,
    spec: &GridSpec,
    next_pre: &ValueGrid,
    rf: f64,
    wealth: f64,
    guarantee: f64,
    measure: BsmMeasure,
) -> Result<WithdrawalChoice> {
    if next_pre.side != GridSide::Pre {
        return Err(EngineError::invalid(
            "re-optimization requires the next pre-withdrawal grid".to_string(),
        ));
    }
    let d = next_pre.date_index;
    if d < 2 || d > contract.n_events() {
        return Err(EngineError::invalid(format!(
            "re-optimization applies at events 1..{}, got next date {d}",
            contract.n_events() - 1
        )));
    }
    let n = d - 1;
    if !(guarantee >= 0.0 && wealth >= 0.0) || !guarantee.is_finite() || !wealth.is_finite() {
        return Err(EngineError::invalid(format!(
            "account state (wealth {wealth}, guarantee {guarantee}) is not valid"
        )));
    }
    let g_n = contract.contractual(n);
    let beta = contract.beta;
    let time_now = contract.event_time(n);
    let mut gammas: Vec<f64> = spec
        .guarantee_nodes
        .iter()
        .copied()
        .filter(|&g| g <= guarantee)
        .collect();
    if g_n < guarantee {
        gammas.push(g_n);
    }
    gammas.push(guarantee);
    gammas.sort_by(f64::total_cmp);
    gammas.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * guarantee.max(1.0));

    let mut best: Option<WithdrawalChoice> = None;
    for gamma in gammas {
        let cash = net_cash(gamma, g_n, beta);
        let cont = continuation_value(
            model,
            contract,
            spec,
            next_pre,
            time_now,
            rf,
            (wealth - gamma).max(0.0),
            guarantee - gamma,
            measure,
        )?;
        let value = cash + cont;
        if best.map_or(true, |b| value > b.value) {
            best = Some(WithdrawalChoice {
                gamma,
                net_cash_flow: cash,
                value,
            });
        }
    }
    Ok(best.expect("the zero withdrawal is always a candidate"))
}

pub(crate) fn validate_static_schedule(contract: &ContractSpec, schedule: &[f64]) -> Result<()> {
    let n = contract.n_events();
    if schedule.len() != n - 1 {
        return Err(EngineError::invalid(format!(
            "a static schedule covers events 1..{} (the terminal event liquidates \
             automatically): expected {} amounts, got {}",
            n - 1,
            n - 1,
            schedule.len()
        )));
    }
    let slack = 1e-9 * contract.a0.max(1.0);
    let mut balance = contract.a0;
    for (idx, &g) in schedule.iter().enumerate() {
        if !g.is_finite() || g < 0.0 {
            return Err(EngineError::invalid(format!(
                "static withdrawal at event {} must be finite and nonnegative, got {g}",
                idx + 1
            )));
        }
        if g > balance + slack {
            return Err(EngineError::invalid(format!(
                "static withdrawal {g} at event {} exceeds the remaining guarantee {balance}",
                idx + 1
            )));
        }
        balance = (balance - g).max(0.0);
    }
    Ok(())
}

/// Price the contract by backward induction with default options.
pub fn price(
    model: &ModelParams,
    contract: &ContractSpec,
    spec: &GridSpec,
    strategy: &Strategy,
    rf0: f64,
) -> Result<PricingOutcome> {
    price_with_options(model, contract, spec, strategy, rf0, PricingOptions::default())
}

/// Price the contract by backward induction.
///
/// `rf0` is the initial risk-factor level: the normalized index `Y(0)` for
/// the minimal market model (typically from estimation). Black-Scholes
/// pricing has no risk-factor state and ignores it.
pub fn price_with_options(
    model: &ModelParams,
    contract: &ContractSpec,
    spec: &GridSpec,
    strategy: &Strategy,
    rf0: f64,
    options: PricingOptions,
) -> Result<PricingOutcome> {
    spec.validate(contract)?;
    let rf0 = match model.kind() {
        ModelKind::Bsm => spec.risk_factor_nodes[0],
        ModelKind::Mmm => {
            if !rf0.is_finite() || rf0 <= 0.0 {
                return Err(EngineError::invalid(format!(
                    "the initial normalized index level must be positive, got {rf0}"
                )));
            }
            let (lo, hi) = (
                spec.risk_factor_nodes[0],
                *spec.risk_factor_nodes.last().expect("nonempty"),
            );
            if rf0 < lo || rf0 > hi {
                log::warn!(
                    "initial risk factor {rf0} lies outside the grid range [{lo}, {hi}]; \
                     the inception value clamps to the boundary"
                );
            }
            rf0
        }
    };
    if let Strategy::Static(schedule) = strategy {
        validate_static_schedule(contract, schedule)?;
    }

    let n_events = contract.n_events();
    let mut tables = CandidateTables::build(spec);
    let mut diagnostics = PricingDiagnostics::default();
    let mut grids: Vec<ValueGrid> = Vec::with_capacity(if options.keep_grids {
        n_events + 1
    } else {
        0
    });
    let mut current = terminal_condition(contract, spec)?;

    for n in (0..n_events).rev() {
        let (post, step_diag) =
            backward_step_inner(model, contract, spec, &current, options.bsm_measure)?;
        diagnostics.absorb(&step_diag);
        let pre = if n == 0 {
            ValueGrid {
                date_index: 0,
                side: GridSide::Pre,
                values: post.values,
                policy: None,
            }
        } else {
            match strategy {
                Strategy::Dynamic => {
                    tables.build_dynamic_date(contract, spec, n);
                    tables.resolve_columns(spec);
                    let (values, policy) =
                        apply_withdrawal_date(spec, &tables, &post.values, options.keep_policy);
                    ValueGrid {
                        date_index: n,
                        side: GridSide::Pre,
                        values,
                        policy,
                    }
                }
                Strategy::Static(schedule) => {
                    tables.build_static_date(contract, spec, n, schedule[n - 1]);
                    tables.resolve_columns(spec);
                    let (values, _) = apply_withdrawal_date(spec, &tables, &post.values, false);
                    ValueGrid {
                        date_index: n,
                        side: GridSide::Pre,
                        values,
                        policy: None,
                    }
                }
            }
        };
        if options.keep_grids {
            grids.push(std::mem::replace(&mut current, pre));
        } else {
            current = pre;
        }
    }

    let v0 = interpolate_value(spec, &current, rf0, contract.w0, contract.a0);
    if options.keep_grids {
        grids.push(current);
        grids.reverse();
    }
    Ok(PricingOutcome {
        v0,
        grids,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{BsmParams, MmmParams};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use statrs::distribution::ContinuousCDF;

    fn annual_contract(years: usize, beta: f64, fees: f64) -> ContractSpec {
        ContractSpec::annual(years, 1_000_000.0, beta, fees, 0.0).unwrap()
    }

    fn bsm(sigma: f64) -> ModelParams {
        ModelParams::Bsm(BsmParams::new(sigma).unwrap())
    }

    fn mmm(eta: f64) -> ModelParams {
        ModelParams::Mmm(MmmParams::new(2.857, eta).unwrap())
    }

    #[test]
    fn terminal_condition_reproduces_the_liquidation_payoff() {
        let c = annual_contract(30, 0.1, 0.0);
        let spec = GridSpec::default_for(ModelKind::Bsm, &c);
        let grid = terminal_condition(&c, &spec).unwrap();
        assert_eq!(grid.date_index, 30);
        assert_eq!(grid.side, GridSide::Pre);
        // Wealth 2e6 dominates a guarantee of 5e5; the guarantee still
        // drags the penalty on its excess over the final contractual amount.
        let v = interpolate_value(&spec, &grid, 1.0, 2_000_000.0, 500_000.0);
        let expect = 2_000_000.0 - 0.1 * (500_000.0 - 1_000_000.0 / 30.0);
        assert_relative_eq!(v, expect, max_relative = 1e-12);
        // Broke account with full guarantee: the guarantee pays.
        let v = interpolate_value(&spec, &grid, 1.0, 0.0, 1_000_000.0);
        let expect = 1_000_000.0 - 0.1 * (1_000_000.0 - 1_000_000.0 / 30.0);
        assert_relative_eq!(v, expect, max_relative = 1e-12);
        assert_abs_diff_eq!(interpolate_value(&spec, &grid, 1.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn static_schedule_validation_rejects_bad_input() {
        let c = annual_contract(3, 0.1, 0.0);
        let spec = GridSpec::default_for(ModelKind::Bsm, &c);
        let model = bsm(0.2);
        let err = price(&model, &c, &spec, &Strategy::Static(vec![1.0]), 1.0)
            .err()
            .expect("wrong length");
        assert!(err.to_string().contains("expected 2 amounts"));
        // Feasible per-event but not cumulatively: 700k + 700k > 1m.
        let err = price(
            &model,
            &c,
            &spec,
            &Strategy::Static(vec![700_000.0, 700_000.0]),
            1.0,
        )
        .err()
        .expect("infeasible schedule");
        assert!(err.to_string().contains("event 2"), "{err}");
        let err = price(&model, &c, &spec, &Strategy::Static(vec![-1.0, 0.0]), 1.0)
            .err()
            .expect("negative amount");
        assert!(err.to_string().contains("event 1"), "{err}");
    }

    #[test]
    fn backward_step_discounts_a_constant_by_the_expected_sdf() {
        let c = annual_contract(2, 0.1, 0.0);

        // Black-Scholes: the expected SDF is 1 (martingale savings account).
        let spec = GridSpec::default_for(ModelKind::Bsm, &c);
        let mut terminal = terminal_condition(&c, &spec).unwrap();
        terminal.values = Tensor3::filled(spec.shape(), 7.0);
        let post = backward_step(&bsm(0.2), &c, &spec, &terminal).unwrap();
        assert_eq!(post.date_index, 1);
        assert_eq!(post.side, GridSide::Post);
        for &v in post.values.data() {
            assert_relative_eq!(v, 7.0, max_relative = 1e-10);
        }

        // MMM: a strict supermartingale, matching the closed form per node.
        let spec = GridSpec::default_for(ModelKind::Mmm, &c);
        let mut terminal = terminal_condition(&c, &spec).unwrap();
        terminal.values = Tensor3::filled(spec.shape(), 3.0);
        let params = MmmParams::new(2.857, 0.0435).unwrap();
        let post = backward_step(&mmm(0.0435), &c, &spec, &terminal).unwrap();
        for (i, &y) in spec.risk_factor_nodes.iter().enumerate() {
            // Interior nodes only: near the bottom of the axis a material
            // share of the discounting sits in the sub-grid tail, which the
            // boundary lump prices at the edge node instead of integrating
            // 1/Y over the tail, so the closed form does not apply there.
            if !(0.5..=10.0).contains(&y) {
                continue;
            }
            let expect = 3.0 * crate::market::mmm_expected_sdf(&params, y, 1.0);
            let got = post.values.get(i, 100, 60);
            assert_relative_eq!(got, expect, max_relative = 1e-8);
        }
    }

    #[test]
    fn backward_step_prices_wealth_as_a_martingale_less_fees() {
        // Value = W at the later date must price to W times the fee drag.
        let fees = 0.0187;
        let c = annual_contract(2, 0.1, fees);
        let drag = (-fees).exp();

        let spec = GridSpec::default_for(ModelKind::Bsm, &c);
        let mut next = terminal_condition(&c, &spec).unwrap();
        let mut t = Tensor3::filled(spec.shape(), 0.0);
        for (jw, &w) in spec.wealth_nodes.iter().enumerate() {
            for ka in 0..spec.guarantee_nodes.len() {
                t.set(0, jw, ka, w);
            }
        }
        next.values = t;
        let post = backward_step(&bsm(0.2), &c, &spec, &next).unwrap();
        for (jw, &w) in spec.wealth_nodes.iter().enumerate() {
            // Stay far enough below the top that no quadrature image clamps.
            if jw > 150 {
                continue;
            }
            assert_relative_eq!(post.values.get(0, jw, 0), w * drag, max_relative = 1e-11);
        }

        let spec = GridSpec::default_for(ModelKind::Mmm, &c);
        let mut next = terminal_condition(&c, &spec).unwrap();
        let mut t = Tensor3::filled(spec.shape(), 0.0);
        for i in 0..spec.risk_factor_nodes.len() {
            for (jw, &w) in spec.wealth_nodes.iter().enumerate() {
                for ka in 0..spec.guarantee_nodes.len() {
                    t.set(i, jw, ka, w);
                }
            }
        }
        next.values = t;
        let post = backward_step(&mmm(0.0435), &c, &spec, &next).unwrap();
        for (i, &y) in spec.risk_factor_nodes.iter().enumerate() {
            if !(0.05..=10.0).contains(&y) {
                continue;
            }
            for (jw, &w) in spec.wealth_nodes.iter().enumerate() {
                if !(10..=150).contains(&jw) {
                    continue;
                }
                assert_relative_eq!(
                    post.values.get(i, jw, 0),
                    w * drag,
                    max_relative = 1e-6
                );
            }
        }
    }

    #[test]
    fn zero_guarantee_states_never_withdraw() {
        let c = annual_contract(3, 0.1, 0.0);
        let spec = GridSpec::default_for(ModelKind::Bsm, &c);
        let out = price(&bsm(0.2), &c, &spec, &Strategy::Dynamic, 1.0).unwrap();
        for n in 1..3 {
            let policy = out.grids[n].policy.as_ref().expect("dynamic keeps policy");
            for jw in 0..spec.wealth_nodes.len() {
                assert_eq!(policy.get(0, jw, 0), 0.0);
            }
        }
    }

    #[test]
    fn a_full_penalty_caps_withdrawals_at_the_contractual_amount() {
        // With the penalty confiscating 100% of any excess over the
        // contractual amount, withdrawing beyond it is never strictly
        // better: the cash flow is flat in the excess while the
        // post-withdrawal state only shrinks. It can tie exactly — from
        // states whose continuation is flat along the withdrawal direction
        // (e.g. ruined wealth with a linear guarantee payout) — so any
        // recorded policy above the contractual amount must sit on a value
        // plateau: withdrawing the contractual amount must attain the same
        // value. One boundary effect tilts that plateau: near the top of
        // the wealth axis the lattice clamps index ratios that overshoot
        // the last node, so a marginal dollar of wealth is worth only
        // 1 - P(R > w_top/w) there while a marginal dollar of guarantee
        // relief is worth the full discount factor; the lattice then
        // legitimately prefers shedding wealth by up to that tail
        // probability per unit withdrawn. The tolerance charges exactly
        // that budget (it vanishes away from the boundary: by maturity the
        // cumulative log-return is Gaussian with mean sigma^2 tau / 2 and
        // variance sigma^2 tau).
        let c = annual_contract(3, 1.0, 0.0);
        let spec = GridSpec::default_for(ModelKind::Bsm, &c);
        let sigma = 0.25;
        let model = bsm(sigma);
        let out = price(&model, &c, &spec, &Strategy::Dynamic, 1.0).unwrap();
        let w_top = *spec.wealth_nodes.last().unwrap();
        let gauss = statrs::distribution::Normal::standard();
        for n in 1..3 {
            let g = c.contractual(n);
            let tau = (3 - n) as f64;
            let post = backward_step(&model, &c, &spec, &out.grids[n + 1]).unwrap();
            let policy = out.grids[n].policy.as_ref().unwrap();
            let [n_rf, n_w, n_a] = out.grids[n].values.dims();
            for i in 0..n_rf {
                for jw in 0..n_w {
                    for ka in 0..n_a {
                        let p = f64::from(policy.get(i, jw, ka));
                        if p <= g * (1.0 + 1e-6) {
                            continue;
                        }
                        let w = spec.wealth_nodes[jw];
                        let a = spec.guarantee_nodes[ka];
                        let v_pre = out.grids[n].values.get(i, jw, ka);
                        let v_at_g = g
                            + interpolate_value(
                                &spec,
                                &post,
                                spec.risk_factor_nodes[i],
                                (w - g).max(0.0),
                                a - g,
                            );
                        let sd = sigma * tau.sqrt();
                        let clamp_tail =
                            1.0 - gauss.cdf(((w_top / w).ln() - 0.5 * sd * sd) / sd);
                        let tilt = 3.0 * clamp_tail * (p - g) + 1e-9 * v_pre.abs() + 1e-6;
                        assert!(
                            (v_pre - v_at_g).abs() <= tilt,
                            "policy {p} above contractual {g} at date {n} \
                             node ({i},{jw},{ka}) is not a plateau tie: \
                             attained {v_pre} vs {v_at_g} at the contractual \
                             amount (allowed tilt {tilt:.3e})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn dynamic_pricing_dominates_static_and_discounted_wealth() {
        let c = annual_contract(3, 0.1, 0.0);
        let spec = GridSpec::default_for(ModelKind::Bsm, &c);
        let model = bsm(0.2);
        let dynamic = price(&model, &c, &spec, &Strategy::Dynamic, 1.0).unwrap();
        let g = c.contractual(1);
        let static_ = price(&model, &c, &spec, &Strategy::Static(vec![g, g]), 1.0).unwrap();
        assert!(
            dynamic.v0 >= static_.v0 - 1e-9 * static_.v0,
            "dynamic {} < static {}",
            dynamic.v0,
            static_.v0
        );
        // Never withdrawing and liquidating at maturity is also dominated,
        // and its value is at least the wealth martingale.
        assert!(dynamic.v0 >= c.w0 * (1.0 - 1e-9));
        assert!(dynamic.diagnostics.worst_mass_deficit < 1e-8);
    }

    fn assert_wealth_monotone(grid: &ValueGrid) {
        let v = &grid.values;
        let [n_rf, n_w, n_a] = v.dims();
        for i in 0..n_rf {
            for jw in 0..n_w - 1 {
                for ka in 0..n_a {
                    let (lo, hi) = (v.get(i, jw, ka), v.get(i, jw + 1, ka));
                    assert!(
                        hi >= lo - 1e-12 * lo.abs().max(1.0),
                        "wealth inversion at date {} ({i}, {jw}, {ka}): {lo} > {hi}",
                        grid.date_index
                    );
                }
            }
        }
    }

    fn assert_guarantee_monotone(grid: &ValueGrid) {
        let v = &grid.values;
        let [n_rf, n_w, n_a] = v.dims();
        for i in 0..n_rf {
            for jw in 0..n_w {
                for ka in 0..n_a - 1 {
                    let (lo, hi) = (v.get(i, jw, ka), v.get(i, jw, ka + 1));
                    assert!(
                        hi >= lo - 1e-12 * lo.abs().max(1.0),
                        "guarantee inversion at date {} ({i}, {jw}, {ka}): {lo} > {hi}",
                        grid.date_index
                    );
                }
            }
        }
    }

    #[test]
    fn value_grids_are_monotone_in_wealth_and_guarantee() {
        // Wealth monotonicity holds at every date for any penalty level:
        // extra wealth is free upside. Guarantee monotonicity holds wherever
        // the remaining events' penalty-free withdrawals cover the balance;
        // with a penalty it genuinely reverses at late dates for balances
        // above that capacity (the terminal payoff max(W,A) - b(A-G_N)+
        // decreases in A when W > A > G_N). So the full guarantee axis is
        // checked at every date only for b = 0, and at the early dates
        // (which still have full capacity ahead) for b > 0.
        let c = annual_contract(3, 0.1, 0.0);
        let spec = GridSpec::default_for(ModelKind::Bsm, &c);
        let out = price(&bsm(0.2), &c, &spec, &Strategy::Dynamic, 1.0).unwrap();
        for grid in &out.grids {
            assert_wealth_monotone(grid);
        }
        assert_guarantee_monotone(&out.grids[0]);
        assert_guarantee_monotone(&out.grids[1]);

        let free = annual_contract(3, 0.0, 0.0);
        let spec = GridSpec::default_for(ModelKind::Bsm, &free);
        let out = price(&bsm(0.2), &free, &spec, &Strategy::Dynamic, 1.0).unwrap();
        for grid in &out.grids {
            assert_wealth_monotone(grid);
            assert_guarantee_monotone(grid);
        }
    }

    #[test]
    fn both_black_scholes_discretizations_agree() {
        // The real-world-SDF and driftless arrangements compute the same
        // expectation. On an integrand the quadrature resolves exactly — a
        // value function linear in wealth — both discretizations reproduce
        // the no-fee wealth martingale to near machine precision, so they
        // agree far inside 1e-8.
        let c = annual_contract(2, 0.1, 0.0);
        let spec = GridSpec::default_for(ModelKind::Bsm, &c);
        let model = bsm(0.2);
        let mut next = terminal_condition(&c, &spec).unwrap();
        let mut t = Tensor3::filled(spec.shape(), 0.0);
        for (jw, &w) in spec.wealth_nodes.iter().enumerate() {
            for ka in 0..spec.guarantee_nodes.len() {
                t.set(0, jw, ka, w);
            }
        }
        next.values = t;
        for measure in [BsmMeasure::RealWorldSdf, BsmMeasure::RiskNeutral] {
            let post = backward_step_inner(&model, &c, &spec, &next, measure).unwrap();
            for (jw, &w) in spec.wealth_nodes.iter().enumerate().take(151) {
                assert_relative_eq!(post.0.values.get(0, jw, 0), w, max_relative = 1e-11);
            }
        }

        // On the full contract the value function is piecewise linear, and
        // Gauss-Hermite samples its kinks at measure-shifted node sets, so
        // the two prices differ by the quadrature's kink resolution (a few
        // parts in 1e5 at 64 nodes — measured, stable, and shrinking only
        // slowly with more nodes).
        let c = annual_contract(3, 0.1, 0.0);
        let spec = GridSpec::default_for(ModelKind::Bsm, &c);
        let mut opts = PricingOptions {
            keep_grids: false,
            keep_policy: false,
            ..Default::default()
        };
        let rw = price_with_options(&model, &c, &spec, &Strategy::Dynamic, 1.0, opts).unwrap();
        opts.bsm_measure = BsmMeasure::RiskNeutral;
        let rn = price_with_options(&model, &c, &spec, &Strategy::Dynamic, 1.0, opts).unwrap();
        assert_relative_eq!(rw.v0, rn.v0, max_relative = 2e-4);
    }

    #[test]
    fn a_zero_initial_guarantee_prices_to_discounted_wealth() {
        // No guarantee, no withdrawals: the contract is just the account,
        // and with zero fees its value is exactly the initial wealth.
        let c = ContractSpec::new(
            vec![0.0, 1.0, 2.0],
            vec![100.0, 100.0],
            0.1,
            0.0,
            0.0,
            1000.0,
            0.0,
        )
        .unwrap();
        let mut spec = GridSpec::default_for(ModelKind::Bsm, &c);
        spec.guarantee_nodes = vec![0.0];
        let out = price(&bsm(0.2), &c, &spec, &Strategy::Dynamic, 1.0).unwrap();
        assert_relative_eq!(out.v0, 1000.0, max_relative = 1e-9);

        let mut spec = GridSpec::default_for(ModelKind::Mmm, &c);
        spec.guarantee_nodes = vec![0.0];
        let out = price(&mmm(0.0435), &c, &spec, &Strategy::Dynamic, 1.0).unwrap();
        assert_relative_eq!(out.v0, 1000.0, max_relative = 1e-6);
    }

    #[test]
    fn single_node_optimization_matches_the_bulk_solver() {
        let c = annual_contract(3, 0.3, 0.01);
        let spec = GridSpec::default_for(ModelKind::Bsm, &c);
        let model = bsm(0.25);
        let out = price(&model, &c, &spec, &Strategy::Dynamic, 1.0).unwrap();
        // Rebuild the post-withdrawal grid at event 1 from the kept
        // pre-withdrawal grid at event 2 and re-optimize a few nodes.
        let post = backward_step(&model, &c, &spec, &out.grids[2]).unwrap();
        let policy = out.grids[1].policy.as_ref().unwrap();
        for (jw, ka) in [(100, 120), (80, 60), (120, 1), (0, 30), (150, 97)] {
            let (gamma, v) = optimize_withdrawal(&c, &spec, &post, [0, jw, ka]).unwrap();
            assert_relative_eq!(v, out.grids[1].values.get(0, jw, ka), max_relative = 1e-12);
            // The stored policy is single precision; compare at that width.
            assert_eq!(gamma as f32, policy.get(0, jw, ka));
        }
    }

    #[test]
    fn off_lattice_reoptimization_tracks_the_lattice_solution() {
        let c = annual_contract(3, 0.1, 0.0);
        let spec = GridSpec::default_for(ModelKind::Bsm, &c);
        let model = bsm(0.2);
        let out = price(&model, &c, &spec, &Strategy::Dynamic, 1.0).unwrap();
        let measure = BsmMeasure::default();

        // With no guarantee left the only candidate is zero, and the single
        // quadrature evaluation must agree with the lattice kernel exactly
        // (same nodes, same interpolation weights).
        let jw = 100;
        let w = spec.wealth_nodes[jw];
        let choice =
            optimal_withdrawal_at(&model, &c, &spec, &out.grids[2], 1.0, w, 0.0, measure).unwrap();
        assert_eq!(choice.gamma, 0.0);
        assert_relative_eq!(
            choice.value,
            out.grids[1].values.get(0, jw, 0),
            max_relative = 1e-11
        );

        // At a full-guarantee lattice state the candidate withdrawals leave
        // the wealth off the log lattice, so re-optimization (interpolate,
        // then integrate) and the lattice solve (integrate, then
        // interpolate) agree only to the interpolation error of the grid.
        let ka = 120;
        let a = spec.guarantee_nodes[ka];
        let choice =
            optimal_withdrawal_at(&model, &c, &spec, &out.grids[2], 1.0, w, a, measure).unwrap();
        assert!(choice.gamma >= 0.0 && choice.gamma <= a);
        assert_relative_eq!(
            choice.value,
            out.grids[1].values.get(0, jw, ka),
            max_relative = 1e-3
        );
        assert_relative_eq!(
            choice.value,
            choice.net_cash_flow
                + continuation_value(
                    &model,
                    &c,
                    &spec,
                    &out.grids[2],
                    c.event_time(1),
                    1.0,
                    w - choice.gamma,
                    a - choice.gamma,
                    measure,
                )
                .unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn pricing_rejects_nonsense_initial_risk_factors() {
        let c = annual_contract(2, 0.1, 0.0);
        let spec = GridSpec::default_for(ModelKind::Mmm, &c);
        let model = mmm(0.0435);
        assert!(price(&model, &c, &spec, &Strategy::Dynamic, -1.0).is_err());
        assert!(price(&model, &c, &spec, &Strategy::Dynamic, f64::NAN).is_err());
    }
}

