//! Independent Monte Carlo oracles for the lattice pricer.
//!
//! Nothing here touches the lattice: paths come from the exact transition
//! laws, discounting is the pathwise stochastic discount factor, and the
//! dynamic value is a brute-force maximization over a dense withdrawal grid
//! with Monte Carlo continuation values. Slow and transparent by design —
//! the point is to certify the solver on small instances, so these
//! estimators trade speed for being obviously correct.
//!
//! Two structural facts keep the brute force tractable:
//!
//! * In both models the index is the numeraire, so the realized discount
//!   factor over any step is exactly the inverse index ratio, `D = 1/R`.
//! * The terminal cash flow is piecewise linear in the final index ratio,
//!   so with the inner sample sorted by ratio a continuation value for any
//!   post-withdrawal state is two prefix-sum lookups around the kink
//!   `R = A / (W * fee)` — `O(log m)` instead of `O(m)` per candidate.
//!
//! Estimates use one counter-mode RNG stream per path (independent of any
//! batching) and compensated summation, so they are bitwise reproducible
//! for a given seed. No variance-reduction tricks: plain sample averages,
//! sized so the statistical error sits at or below the comparison
//! tolerances.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::contract::{
    apply_withdrawal, cash_flow, evolve_wealth, terminal_liquidation, AccountState, ContractSpec,
};
use crate::market::{
    bsm_transition, mmm_transition, sdf, simulate_paths, BsmParams, ModelParams, MmmParams,
    RiskFactorState, TransitionLaw,
};
use crate::numerics::KahanSum;
use crate::pricer::{price_with_options, GridSpec, PricingOptions, Strategy};
use crate::{EngineError, Result};

/// Per-path terminal sample size when the final-step law depends on the
/// current risk-factor state (benchmark model) and must be redrawn per path.
const STATE_DEPENDENT_TERMINAL: usize = 2_000;
/// Shared terminal sample size when the final-step ratio law is
/// state-independent (Black-Scholes). One large sample, drawn once on a
/// reserved RNG stream, serves every path and every candidate; continuation
/// estimates then share its (tiny, `O(1/sqrt(m))`) noise, which the outer
/// standard error does not see — kept far below the comparison tolerances.
const STATE_FREE_TERMINAL: usize = 200_000;
/// Mid-level paths per outer path in the three-event brute force.
const MID_LEVEL_PATHS: usize = 200;
/// Terminal sample per mid-level path in the three-event benchmark-model
/// brute force (state-dependent law three levels deep).
const NESTED_TERMINAL: usize = 400;

/// A Monte Carlo estimate with its statistical precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    /// Sample mean.
    pub mean: f64,
    /// Sample standard deviation divided by `sqrt(n_paths)`.
    pub standard_error: f64,
    /// Number of independent paths behind the estimate.
    pub n_paths: usize,
    /// RNG seed the estimate was produced with.
    pub seed: u64,
}

/// Mean and standard error of a sample set (two-pass, compensated).
fn summarize(samples: &[f64], seed: u64) -> Result<McEstimate> {
    let n = samples.len();
    if n < 2 {
        return Err(EngineError::invalid(format!(
            "a Monte Carlo estimate needs at least 2 paths, got {n}"
        )));
    }
    let mean = samples.iter().copied().collect::<KahanSum>().value() / n as f64;
    let ss = samples
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .collect::<KahanSum>()
        .value();
    let sample_var = ss / (n - 1) as f64;
    Ok(McEstimate {
        mean,
        standard_error: (sample_var / n as f64).sqrt(),
        n_paths: n,
        seed,
    })
}

/// Net cash for withdrawing `gamma` against the contractual amount `g_n`.
#[inline]
fn net_cash(gamma: f64, g_n: f64, beta: f64) -> f64 {
    gamma - beta * (gamma - g_n).max(0.0)
}

/// The exact one-step law of the risk factor for either model.
fn law_between(model: &ModelParams, rf_t: f64, t: f64, u: f64) -> Result<TransitionLaw> {
    match model {
        ModelParams::Bsm(p) => bsm_transition(p, rf_t, t, u),
        ModelParams::Mmm(p) => mmm_transition(p, rf_t, t, u),
    }
}

/// Index ratio `S(u)/S(t)` implied by a risk-factor move (trend-adjusted
/// for the benchmark model, where `S ∝ e^{eta t} Y`).
#[inline]
fn index_ratio(model: &ModelParams, rf_t: f64, rf_u: f64, dt: f64) -> f64 {
    match model {
        ModelParams::Bsm(_) => rf_u / rf_t,
        ModelParams::Mmm(p) => (p.eta * dt).exp() * rf_u / rf_t,
    }
}

/// Price a fixed withdrawal schedule by direct simulation: the average over
/// exact-law paths of the pathwise-discounted cash flows
/// `sum_n D(0,t_n) C_n` with `D(0,t) = S(0)/S(t)`.
///
/// `withdrawals` lists the amounts for events `1..N-1`; the terminal event
/// always liquidates. The schedule must be admissible from the initial
/// guarantee (nonnegative, finite, cumulative sum within `A0`) — the same
/// rule the lattice pricer enforces — so no clamping ever occurs along a
/// path. `rf0` is the initial risk-factor level (any positive level for
/// Black-Scholes, which only ever sees ratios).
pub fn mc_static_price(
    model: &ModelParams,
    contract: &ContractSpec,
    withdrawals: &[f64],
    rf0: f64,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    crate::pricer::validate_static_schedule(contract, withdrawals)?;
    let kind = model.kind();
    let initial = RiskFactorState::new(kind, rf0, 0.0)?;
    let n = contract.n_events();
    let paths = simulate_paths(model, &initial, &contract.event_times()[1..], n_paths, seed)?;

    let mut samples = Vec::with_capacity(n_paths);
    for p in 0..n_paths {
        let row = paths.path(p);
        let mut state = AccountState::new(contract.w0, contract.a0, 0.0)?;
        let mut rf_prev = initial;
        let mut pv = 0.0;
        for event in 1..=n {
            let rf_here = RiskFactorState::new(kind, row[event], contract.event_time(event))?;
            state = evolve_wealth(contract, model, &state, &rf_prev, &rf_here)?;
            let discount = sdf(model, &initial, &rf_here)?;
            if event < n {
                let gamma = withdrawals[event - 1].min(state.guarantee);
                pv += discount * cash_flow(contract, &state, gamma, event)?;
                state = apply_withdrawal(&state, gamma)?;
            } else {
                pv += discount * terminal_liquidation(contract, &state)?.net_cash_flow;
            }
            rf_prev = rf_here;
        }
        samples.push(pv);
    }
    summarize(&samples, seed)
}

/// Average pathwise discount factor `D(0,T) = S(0)/S(T)` — the Monte Carlo
/// price of a unit cash flow at `T`. Useful on its own as a supermartingale
/// diagnostic: under the benchmark model the true value is strictly below
/// one and known in closed form.
pub fn mc_discount_factor(
    model: &ModelParams,
    rf0: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(EngineError::invalid(format!(
            "the discount horizon must be positive and finite, got {horizon}"
        )));
    }
    let law = law_between(model, rf0, 0.0, horizon)?;
    let mut samples = Vec::with_capacity(n_paths);
    for p in 0..n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let next = law.sample(&mut rng);
        samples.push(1.0 / index_ratio(model, rf0, next, horizon));
    }
    summarize(&samples, seed)
}

/// A Monte Carlo sample of one step's index ratios, sorted with discount
/// prefix sums so terminal continuation values cost `O(log m)` per query.
struct TerminalSample {
    /// Index ratios over the step, ascending.
    ratios: Vec<f64>,
    /// `cum_sdf[k]` = sum of `1/ratio` over the `k` smallest ratios.
    cum_sdf: Vec<f64>,
}

impl TerminalSample {
    fn draw<R: rand::Rng + ?Sized>(
        model: &ModelParams,
        rf_t: f64,
        t: f64,
        u: f64,
        m: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let law = law_between(model, rf_t, t, u)?;
        let dt = u - t;
        let mut ratios: Vec<f64> = (0..m)
            .map(|_| index_ratio(model, rf_t, law.sample(rng), dt))
            .collect();
        ratios.sort_unstable_by(f64::total_cmp);
        let mut cum_sdf = Vec::with_capacity(m + 1);
        cum_sdf.push(0.0);
        let mut acc = KahanSum::new();
        for &r in &ratios {
            acc.add(1.0 / r);
            cum_sdf.push(acc.value());
        }
        Ok(Self { ratios, cum_sdf })
    }

    /// Sample mean of `D * (liquidation cash at maturity)` from the
    /// post-withdrawal state `(w, a)` one event earlier, with fee drag
    /// `fee` over the step and terminal penalty `beta` on the guarantee
    /// excess over `g_end`.
    ///
    /// Splits the sample at the kink `ratio = a/(w*fee)` where the wealth
    /// account overtakes the guarantee. Above it the summand is
    /// `D * w * fee * ratio = w * fee` exactly (numeraire identity), below
    /// it `D * a`; the penalty leg is state-deterministic.
    fn expected_terminal(&self, w: f64, a: f64, fee: f64, beta: f64, g_end: f64) -> f64 {
        let m = self.ratios.len();
        let funded = w * fee;
        let k = if funded > 0.0 {
            self.ratios.partition_point(|&r| r * funded <= a)
        } else {
            m
        };
        let wealth_leg = funded * (m - k) as f64;
        let guarantee_leg = a * self.cum_sdf[k];
        let penalty = beta * (a - g_end).max(0.0) * self.cum_sdf[m];
        (wealth_leg + guarantee_leg - penalty) / m as f64
    }
}

/// Best withdrawal at an event with only the terminal event remaining,
/// searched over a `points`-node uniform grid on `[0, a]` against a
/// terminal sample. Returns the attained value (cash plus continuation);
/// ties go to the smallest withdrawal.
fn best_final_withdrawal(
    sample: &TerminalSample,
    w: f64,
    a: f64,
    g_n: f64,
    beta: f64,
    fee: f64,
    g_end: f64,
    points: usize,
) -> (f64, f64) {
    if a <= 0.0 {
        return (sample.expected_terminal(w, 0.0, fee, beta, g_end), 0.0);
    }
    let mut best = (f64::NEG_INFINITY, 0.0);
    for j in 0..points {
        let gamma = a * j as f64 / (points - 1) as f64;
        let value = net_cash(gamma, g_n, beta)
            + sample.expected_terminal((w - gamma).max(0.0), a - gamma, fee, beta, g_end);
        if value > best.0 {
            best = (value, gamma);
        }
    }
    best
}

/// Brute-force dynamic value for contracts with at most three events:
/// nested maximization over a `gamma_points`-node withdrawal grid per event
/// with Monte Carlo continuation values, per the definition of the optimal
/// strategy. Refuses more than three events (the nesting is combinatorial).
///
/// The returned mean estimates the inception value; its standard error
/// covers the outer-path noise (inner-stage noise is driven far below the
/// corpus tolerances by the sample-size constants above).
pub fn exhaustive_small_dp(
    model: &ModelParams,
    contract: &ContractSpec,
    rf0: f64,
    gamma_points: usize,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    let n = contract.n_events();
    if n > 3 {
        return Err(EngineError::invalid(format!(
            "the brute-force oracle handles at most 3 events, got {n}: \
             the nested maximization blows up combinatorially"
        )));
    }
    if gamma_points < 2 {
        return Err(EngineError::invalid(format!(
            "the withdrawal grid needs at least 2 points, got {gamma_points}"
        )));
    }
    if n == 1 {
        // No decisions: the dynamic value is the mandatory liquidation.
        return mc_static_price(model, contract, &[], rf0, n_paths, seed);
    }
    RiskFactorState::new(model.kind(), rf0, 0.0)?;

    let beta = contract.beta;
    let g_end = contract.contractual(n);
    let (t1, t_end) = (contract.event_time(1), contract.event_time(n));
    let ff1 = contract.fee_factor(t1);

    // Black-Scholes step ratios are state-independent, so one big terminal
    // sample (reserved RNG stream) serves every path and candidate; the
    // benchmark model's law depends on the current level and is redrawn
    // per path.
    let frozen = match model {
        ModelParams::Bsm(_) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::MAX);
            let t_prev = contract.event_time(n - 1);
            Some(TerminalSample::draw(
                model,
                1.0,
                t_prev,
                t_end,
                STATE_FREE_TERMINAL,
                &mut rng,
            )?)
        }
        ModelParams::Mmm(_) => None,
    };

    let law1 = law_between(model, rf0, 0.0, t1)?;
    let mut samples = Vec::with_capacity(n_paths);
    for p in 0..n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let rf1 = law1.sample(&mut rng);
        let r1 = index_ratio(model, rf0, rf1, t1);
        let w1 = contract.w0 * r1 * ff1;
        let d1 = 1.0 / r1;

        let best = if n == 2 {
            let drawn;
            let sample = match &frozen {
                Some(s) => s,
                None => {
                    drawn = TerminalSample::draw(
                        model,
                        rf1,
                        t1,
                        t_end,
                        STATE_DEPENDENT_TERMINAL,
                        &mut rng,
                    )?;
                    &drawn
                }
            };
            let ff2 = contract.fee_factor(t_end - t1);
            best_final_withdrawal(
                sample,
                w1,
                contract.a0,
                contract.contractual(1),
                beta,
                ff2,
                g_end,
                gamma_points,
            )
            .0
        } else {
            let t2 = contract.event_time(2);
            let ff2 = contract.fee_factor(t2 - t1);
            let ff3 = contract.fee_factor(t_end - t2);
            // One mid-level sample per outer path, shared by all date-1
            // candidates (common random numbers keep the maximization's
            // noise in the differences small).
            let law2 = law_between(model, rf1, t1, t2)?;
            let mut mids = Vec::with_capacity(MID_LEVEL_PATHS);
            for _ in 0..MID_LEVEL_PATHS {
                let rf2 = law2.sample(&mut rng);
                let r2 = index_ratio(model, rf1, rf2, t2 - t1);
                let terminal = match &frozen {
                    Some(_) => None,
                    None => Some(TerminalSample::draw(
                        model,
                        rf2,
                        t2,
                        t_end,
                        NESTED_TERMINAL,
                        &mut rng,
                    )?),
                };
                mids.push((r2, terminal));
            }
            let g1 = contract.contractual(1);
            let g2 = contract.contractual(2);
            let mut best1 = f64::NEG_INFINITY;
            for j in 0..gamma_points {
                let gamma1 = contract.a0 * j as f64 / (gamma_points - 1) as f64;
                let w_post = (w1 - gamma1).max(0.0);
                let a_post = contract.a0 - gamma1;
                let mut acc = KahanSum::new();
                for (r2, terminal) in &mids {
                    let w2 = w_post * r2 * ff2;
                    let sample = terminal.as_ref().or(frozen.as_ref()).expect("one source");
                    let inner =
                        best_final_withdrawal(sample, w2, a_post, g2, beta, ff3, g_end,
                            gamma_points)
                        .0;
                    acc.add(inner / r2);
                }
                let value = net_cash(gamma1, g1, beta) + acc.value() / MID_LEVEL_PATHS as f64;
                if value > best1 {
                    best1 = value;
                }
            }
            best1
        };
        samples.push(d1 * best);
    }
    summarize(&samples, seed)
}

/// One fixed toy contract for the regression corpus, with the oracle
/// sampling effort tuned to its cost profile.
pub struct ToyInstance {
    pub name: &'static str,
    pub model: ModelParams,
    pub contract: ContractSpec,
    /// Initial risk-factor level.
    pub rf0: f64,
    pub seed: u64,
    /// Paths for the static-schedule oracle.
    pub mc_paths: usize,
    /// Outer paths for the brute-force dynamic oracle.
    pub dp_paths: usize,
    /// Withdrawal-grid density per event for the brute force.
    pub gamma_points: usize,
}

/// The fixed 5 + 5 toy corpus: small contracts under both models covering
/// one- to three-event horizons, low and high volatility/mean-reversion,
/// fee drag, and the full penalty range (including `beta = 1`, where
/// exceeding the contractual amount is never strictly optimal, and
/// `beta = 0`, where the penalty vanishes).
pub fn toy_corpus() -> Vec<ToyInstance> {
    let bsm = |sigma: f64| ModelParams::Bsm(BsmParams::new(sigma).expect("valid sigma"));
    let mmm = |eta: f64| ModelParams::Mmm(MmmParams::new(2.857, eta).expect("valid eta"));
    let annual = |years: usize, beta: f64, fee: f64| {
        ContractSpec::annual(years, 1.0, beta, fee, 0.0).expect("valid toy contract")
    };
    vec![
        ToyInstance {
            name: "bsm-one-event",
            model: bsm(0.2),
            contract: annual(1, 0.1, 0.0),
            rf0: 1.0,
            seed: 1101,
            mc_paths: 400_000,
            dp_paths: 400_000,
            gamma_points: 1001,
        },
        ToyInstance {
            name: "bsm-two-event",
            model: bsm(0.2),
            contract: annual(2, 0.1, 0.0),
            rf0: 1.0,
            seed: 1102,
            mc_paths: 400_000,
            dp_paths: 32_000,
            gamma_points: 1001,
        },
        ToyInstance {
            name: "bsm-high-vol-fee",
            model: bsm(0.35),
            contract: ContractSpec::new(
                vec![0.0, 1.0, 2.0],
                vec![0.4, 0.4],
                0.3,
                0.01,
                0.0,
                1.0,
                0.8,
            )
            .expect("valid toy contract"),
            rf0: 1.0,
            seed: 1103,
            mc_paths: 400_000,
            dp_paths: 32_000,
            gamma_points: 1001,
        },
        ToyInstance {
            name: "bsm-full-penalty",
            model: bsm(0.25),
            contract: annual(2, 1.0, 0.0),
            rf0: 1.0,
            seed: 1104,
            mc_paths: 400_000,
            dp_paths: 32_000,
            gamma_points: 1001,
        },
        ToyInstance {
            name: "bsm-three-event",
            model: bsm(0.2),
            contract: annual(3, 0.1, 0.0),
            rf0: 1.0,
            seed: 1105,
            mc_paths: 200_000,
            dp_paths: 500,
            gamma_points: 41,
        },
        ToyInstance {
            name: "mmm-one-event",
            model: mmm(0.0435),
            contract: annual(1, 0.1, 0.0),
            rf0: 0.6,
            seed: 2101,
            mc_paths: 300_000,
            dp_paths: 300_000,
            gamma_points: 1001,
        },
        ToyInstance {
            name: "mmm-two-event",
            model: mmm(0.0435),
            contract: annual(2, 0.1, 0.0),
            rf0: 1.0,
            seed: 2102,
            mc_paths: 300_000,
            dp_paths: 20_000,
            gamma_points: 1001,
        },
        ToyInstance {
            name: "mmm-fast-reversion",
            model: mmm(0.1),
            contract: ContractSpec::new(
                vec![0.0, 1.0, 2.0],
                vec![0.6, 0.6],
                0.2,
                0.005,
                0.0,
                1.2,
                1.2,
            )
            .expect("valid toy contract"),
            rf0: 0.5,
            seed: 2103,
            mc_paths: 300_000,
            dp_paths: 20_000,
            gamma_points: 1001,
        },
        ToyInstance {
            name: "mmm-full-penalty",
            model: mmm(0.0435),
            contract: annual(2, 1.0, 0.0),
            rf0: 2.0,
            seed: 2104,
            mc_paths: 300_000,
            dp_paths: 20_000,
            gamma_points: 1001,
        },
        ToyInstance {
            name: "mmm-no-penalty",
            model: mmm(0.05),
            contract: annual(2, 0.0, 0.0),
            rf0: 1.0,
            seed: 2105,
            mc_paths: 300_000,
            dp_paths: 20_000,
            gamma_points: 1001,
        },
    ]
}

/// One lattice-vs-oracle comparison from the corpus run.
#[derive(Debug, Clone)]
pub struct CorpusRow {
    pub instance: &'static str,
    /// `"static"` or `"dynamic"`.
    pub strategy: &'static str,
    /// Lattice value at inception.
    pub lattice: f64,
    pub oracle: McEstimate,
    /// `max(3 SE, 0.5% of the lattice value)`, scaled.
    pub tolerance: f64,
    pub pass: bool,
}

/// Run one corpus instance: compare the lattice static value against the
/// simulation oracle (equal-amount schedule) and the lattice dynamic value
/// against the brute-force oracle, each within
/// `max(3 standard errors, 0.5%) * tolerance_scale`. Returns the two rows.
pub fn run_instance(toy: &ToyInstance, tolerance_scale: f64) -> Result<Vec<CorpusRow>> {
    if !(tolerance_scale > 0.0) || !tolerance_scale.is_finite() {
        return Err(EngineError::invalid(format!(
            "the tolerance scale must be positive and finite, got {tolerance_scale}"
        )));
    }
    let options = PricingOptions {
        keep_grids: false,
        keep_policy: false,
        ..PricingOptions::default()
    };
    let spec = GridSpec::default_for(toy.model.kind(), &toy.contract);
    let n = toy.contract.n_events();
    let schedule = vec![toy.contract.a0 / n as f64; n - 1];

    let static_lattice = price_with_options(
        &toy.model,
        &toy.contract,
        &spec,
        &Strategy::Static(schedule.clone()),
        toy.rf0,
        options,
    )?
    .v0;
    let static_oracle = mc_static_price(
        &toy.model,
        &toy.contract,
        &schedule,
        toy.rf0,
        toy.mc_paths,
        toy.seed,
    )?;

    let dynamic_lattice = price_with_options(
        &toy.model,
        &toy.contract,
        &spec,
        &Strategy::Dynamic,
        toy.rf0,
        options,
    )?
    .v0;
    let dynamic_oracle = exhaustive_small_dp(
        &toy.model,
        &toy.contract,
        toy.rf0,
        toy.gamma_points,
        toy.dp_paths,
        toy.seed + 17,
    )?;

    Ok(vec![
        compare(toy, "static", static_lattice, static_oracle, tolerance_scale),
        compare(toy, "dynamic", dynamic_lattice, dynamic_oracle, tolerance_scale),
    ])
}

/// Run the full toy corpus through [`run_instance`].
pub fn run_toy_corpus(tolerance_scale: f64) -> Result<Vec<CorpusRow>> {
    let mut rows = Vec::new();
    for toy in toy_corpus() {
        rows.extend(run_instance(&toy, tolerance_scale)?);
    }
    Ok(rows)
}

fn compare(
    toy: &ToyInstance,
    strategy: &'static str,
    lattice: f64,
    oracle: McEstimate,
    scale: f64,
) -> CorpusRow {
    let tolerance = (3.0 * oracle.standard_error).max(0.005 * lattice.abs()) * scale;
    let pass = (lattice - oracle.mean).abs() <= tolerance;
    if !pass {
        log::warn!(
            "corpus instance {} ({strategy}): lattice {lattice} vs oracle {} \
             (se {}) exceeds tolerance {tolerance}",
            toy.name,
            oracle.mean,
            oracle.standard_error,
        );
    }
    CorpusRow {
        instance: toy.name,
        strategy,
        lattice,
        oracle,
        tolerance,
        pass,
    }
}
