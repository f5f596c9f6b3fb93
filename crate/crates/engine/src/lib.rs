//! Pricing, hedging, and backtesting engine for variable annuities with
//! guaranteed minimum withdrawal benefits (GMWB).
//!
//! The engine prices the same contract under two market models:
//!
//! * **Black-Scholes** (`Bsm`): geometric Brownian motion for the discounted
//!   index, priced under the usual risk-neutral measure.
//! * **Minimal Market Model** (`Mmm`): a time-inhomogeneous squared Bessel
//!   process of dimension four for the discounted index, priced under the
//!   real-world measure with the index itself as numeraire (benchmark
//!   approach). No equivalent risk-neutral measure exists for this model;
//!   the stochastic discount factor is `S(t)/S(u)`, a strict supermartingale.
//!
//! Everything is expressed in units of the savings account: input index
//! series are discounted, so "dollar" quantities below are savings-account
//! deflated and no explicit interest rate appears anywhere.
//!
//! Module map:
//!
//! * [`market`]: model parameters, exact transition laws, stochastic
//!   discount factors, parameter estimation, path simulation, and the
//!   special functions (Bessel `I1`, non-central chi-squared) they need.
//! * [`contract`]: GMWB contract mechanics (withdrawal jumps, fee drag,
//!   cash flows, terminal liquidation).
//! * [`pricer`]: backward-induction solver on a tensor grid for the optimal
//!   (or a fixed static) withdrawal strategy.
//! * [`hedging`]: delta computation by central differences and a
//!   self-financing reserve ledger.
//! * [`backtest`]: historical series ingestion, scenario assembly
//!   (provider model x policyholder behaviour), and report emission.
//! * [`validation`]: slow, independent Monte Carlo oracles used to check
//!   the grid solver, plus the fixed toy-instance corpus.
//! * [`numerics`]: generic helpers (Gauss-Hermite rules, compensated
//!   summation, adaptive Simpson) shared by the above.

pub mod backtest;
pub mod contract;
pub mod hedging;
mod error;
pub mod market;
pub mod numerics;
pub mod pricer;
pub mod series;
pub mod validation;

pub use error::{EngineError, Result};
